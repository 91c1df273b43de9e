use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "wass-splines", version, about = "Spline and geodesic interpolation of densities in Wasserstein space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario without solving it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = wass_splines_cli::configure_threads().and_then(|()| match cli.command {
        Command::Run { config, out } => {
            let (manifest, m) = wass_splines_cli::run(&config, out.as_deref())?;
            println!("wrote {} files, manifest {}", m.files.len(), manifest.display());
            Ok(())
        }
        Command::Validate { config } => {
            wass_splines_cli::load(&config)?;
            println!("ok");
            Ok(())
        }
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
