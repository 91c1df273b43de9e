use std::fmt::Write as _;
use std::path::Path;

use wass_splines::io::{bundle_to_csv, density_to_csv};
use wass_splines::lbfgs::LbfgsOptions;
use wass_splines::mm_sinkhorn::ChainMessages;
use wass_splines::phase_ot::{
    hermite_paths, most_likely_map, phase_cost_matrix, relative_epsilon, sinkhorn_pairwise, PairwiseOptions,
};
use wass_splines::semidiscrete::{
    init_coupled, init_quantized_middle, multiscale_solve, optimize, sd_extrapolate, sdv_objective, OptimizeReport,
    ParticleBundle, PathCost, PenaltyTarget, SdOptions, SdvProblem, Stage,
};
use wass_splines::{build_chain_kernel, sinkhorn_solve, Constraint, CostKind, SolveOptions};

use crate::artifacts::{after_first_line, summary_csv, with_header, Artifacts, FileEntry};
use crate::config::{EpsilonSpec, HermiteScenario, MmScenario, Resolved, Scenario, SdInit, SdScenario, SolverKind};
use crate::CliError;

pub fn run(r: &Resolved, out: &Path) -> Result<Artifacts, CliError> {
    match &r.scenario {
        Scenario::Multimarginal(s) => run_mm(r, s, out),
        Scenario::Hermite(s) => run_hermite(r, s, out),
        Scenario::SemiDiscrete(s) => run_sd(r, s, out),
    }
}

fn cost_name(c: CostKind) -> String {
    match c {
        CostKind::Acceleration => "acceleration".into(),
        CostKind::Speed => "speed".into(),
        CostKind::Extrapolation { lambda } => format!("extrapolation(lambda={lambda})"),
    }
}

fn run_mm(r: &Resolved, s: &MmScenario, out: &Path) -> Result<Artifacts, CliError> {
    let kernel = build_chain_kernel(&s.grid, &s.time, s.epsilon, s.cost)?;
    let constraints: Vec<Constraint> = s.constraints.iter().map(|(k, d)| Constraint::new(*k, d.clone())).collect();
    let opts = SolveOptions {
        tol: s.sinkhorn.tol,
        max_iters: s.sinkhorn.max_iters,
        log_domain: s.sinkhorn.log_domain,
        check_every: s.sinkhorn.check_every,
    };
    let (pot, rep) = sinkhorn_solve(&kernel, &constraints, &opts)?;
    log::info!("{} sweeps in {:.2?}, converged: {}", rep.iterations, rep.wall_time, rep.converged);
    let msgs = ChainMessages::compute_with(&kernel, &pot, s.sinkhorn.log_domain)?;

    let mut art = Artifacts::create(out, r.solver.name(), r.seed, s.grid.dim())?;
    let constrained: Vec<usize> = s.constraints.iter().map(|c| c.0).collect();
    for &step in &s.output_steps {
        let m = msgs.marginal(step)?;
        let t = s.time.time(step);
        let is_c = constrained.contains(&step);
        let csv = after_first_line(
            &density_to_csv(&m),
            &[
                format!("step={step},time={t},constrained={is_c}"),
                "units=probability mass per grid node".into(),
            ],
        );
        let name = format!("marginal_{step:03}.csv");
        let mut e = FileEntry::new(name, "marginal");
        e.step = Some(step);
        e.time = Some(t);
        e.constrained = Some(is_c);
        art.write(e, &csv)?;
    }
    let report = with_header(
        &[format!("sup-norm change of the log scalings, sampled every {} sweeps", s.sinkhorn.check_every)],
        &rep.to_csv(),
    );
    art.write(FileEntry::new("report.csv", "report"), &report)?;

    let cost = msgs.transport_cost()?;
    let mut rows = vec![
        ("cost", cost_name(s.cost)),
        ("epsilon", format!("{:e}", s.epsilon)),
        ("dtau", format!("{:e}", s.time.dtau())),
        ("sweeps", rep.iterations.to_string()),
        ("converged", rep.converged.to_string()),
        ("final_residual", rep.final_residual().map_or("nan".into(), |v| format!("{v:e}"))),
        ("transport_cost", format!("{cost:e}")),
    ];
    let keys: Vec<String> = constrained.iter().map(|k| format!("marginal_l1_step_{k}")).collect();
    for (k, v) in keys.iter().zip(&rep.marginal_residuals) {
        rows.push((k, format!("{v:e}")));
    }
    art.write(FileEntry::new("summary.csv", "summary"), &summary_csv(&rows))?;
    Ok(art)
}

fn run_hermite(r: &Resolved, s: &HermiteScenario, out: &Path) -> Result<Artifacts, CliError> {
    let c = phase_cost_matrix(&s.source, &s.target)?;
    let eps = match s.epsilon {
        EpsilonSpec::Absolute(e) => e,
        EpsilonSpec::Relative { relative } => relative_epsilon(&c, relative)?,
    };
    let opts = PairwiseOptions { tol: s.sinkhorn.tol, max_iters: s.sinkhorn.max_iters, check_every: s.sinkhorn.check_every };
    let (pi, rep) = sinkhorn_pairwise(&c, s.source.weights(), s.target.weights(), eps, &opts)?;
    let map = most_likely_map(&pi);
    let paths = hermite_paths(&s.source, &s.target, &map)?;

    let dim = s.source.dim();
    let mut art = Artifacts::create(out, r.solver.name(), r.seed, dim)?;
    art.write(
        FileEntry::new("coupling.csv", "coupling"),
        &with_header(&[format!("entropic coupling, epsilon={eps:e}")], &pi.to_csv()),
    )?;
    let mut traj = trajectory_header(dim);
    for (j, p) in paths.iter().enumerate() {
        for k in 0..s.samples {
            let t = k as f64 / (s.samples - 1) as f64;
            push_sample(&mut traj, j, t, &p.eval(t).0);
        }
    }
    art.write(
        FileEntry::new("trajectories.csv", "trajectories"),
        &with_header(&["most likely Hermite paths, source at t=0, target at t=1".into()], &traj),
    )?;
    art.write(
        FileEntry::new("report.csv", "report"),
        &with_header(&["sup-norm change of the log scalings".into()], &rep.to_csv()),
    )?;
    let map_energy: f64 = paths.iter().map(|p| p.energy()).sum();
    let rows = [
        ("epsilon", format!("{eps:e}")),
        ("iterations", rep.iterations.to_string()),
        ("converged", rep.converged.to_string()),
        ("transport_cost", format!("{:e}", pi.cost(&c))),
        ("entropy", format!("{:e}", pi.entropy())),
        ("entropic_objective", format!("{:e}", pi.entropic_objective(&c, eps))),
        ("map_energy", format!("{map_energy:e}")),
    ];
    art.write(FileEntry::new("summary.csv", "summary"), &summary_csv(&rows))?;
    Ok(art)
}

fn trajectory_header(dim: usize) -> String {
    let mut s = String::from("particle,t");
    for a in 0..dim {
        write!(s, ",x{a}").unwrap();
    }
    s.push('\n');
    s
}

fn push_sample(s: &mut String, j: usize, t: f64, x: &[f64]) {
    write!(s, "{j},{t:e}").unwrap();
    for v in x {
        write!(s, ",{v:e}").unwrap();
    }
    s.push('\n');
}

fn sample_bundle(b: &ParticleBundle, cost: PathCost, per_segment: usize) -> Result<String, CliError> {
    let times = b.times();
    let mut s = trajectory_header(b.dim());
    for j in 0..b.particles() {
        let path = b.path(j)?;
        for i in 0..times.len() - 1 {
            let last = i + 2 == times.len();
            let n = if last { per_segment + 1 } else { per_segment };
            for k in 0..n {
                let f = k as f64 / per_segment as f64;
                let t = times[i] + f * (times[i + 1] - times[i]);
                let x = match cost {
                    PathCost::Spline => path.eval(t).0,
                    PathCost::Speed => {
                        let (a, c) = (&b.positions()[i][j], &b.positions()[i + 1][j]);
                        a.iter().zip(c).map(|(a, c)| a + f * (c - a)).collect()
                    }
                };
                push_sample(&mut s, j, t, &x);
            }
        }
    }
    Ok(s)
}

fn run_sd(r: &Resolved, s: &SdScenario, out: &Path) -> Result<Artifacts, CliError> {
    let times: Vec<f64> = s.targets.iter().map(|t| t.time).collect();
    let targets = s
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| PenaltyTarget::from_density(i, &t.density, s.particles, t.epsilon))
        .collect::<wass_splines::Result<Vec<_>>>()?;
    let opts = SdOptions {
        lbfgs: LbfgsOptions { memory: s.memory, gtol: s.gtol, max_iters: s.max_iters, ..LbfgsOptions::default() },
        max_rounds: s.max_rounds,
    };
    let mut problem = SdvProblem::new(targets.clone());
    problem.path_cost = s.path_cost;
    problem.penalty_mode = s.penalty;
    let (bundle, reports): (ParticleBundle, Vec<OptimizeReport>) = if r.solver == SolverKind::SdExtrapolate {
        let delta = times[1] - times[0];
        let (b, rep) = sd_extrapolate(&targets[0], &targets[1], delta, &opts)?;
        problem.geodesic_weight = 1.0;
        let t0 = times[0];
        let shifted = ParticleBundle::new(
            b.times().iter().map(|t| t + t0).collect(),
            b.positions().to_vec(),
            b.velocities().to_vec(),
        )?;
        (shifted, vec![rep])
    } else {
        let b0 = match &s.init {
            SdInit::QuantizedMiddle(m) => init_quantized_middle(&times, &targets[*m].points, r.seed)?,
            SdInit::Coupled => {
                let clouds: Vec<Vec<Vec<f64>>> = targets.iter().map(|t| t.points.clone()).collect();
                init_coupled(&times, &clouds)?
            }
            SdInit::Warm { positions, velocities } => {
                ParticleBundle::new(times.clone(), positions.clone(), velocities.clone())?
            }
        };
        if s.stages.is_empty() {
            let (b, rep) = optimize(&b0, &problem, &opts)?;
            (b, vec![rep])
        } else {
            let stages: Vec<Stage> =
                s.stages.iter().map(|(e, n)| Stage { epsilons: e.clone(), noise: *n }).collect();
            let (b, reps) = multiscale_solve(&b0, &problem, &stages, r.seed, &opts)?;
            if let Some((last, _)) = s.stages.last() {
                for (t, e) in problem.targets.iter_mut().zip(last) {
                    t.epsilon = *e;
                }
            }
            (b, reps)
        }
    };
    let last = reports.last().expect("at least one report");
    log::info!("final objective {:e} after {} quasi-Newton iterations", last.final_objective(), last.iterations);

    let mut art = Artifacts::create(out, r.solver.name(), r.seed, bundle.dim())?;
    let units = format!("knot times {:?}, particles {}", bundle.times(), bundle.particles());
    art.write(
        FileEntry::new("bundle.csv", "bundle"),
        &with_header(&[units.clone()], &bundle_to_csv(bundle.positions(), bundle.velocities())),
    )?;
    let traj = sample_bundle(&bundle, s.path_cost, s.samples)?;
    art.write(FileEntry::new("trajectories.csv", "trajectories"), &with_header(&[units], &traj))?;
    let mut report = String::from("stage,round,objective\n");
    for (k, rep) in reports.iter().enumerate() {
        for (i, v) in rep.objective_history.iter().enumerate() {
            writeln!(report, "{k},{i},{v:e}").unwrap();
        }
    }
    art.write(
        FileEntry::new("report.csv", "report"),
        &with_header(&["objective after each matching round".into()], &report),
    )?;
    let objective = sdv_objective(&bundle, &problem)?;
    let mut spline = problem.clone();
    spline.path_cost = PathCost::Spline;
    let spline_objective = sdv_objective(&bundle.with_optimal_velocities()?, &spline)?;
    let iterations: usize = reports.iter().map(|r| r.iterations).sum();
    let rows = [
        ("objective", format!("{objective:e}")),
        ("spline_objective", format!("{spline_objective:e}")),
        ("iterations", iterations.to_string()),
        ("rounds", reports.iter().map(|r| r.rounds).sum::<usize>().to_string()),
        ("status", format!("{:?}", last.status)),
        ("grad_norm", format!("{:e}", last.grad_norm)),
        ("matching_stable", last.matching_stable.to_string()),
    ];
    art.write(FileEntry::new("summary.csv", "summary"), &summary_csv(&rows))?;
    Ok(art)
}
