//! Output directory bookkeeping and `manifest.json`.
//!
//! The manifest lists every file of a run except itself, with paths relative
//! to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    /// `marginal`, `report`, `summary`, `coupling`, `trajectories` or `bundle`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constrained: Option<bool>,
}

impl FileEntry {
    pub fn new(path: impl Into<String>, kind: &str) -> Self {
        Self { path: path.into(), kind: kind.into(), step: None, time: None, constrained: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub solver: String,
    pub seed: u64,
    pub dim: usize,
    pub files: Vec<FileEntry>,
}

pub struct Artifacts {
    dir: PathBuf,
    manifest: Manifest,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl Artifacts {
    pub fn create(dir: &Path, solver: &str, seed: u64, dim: usize) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = Manifest { schema_version: crate::config::SCHEMA_VERSION, solver: solver.into(), seed, dim, files: Vec::new() };
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn write(&mut self, entry: FileEntry, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(&entry.path);
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.manifest.files.push(entry);
        Ok(())
    }

    /// Writes the manifest and returns its path.
    pub fn finish(self) -> Result<(PathBuf, Manifest), CliError> {
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok((path, self.manifest))
    }
}

/// Inserts `# comment` lines after the first line of `csv`.
pub fn after_first_line(csv: &str, comments: &[String]) -> String {
    let (head, rest) = csv.split_once('\n').unwrap_or((csv, ""));
    let mut s = String::with_capacity(csv.len() + 64);
    s.push_str(head);
    s.push('\n');
    for c in comments {
        s.push_str("# ");
        s.push_str(c);
        s.push('\n');
    }
    s.push_str(rest);
    s
}

/// Prefixes `# comment` lines.
pub fn with_header(comments: &[String], body: &str) -> String {
    let mut s = String::new();
    for c in comments {
        s.push_str("# ");
        s.push_str(c);
        s.push('\n');
    }
    s.push_str(body);
    s
}

/// `key,value` lines.
pub fn summary_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        s.push_str(k);
        s.push(',');
        s.push_str(v);
        s.push('\n');
    }
    s
}
