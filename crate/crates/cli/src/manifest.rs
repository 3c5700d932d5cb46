//! Run manifests and run directories.
//!
//! Every command writes into `<out>/<label>-<run id prefix>/`. The manifest
//! is written before any artifact, lists each file the run produced, and is
//! finalized with the end time and status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const VERSION: &str = concat!("rwlab ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub mode: Option<String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub config: serde_json::Value,
    /// Run directories this run read from.
    pub inputs: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub status: Status,
    pub error: Option<String>,
    /// Role to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    let path = dir.join(MANIFEST);
    let text = io_at(&path, std::fs::read_to_string(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// A run directory whose manifest is kept on disk as artifacts are added.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Creates (or reuses) the directory and writes the initial manifest.
    /// Files listed by an earlier manifest in the same directory are removed
    /// first so that none is left unaccounted for.
    pub fn begin(
        out: &Path,
        label: &str,
        run_id: String,
        seeds: Vec<u64>,
        config: serde_json::Value,
        inputs: Vec<String>,
    ) -> CliResult<RunDir> {
        let path = out.join(format!("{label}-{}", &run_id[..12]));
        io_at(&path, std::fs::create_dir_all(&path))?;
        if let Ok(old) = read_manifest(&path) {
            for rel in old.artifacts.values() {
                let _ = std::fs::remove_file(path.join(rel));
            }
        }
        let (command, mode) = match label.split_once('-') {
            Some((c, m)) => (c.to_owned(), Some(m.to_owned())),
            None => (label.to_owned(), None),
        };
        let manifest = RunManifest {
            run_id,
            command,
            mode,
            seeds,
            version: VERSION.to_owned(),
            config,
            inputs,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            status: Status::Running,
            error: None,
            artifacts: BTreeMap::new(),
        };
        let dir = RunDir { path, manifest };
        dir.save()?;
        Ok(dir)
    }

    fn save(&self) -> CliResult<()> {
        let path = self.path.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        io_at(&path, std::fs::write(&path, text + "\n"))
    }

    /// Registers `rel` under `role` and returns its full path, creating
    /// parent directories.
    pub fn artifact(&mut self, role: &str, rel: &str) -> CliResult<PathBuf> {
        let full = self.path.join(rel);
        if let Some(parent) = full.parent() {
            io_at(parent, std::fs::create_dir_all(parent))?;
        }
        self.manifest.artifacts.insert(role.to_owned(), rel.to_owned());
        Ok(full)
    }

    /// Records the end time and the outcome.
    pub fn finish<T>(mut self, result: CliResult<T>) -> CliResult<(T, PathBuf)> {
        self.manifest.finished_unix_ms = Some(now_ms());
        match &result {
            Ok(_) => self.manifest.status = Status::Complete,
            Err(e) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.save()?;
        result.map(|v| (v, self.path))
    }
}

/// Completed runs under `dir`: `dir` itself when it holds a manifest,
/// otherwise its immediate subdirectories, sorted by path.
pub fn scan(dir: &Path) -> CliResult<Vec<(PathBuf, RunManifest)>> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("{} is not a directory", dir.display())));
    }
    let mut dirs = Vec::new();
    if dir.join(MANIFEST).is_file() {
        dirs.push(dir.to_path_buf());
    } else {
        for e in io_at(dir, std::fs::read_dir(dir))? {
            let p = io_at(dir, e)?.path();
            if p.join(MANIFEST).is_file() {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let m = read_manifest(&d)?;
        if m.status == Status::Complete {
            out.push((d, m));
        }
    }
    Ok(out)
}

/// Files under a run directory that its manifest does not list.
pub fn orphans(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let m = read_manifest(dir)?;
    let listed: Vec<PathBuf> = m.artifacts.values().map(|r| dir.join(r)).collect();
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in io_at(&d, std::fs::read_dir(&d))? {
            let p = io_at(&d, e)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p != dir.join(MANIFEST) && !listed.contains(&p) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
