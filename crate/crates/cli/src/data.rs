//! Locating and loading the artifacts of earlier runs.

use std::path::{Path, PathBuf};

use rwlab_core::datasim::{HiddenTruth, SimConfig};
use rwlab_core::io;
use rwlab_core::trainer::{Method, TrainData};
use serde::{Deserialize, Serialize};

use crate::config::LabConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{scan, RunManifest};

pub const ORIGINALS: &str = "originals.csv";
pub const POOL: &str = "pool.csv";
pub const TEST: &str = "test.csv";
pub const METRICS: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const WEIGHTS: &str = "weights.csv";
pub const SUMMARY: &str = "summary.json";

/// End-of-run numbers of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub seed: u64,
    pub expansion_ratio: usize,
    pub iterations: usize,
    pub iterations_done: usize,
    pub finished: bool,
    /// Empirical risk and accuracy on the training originals.
    pub train_risk: f64,
    pub train_accuracy: f64,
    pub test_risk: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Simulation run under `dir` whose `[sim]` section equals `sim`.
pub fn find_data(dir: &Path, sim: &SimConfig) -> CliResult<Option<PathBuf>> {
    let want = serde_json::to_value(sim).expect("sim config serializes");
    Ok(scan(dir)?
        .into_iter()
        .find(|(_, m)| m.command == "simulate" && m.config.get("sim") == Some(&want))
        .map(|(p, _)| p))
}

/// Simulation runs for every seed, or an input error naming the missing ones.
pub fn require_data(dir: &Path, cfg: &LabConfig, seeds: &[u64]) -> CliResult<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for &s in seeds {
        match find_data(dir, &cfg.for_seed(s).sim)? {
            Some(p) => found.push(p),
            None => missing.push(s),
        }
    }
    if missing.is_empty() {
        return Ok(found);
    }
    let list: Vec<String> = missing.iter().map(|s| s.to_string()).collect();
    Err(CliError::input(format!(
        "no simulated data in {} matches this config for seed(s) {}; run `rwlab simulate` with the same config first",
        dir.display(),
        list.join(", ")
    )))
}

pub fn load_data(run: &Path, sim: &SimConfig) -> rwlab_core::Result<TrainData> {
    let originals = io::read_originals(&run.join(ORIGINALS), sim.classes)?;
    let pool = io::read_pool(&run.join(POOL), &originals, sim.expansion_ratio)?;
    let test = run.join(TEST);
    let test = if test.is_file() { Some(io::read_originals(&test, sim.classes)?) } else { None };
    Ok(TrainData { originals, pool, test })
}

/// Hidden noise flags of a simulation run, if its pool file carries them.
pub fn load_truth(run: &Path, sim: &SimConfig) -> Option<HiddenTruth> {
    io::read_hidden_truth(&run.join(POOL), sim.classes).ok()
}

/// Finished training run of `method` with exactly this configuration.
pub fn find_train(dir: &Path, run_id: &str, method: Method) -> CliResult<Option<(PathBuf, RunManifest, TrainSummary)>> {
    for (p, m) in scan(dir)? {
        if m.command == "train" && m.run_id == run_id && m.mode.as_deref() == Some(method.name()) {
            let s: TrainSummary = io::read_json(&p.join(SUMMARY))?;
            if s.finished {
                return Ok(Some((p, m, s)));
            }
        }
    }
    Ok(None)
}

/// Completed and finished training runs under `dir`, any configuration.
pub fn all_train_runs(dir: &Path) -> CliResult<Vec<(PathBuf, RunManifest, TrainSummary)>> {
    let mut out = Vec::new();
    for (p, m) in scan(dir)? {
        if m.command == "train" && m.mode.as_deref() != Some("ablation") {
            let s: TrainSummary = io::read_json(&p.join(SUMMARY))?;
            if s.finished {
                out.push((p, m, s));
            }
        }
    }
    Ok(out)
}
