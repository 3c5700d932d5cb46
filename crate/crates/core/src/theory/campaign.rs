//! Paired runs of TriReWeight and both baselines on shared data.

use rayon::prelude::*;

use super::separation::noise_probe;
use crate::datasim::{augment, make_original, make_test, HiddenTruth, SimConfig};
use crate::error::Result;
use crate::trainer::{evaluate, train, Method, RunOptions, TrainData, TrainOutcome, TrainerConfig};

/// Originals, pool and test set for one simulator configuration, plus the
/// hidden noise flags kept apart from the training inputs.
pub fn build_data(sim: &SimConfig) -> Result<(TrainData, HiddenTruth)> {
    let originals = make_original(sim)?;
    let (pool, truth) = augment(&originals, sim)?;
    let test = make_test(sim)?;
    Ok((TrainData { originals, pool, test: Some(test) }, truth))
}

pub struct PairedRun {
    pub seed: u64,
    pub truth: HiddenTruth,
    pub learned: TrainOutcome,
    pub sl: TrainOutcome,
    pub nsl: TrainOutcome,
    /// Final empirical risk on the originals.
    pub learned_risk: f64,
    pub sl_risk: f64,
    pub nsl_risk: f64,
}

/// Simulates data with `seed` and trains all three methods with it.
pub fn run_paired(sim: &SimConfig, trainer: &TrainerConfig, seed: u64) -> Result<PairedRun> {
    let sim = SimConfig { seed, ..sim.clone() };
    let cfg = TrainerConfig { seed, ..trainer.clone() };
    let (data, truth) = build_data(&sim)?;
    let learned = {
        let probe = noise_probe(&truth);
        train(Method::TriReWeight, &data, &cfg, RunOptions { probe: Some(&probe), ..RunOptions::default() })?
    };
    let sl = train(Method::Sl, &data, &cfg, RunOptions::default())?;
    let nsl = train(Method::Nsl, &data, &cfg, RunOptions::default())?;
    let risk = |o: &TrainOutcome| evaluate(&o.theta, &data.originals, cfg.loss.prob_floor).map(|e| e.risk);
    Ok(PairedRun {
        seed,
        learned_risk: risk(&learned)?,
        sl_risk: risk(&sl)?,
        nsl_risk: risk(&nsl)?,
        truth,
        learned,
        sl,
        nsl,
    })
}

pub fn run_campaign(sim: &SimConfig, trainer: &TrainerConfig, seeds: &[u64]) -> Result<Vec<PairedRun>> {
    seeds.par_iter().map(|&s| run_paired(sim, trainer, s)).collect()
}
