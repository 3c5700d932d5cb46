use std::path::{Path, PathBuf};

use rwlab_core::datasim::SimConfig;
use rwlab_core::io;
use rwlab_core::models::init_params;
use rwlab_core::theory::{
    check_representability, verify_generalization_trend, verify_risk_decomposition, verify_theorem_4_1,
    verify_theorem_4_3, verify_theorem_4_5, weight_noise_separation, DecompositionInput, DescentInput, DescentMode,
    OrderingInput, Predictor, SeedRisk, Theorem41Input, TrendInput, VerificationReport,
};
use rwlab_core::trainer::{Checkpoint, Method, TrainerConfig};

use crate::config::LabConfig;
use crate::data::{find_train, load_data, load_truth, TrainSummary, CHECKPOINT, WEIGHTS};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunDir, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    Decomposition,
    T41,
    T43,
    T45,
    T44Trend,
    WeightSep,
    All,
}

impl Check {
    const EACH: [Check; 6] = [Check::Decomposition, Check::T41, Check::T43, Check::T45, Check::T44Trend, Check::WeightSep];

    pub fn name(self) -> &'static str {
        match self {
            Check::Decomposition => "decomposition",
            Check::T41 => "t41",
            Check::T43 => "t43",
            Check::T45 => "t45",
            Check::T44Trend => "t44-trend",
            Check::WeightSep => "weight-sep",
            Check::All => "all",
        }
    }

    fn needs_learned_run(self) -> bool {
        matches!(self, Check::Decomposition | Check::T45 | Check::WeightSep)
    }
}

type TrainRun = (PathBuf, RunManifest, TrainSummary);

fn data_dir(run: &TrainRun) -> CliResult<PathBuf> {
    run.1.inputs.first().map(PathBuf::from).ok_or_else(|| CliError::input(format!("{} lists no data", run.0.display())))
}

/// Runs the selected checks on the artifacts under `inputs`; the first seed
/// supplies the single-run checks and every seed enters the ordering check.
/// Returns the run directory and whether every check passed.
pub fn verify(cfg: &LabConfig, check: Check, seeds: &[u64], inputs: &Path, out: &Path) -> CliResult<(PathBuf, bool)> {
    let checks: Vec<Check> = if check == Check::All { Check::EACH.to_vec() } else { vec![check] };
    let first = seeds[0];
    let base = cfg.for_seed(first);

    let mut missing = Vec::new();
    let learned = find_train(inputs, &base.run_id(&[first]), Method::TriReWeight)?;
    if checks.iter().any(|c| c.needs_learned_run()) && learned.is_none() {
        missing.push(format!("rwlab train --mode trireweight --seed {first}"));
    }
    let mut ordering: Vec<[Option<TrainRun>; 3]> = Vec::new();
    if checks.contains(&Check::T43) {
        for &s in seeds {
            let id = cfg.for_seed(s).run_id(&[s]);
            let mut row = [None, None, None];
            for (slot, m) in row.iter_mut().zip([Method::TriReWeight, Method::Sl, Method::Nsl]) {
                *slot = find_train(inputs, &id, m)?;
                if slot.is_none() {
                    let cmd = format!("rwlab train --mode {} --seed {s}", m.name());
                    if !missing.contains(&cmd) {
                        missing.push(cmd);
                    }
                }
            }
            ordering.push(row);
        }
    }
    if let (true, Some(run)) = (checks.contains(&Check::WeightSep), &learned) {
        if load_truth(&data_dir(run)?, &base.sim).is_none() {
            missing.push(format!("rwlab simulate --seed {first}"));
        }
    }
    if !missing.is_empty() {
        return Err(CliError::input(format!(
            "verify {} is missing artifacts in {} (same config); run first:\n  {}",
            check.name(),
            inputs.display(),
            missing.join("\n  ")
        )));
    }

    let mut used: Vec<String> = learned.iter().map(|r| r.0.display().to_string()).collect();
    for row in &ordering {
        used.extend(row.iter().flatten().map(|r| r.0.display().to_string()));
    }
    used.sort();
    used.dedup();
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let label = format!("verify-{}", check.name());
    let mut run = RunDir::begin(out, &label, cfg.run_id(seeds), seeds.to_vec(), echo, used)?;
    let res = (|| -> CliResult<Vec<VerificationReport>> {
        let mut reports = Vec::new();
        for &c in &checks {
            let r = run_check(c, &base, first, learned.as_ref(), &ordering)?;
            io::write_json(&run.artifact(c.name(), &format!("reports/{}.json", c.name()))?, &r)?;
            reports.push(r);
        }
        io::write_report_summary(&run.artifact("summary", "summary.csv")?, &reports)?;
        Ok(reports)
    })();
    let (reports, path) = run.finish(res)?;
    Ok((path, reports.iter().all(|r| r.pass)))
}

fn learned_checkpoint(run: &TrainRun) -> CliResult<Checkpoint> {
    Ok(io::read_json(&run.0.join(CHECKPOINT))?)
}

fn run_check(
    check: Check,
    cfg: &LabConfig,
    seed: u64,
    learned: Option<&TrainRun>,
    ordering: &[[Option<TrainRun>; 3]],
) -> CliResult<VerificationReport> {
    let v = &cfg.verify;
    let sim: &SimConfig = &cfg.sim;
    let learned = || learned.ok_or_else(|| CliError::Internal("learned run not resolved".into()));
    Ok(match check {
        Check::Decomposition => {
            let template = init_params(sim.dim, sim.classes, &cfg.model, seed)?.0;
            let theta = learned_checkpoint(learned()?)?.theta(&template)?;
            let input = DecompositionInput { gamma: sim.gamma, n_mc: v.decomposition_n_mc, prob_floor: cfg.loss.prob_floor, seed };
            verify_risk_decomposition(sim, Predictor::Model(&theta), &input)?
        }
        Check::T41 => {
            let input = Theorem41Input {
                gamma: sim.gamma,
                n_train: v.t41_n_train,
                n_eval: v.t41_n_eval,
                n_mc: v.t41_n_mc,
                iterations: v.t41_iterations,
                eta: v.t41_eta,
                prob_floor: cfg.loss.prob_floor,
                seed,
                model: cfg.model.clone(),
            };
            verify_theorem_4_1(sim, &input)?
        }
        Check::T43 => {
            let risks = |k: usize| -> Vec<SeedRisk> {
                ordering.iter().flat_map(|row| row[k].as_ref()).map(|r| SeedRisk { seed: r.2.seed, risk: r.2.train_risk }).collect()
            };
            let representable = if v.representability {
                let run = ordering[0][0].as_ref().expect("resolved");
                let data = load_data(&data_dir(run)?, sim)?;
                Some(check_representability(&data, &cfg.trainer())?)
            } else {
                None
            };
            let majority = v.ordering_majority.unwrap_or((ordering.len() * 4).div_ceil(5));
            let input = OrderingInput { tolerance: v.ordering_tolerance, majority };
            verify_theorem_4_3(&risks(0), &risks(1), &risks(2), representable, &input)?
        }
        Check::T45 => {
            let metrics = learned_checkpoint(learned()?)?.metrics;
            let exact = if metrics.full_batch { DescentMode::Exact } else { DescentMode::Relaxed };
            let input = DescentInput {
                mode: v.descent_mode.unwrap_or(exact),
                tolerance: v.descent_tolerance,
                fraction: v.descent_fraction,
                ..DescentInput::default()
            };
            verify_theorem_4_5(&metrics, &input)?
        }
        Check::T44Trend => {
            let input = TrendInput {
                n_values: v.trend_n_values.clone(),
                seeds: v.trend_seeds.clone(),
                reference_n: v.trend_reference_n,
                n_test_per_class: v.trend_n_test_per_class,
                sim: sim.clone(),
                trainer: TrainerConfig { checkpoint_every: Some(0), ..cfg.trainer() },
            };
            verify_generalization_trend(&input)?
        }
        Check::WeightSep => {
            let run = learned()?;
            let truth = load_truth(&data_dir(run)?, sim).ok_or_else(|| CliError::input("pool has no hidden class column"))?;
            let path = run.0.join(WEIGHTS);
            let weights: Vec<f64> =
                if path.is_file() { io::read_weights(&path)?.iter().map(|w| w.weight).collect() } else { Vec::new() };
            let noisy: Vec<bool> = (0..weights.len()).map(|i| truth.is_noisy(i)).collect();
            weight_noise_separation(&weights, &noisy, v.separation_min_quality)?
        }
        Check::All => unreachable!("expanded by the caller"),
    })
}
