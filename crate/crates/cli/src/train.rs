use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rwlab_core::io;
use rwlab_core::losses::SupervisionFlags;
use rwlab_core::models::init_params;
use rwlab_core::theory::noise_probe;
use rwlab_core::trainer::{
    self, evaluate, run_ablation_matrix, summarize_ablation, Checkpoint, Method, RunOptions,
};

use crate::config::LabConfig;
use crate::data::{load_data, load_truth, require_data, TrainSummary, CHECKPOINT, METRICS, SUMMARY, WEIGHTS};
use crate::error::{io_at, CliError, CliResult};
use crate::manifest::RunDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Trireweight,
    Sl,
    Nsl,
    Ablation,
}

impl Mode {
    fn method(self) -> Option<Method> {
        match self {
            Mode::Trireweight => Some(Method::TriReWeight),
            Mode::Sl => Some(Method::Sl),
            Mode::Nsl => Some(Method::Nsl),
            Mode::Ablation => None,
        }
    }
}

pub struct TrainRequest<'a> {
    pub mode: Mode,
    pub data: &'a Path,
    pub out: &'a Path,
    pub seeds: Vec<u64>,
    pub resume: Option<&'a Path>,
    pub stop_after: Option<usize>,
}

pub fn train(cfg: &LabConfig, req: TrainRequest<'_>) -> CliResult<Vec<PathBuf>> {
    let resume = match req.resume {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::input(format!("checkpoint {} not found", p.display())));
            }
            Some(io::read_json::<Checkpoint>(p)?)
        }
        None => None,
    };
    let mut seeds = req.seeds;
    if let Some(ck) = &resume {
        if req.mode == Mode::Ablation {
            return Err(CliError::input("ablation runs cannot be resumed"));
        }
        if seeds.len() != 1 || seeds[0] != ck.seed {
            // a checkpoint pins its seed
            seeds = vec![ck.seed];
        }
    }
    let data = require_data(req.data, cfg, &seeds)?;
    let Some(method) = req.mode.method() else {
        return ablation(cfg, &seeds, &data, req.out).map(|p| vec![p]);
    };
    let jobs: Vec<(u64, &PathBuf)> = seeds.iter().copied().zip(&data).collect();
    let results: Vec<CliResult<PathBuf>> = jobs
        .par_iter()
        .map(|&(seed, dir)| train_one(&cfg.for_seed(seed), seed, method, dir, req.out, resume.clone(), req.stop_after))
        .collect();
    results.into_iter().collect()
}

fn absolute(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn train_one(
    cfg: &LabConfig,
    seed: u64,
    method: Method,
    data_dir: &Path,
    out: &Path,
    resume: Option<Checkpoint>,
    stop_after: Option<usize>,
) -> CliResult<PathBuf> {
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let label = format!("train-{}", method.name());
    let mut run = RunDir::begin(out, &label, cfg.run_id(&[seed]), vec![seed], echo, vec![absolute(data_dir)])?;
    let res = (|| -> CliResult<()> {
        let data = load_data(data_dir, &cfg.sim)?;
        let truth = load_truth(data_dir, &cfg.sim);
        let probe = truth.as_ref().map(noise_probe);
        let tcfg = cfg.trainer();

        let base = run.path.clone();
        let mut written: Vec<(usize, String)> = Vec::new();
        let mut save = |ck: &Checkpoint| -> rwlab_core::Result<()> {
            std::fs::create_dir_all(base.join("checkpoints"))?;
            let rel = format!("checkpoints/t{:06}.json", ck.t);
            io::write_json(&base.join(&rel), ck)?;
            written.push((ck.t, rel));
            Ok(())
        };
        let opts = RunOptions {
            probe: probe.as_ref().map(|p| p as &(dyn Fn(&[f64]) -> (Option<f64>, Option<f64>) + Sync)),
            on_checkpoint: Some(&mut save),
            stop_after,
            resume,
        };
        let outcome = trainer::train(method, &data, &tcfg, opts);
        for (t, rel) in &written {
            run.artifact(&format!("checkpoint_t{t}"), rel)?;
        }
        let outcome = outcome?;

        io::write_metrics(&run.artifact("metrics", METRICS)?, &outcome.metrics.records)?;
        let template = init_params(data.originals.dim, data.originals.classes, &tcfg.model, seed)?.1;
        let alpha = outcome.alpha.as_ref().unwrap_or(&template);
        let ck = trainer::checkpoint(method, &tcfg, outcome.iterations_done, &outcome.theta, alpha, &outcome.metrics);
        io::write_json(&run.artifact("checkpoint", CHECKPOINT)?, &ck)?;
        if let Some(w) = &outcome.metrics.weights {
            io::write_weights(&run.artifact("weights", WEIGHTS)?, w)?;
        }
        let floor = tcfg.loss.prob_floor;
        let train_eval = evaluate(&outcome.theta, &data.originals, floor)?;
        let test_eval = data.test.as_ref().map(|t| evaluate(&outcome.theta, t, floor)).transpose()?;
        let summary = TrainSummary {
            method,
            seed,
            expansion_ratio: cfg.sim.expansion_ratio,
            iterations: tcfg.iterations,
            iterations_done: outcome.iterations_done,
            finished: outcome.finished(&tcfg),
            train_risk: train_eval.risk,
            train_accuracy: train_eval.accuracy,
            test_risk: test_eval.map(|e| e.risk),
            test_accuracy: test_eval.map(|e| e.accuracy),
        };
        io::write_json(&run.artifact("summary", SUMMARY)?, &summary)?;
        let path = run.artifact("config", "config.toml")?;
        io_at(&path, std::fs::write(&path, cfg.to_toml()))
    })();
    run.finish(res).map(|(_, p)| p)
}

/// Every supervision combination on every seed, as one run.
fn ablation(cfg: &LabConfig, seeds: &[u64], data: &[PathBuf], out: &Path) -> CliResult<PathBuf> {
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let inputs = data.iter().map(|p| absolute(p)).collect();
    let mut run = RunDir::begin(out, "train-ablation", cfg.run_id(seeds), seeds.to_vec(), echo, inputs)?;
    let res = (|| -> CliResult<()> {
        let data_for_seed = |seed: u64| {
            let i = seeds.iter().position(|&s| s == seed).expect("known seed");
            load_data(&data[i], &cfg.for_seed(seed).sim)
        };
        let cells = run_ablation_matrix(&data_for_seed, &cfg.trainer(), &SupervisionFlags::all_combos(), seeds)?;
        let path = run.artifact("ablation", "ablation.csv")?;
        let mut w = csv_writer(&path)?;
        csv_row(&mut w, &path, ["combo", "seed", "test_accuracy", "error"])?;
        for c in &cells {
            let acc = c.test_accuracy.map_or(String::new(), io::fmt_real);
            csv_row(&mut w, &path, [c.combo.clone(), c.seed.to_string(), acc, c.error.clone().unwrap_or_default()])?;
        }
        io_at(&path, w.flush())?;
        let path = run.artifact("ablation_summary", "ablation_summary.csv")?;
        let mut w = csv_writer(&path)?;
        csv_row(&mut w, &path, ["combo", "mean_test_accuracy", "sd_test_accuracy", "runs"])?;
        for s in summarize_ablation(&cells) {
            csv_row(&mut w, &path, [s.combo, io::fmt_real(s.mean), io::fmt_real(s.sd), s.runs.to_string()])?;
        }
        io_at(&path, w.flush())?;
        let path = run.artifact("config", "config.toml")?;
        io_at(&path, std::fs::write(&path, cfg.to_toml()))
    })();
    run.finish(res).map(|(_, p)| p)
}

pub(crate) fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn csv_row<I, T>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
