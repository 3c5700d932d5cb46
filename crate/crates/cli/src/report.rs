//! Plot-ready tables from finished training runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rwlab_core::datasim::SimConfig;
use rwlab_core::io::{self, fmt_real};
use rwlab_core::theory::quintile_clean_fractions;
use rwlab_core::trainer::{MetricRecord, Method};
use sha2::{Digest, Sha256};

use crate::data::{all_train_runs, load_truth, METRICS, WEIGHTS};
use crate::error::{io_at, CliError, CliResult};
use crate::manifest::RunDir;
use crate::train::{csv_row, csv_writer};

fn method_rank(m: Method) -> usize {
    match m {
        Method::TriReWeight => 0,
        Method::Sl => 1,
        Method::Nsl => 2,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt_real)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Writes `expansion_ratio.csv`, `loss_curves.csv` and, when learned runs
/// with hidden noise flags exist, `weight_quintiles.csv`. The run id is a
/// hash of the input run ids, so regenerating over the same runs rewrites the
/// same directory with the same bytes.
pub fn report(runs_dir: &Path, out: &Path) -> CliResult<PathBuf> {
    let mut runs = all_train_runs(runs_dir)?;
    if runs.is_empty() {
        return Err(CliError::input(format!(
            "no finished training runs under {}; run `rwlab simulate` and `rwlab train` first",
            runs_dir.display()
        )));
    }
    runs.sort_by(|a, b| {
        (method_rank(a.2.method), a.2.expansion_ratio, a.2.seed, &a.1.run_id)
            .cmp(&(method_rank(b.2.method), b.2.expansion_ratio, b.2.seed, &b.1.run_id))
    });
    let mut h = Sha256::new();
    for (_, m, s) in &runs {
        h.update(format!("{} {}\n", m.run_id, s.method.name()).as_bytes());
    }
    let run_id = hex::encode(h.finalize());
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.2.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let inputs: Vec<String> = runs.iter().map(|r| r.0.display().to_string()).collect();
    let echo = serde_json::json!({ "runs": runs.len() });
    let mut run = RunDir::begin(out, "report", run_id, seeds, echo, inputs)?;

    let res = (|| -> CliResult<()> {
        let mut groups: BTreeMap<(usize, usize), (Method, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (_, _, s) in &runs {
            let g = groups.entry((method_rank(s.method), s.expansion_ratio)).or_insert((s.method, Vec::new(), Vec::new()));
            g.1.extend(s.test_accuracy);
            g.2.push(s.train_risk);
        }
        let path = run.artifact("expansion_ratio", "expansion_ratio.csv")?;
        let mut w = csv_writer(&path)?;
        csv_row(&mut w, &path, ["method", "expansion_ratio", "runs", "mean_test_accuracy", "sd_test_accuracy", "mean_train_risk"])?;
        for ((_, m), (method, acc, risk)) in &groups {
            let (acc_m, acc_sd) = if acc.is_empty() { (None, None) } else { let (a, b) = mean_sd(acc); (Some(a), Some(b)) };
            csv_row(
                &mut w,
                &path,
                [
                    method.name().to_owned(),
                    m.to_string(),
                    risk.len().to_string(),
                    opt(acc_m),
                    opt(acc_sd),
                    fmt_real(mean_sd(risk).0),
                ],
            )?;
        }
        io_at(&path, w.flush())?;

        let path = run.artifact("loss_curves", "loss_curves.csv")?;
        let mut w = csv_writer(&path)?;
        csv_row(
            &mut w,
            &path,
            [
                "method", "expansion_ratio", "seed", "run_id", "t", "l_cls", "l_weight", "train_risk", "train_accuracy",
                "test_risk", "test_accuracy", "mean_weight", "mean_weight_clean", "mean_weight_noisy",
            ],
        )?;
        for (dir, m, s) in &runs {
            let records: Vec<MetricRecord> = io::read_jsonl(&dir.join(METRICS))?;
            for r in records {
                csv_row(
                    &mut w,
                    &path,
                    [
                        s.method.name().to_owned(),
                        s.expansion_ratio.to_string(),
                        s.seed.to_string(),
                        m.run_id[..12].to_owned(),
                        r.t.to_string(),
                        fmt_real(r.l_cls),
                        fmt_real(r.l_weight),
                        fmt_real(r.train_risk),
                        fmt_real(r.train_accuracy),
                        opt(r.test_risk),
                        opt(r.test_accuracy),
                        opt(r.mean_weight),
                        opt(r.mean_weight_clean),
                        opt(r.mean_weight_noisy),
                    ],
                )?;
            }
        }
        io_at(&path, w.flush())?;

        let mut per_run: Vec<Vec<f64>> = Vec::new();
        for (dir, m, s) in &runs {
            let weights_path = dir.join(WEIGHTS);
            if s.method != Method::TriReWeight || !weights_path.is_file() {
                continue;
            }
            let Some(sim) = m.config.get("sim").and_then(|v| serde_json::from_value::<SimConfig>(v.clone()).ok()) else {
                continue;
            };
            let Some(truth) = m.inputs.first().and_then(|d| load_truth(Path::new(d), &sim)) else { continue };
            let weights: Vec<f64> = io::read_weights(&weights_path)?.iter().map(|r| r.weight).collect();
            if weights.len() != truth.true_class.len() || weights.len() < 5 {
                continue;
            }
            let noisy: Vec<bool> = (0..weights.len()).map(|i| truth.is_noisy(i)).collect();
            per_run.push(quintile_clean_fractions(&weights, &noisy));
        }
        if !per_run.is_empty() {
            let path = run.artifact("weight_quintiles", "weight_quintiles.csv")?;
            let mut w = csv_writer(&path)?;
            csv_row(&mut w, &path, ["quintile", "mean_clean_fraction", "runs"])?;
            for q in 0..5 {
                let v: Vec<f64> = per_run.iter().map(|f| f[q]).collect();
                csv_row(&mut w, &path, [(q + 1).to_string(), fmt_real(mean_sd(&v).0), v.len().to_string()])?;
            }
            io_at(&path, w.flush())?;
        }
        Ok(())
    })();
    run.finish(res).map(|(_, p)| p)
}
