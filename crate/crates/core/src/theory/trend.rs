//! Shrinking of the test-risk gap as the number of originals grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::campaign::build_data;
use super::report::{Condition, Relation, VerificationReport};
use crate::datasim::{make_test, SimConfig};
use crate::error::{Error, Result};
use crate::trainer::{evaluate, train_trireweight, RunOptions, TrainerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendInput {
    /// Total originals per point, strictly increasing, each a multiple of the class count.
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Total originals of the reference runs.
    pub reference_n: usize,
    /// Test samples per class for the gap.
    pub n_test_per_class: usize,
    pub sim: SimConfig,
    pub trainer: TrainerConfig,
}

impl Default for TrendInput {
    fn default() -> Self {
        TrendInput {
            n_values: vec![50, 100, 200, 400, 800],
            seeds: (0..5).collect(),
            reference_n: 6400,
            n_test_per_class: 2000,
            sim: SimConfig::default(),
            trainer: TrainerConfig { eval_every: 2000, checkpoint_every: Some(0), ..TrainerConfig::default() },
        }
    }
}

/// Least-squares slope of `y` on `x` and its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (slope, (sse / (n - 2.0) / sxx).sqrt())
}

/// Trains TriReWeight at each size and seed, measures the test-risk gap to
/// the mean of reference runs at `reference_n`, and checks that the mean gap
/// never grows with n and that the log-log slope is at most zero.
pub fn verify_generalization_trend(input: &TrendInput) -> Result<VerificationReport> {
    let ns = &input.n_values;
    if ns.len() < 4 {
        return Err(Error::Config(format!("trend needs at least 4 sizes, got {}", ns.len())));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be strictly increasing".into()));
    }
    if input.seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let c = input.sim.classes;
    if let Some(bad) = ns.iter().chain([&input.reference_n]).find(|&&n| n == 0 || n % c != 0) {
        return Err(Error::Config(format!("size {bad} is not a positive multiple of {c} classes")));
    }
    let test = make_test(&SimConfig { n_test_per_class: input.n_test_per_class, ..input.sim.clone() })?;
    let floor = input.trainer.loss.prob_floor;

    let test_risk = |n: usize, seed: u64| -> Result<f64> {
        let sim = SimConfig { n_per_class: n / c, seed, ..input.sim.clone() };
        let (data, _) = build_data(&sim)?;
        let cfg = TrainerConfig { seed, ..input.trainer.clone() };
        let out = train_trireweight(&data, &cfg, RunOptions::default())?;
        Ok(evaluate(&out.theta, &test, floor)?.risk)
    };
    let jobs: Vec<(usize, u64)> =
        ns.iter().chain([&input.reference_n]).flat_map(|&n| input.seeds.iter().map(move |&s| (n, s))).collect();
    let risks: Vec<f64> = jobs.par_iter().map(|&(n, s)| test_risk(n, s)).collect::<Result<_>>()?;
    let k = input.seeds.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let reference = mean(&risks[ns.len() * k..]);
    let gaps: Vec<f64> = risks[..ns.len() * k].chunks(k).map(|ch| mean(ch) - reference).collect();

    let rises = gaps.windows(2).filter(|w| w[1] > w[0]).count();
    let positive = gaps.iter().all(|&g| g > 0.0);
    let inputs = serde_json::json!({
        "n_values": ns, "seeds": input.seeds, "reference_n": input.reference_n,
        "n_test_per_class": input.n_test_per_class, "sim": input.sim, "trainer": input.trainer,
    });
    let mut conditions = vec![Condition::new("rises in mean gap", rises as f64, Relation::AtMost, 0.0, 0.0)];
    let mut details = vec![("reference_risk", reference)];
    if positive {
        let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        let (slope, se) = ols_slope(&lx, &ly);
        let t = StudentsT::new(0.0, 1.0, (ns.len() - 2) as f64)
            .map_err(|e| Error::Config(e.to_string()))?
            .inverse_cdf(0.975);
        conditions.push(Condition::new("log-log slope", slope, Relation::AtMost, 0.0, 0.0));
        details.extend([("slope_ci_low", slope - t * se), ("slope_ci_high", slope + t * se), ("slope_stderr", se)]);
    } else {
        // a nonpositive mean gap has no logarithm; the slope cannot be fitted
        conditions.push(Condition::new("all mean gaps positive", 0.0, Relation::AtLeast, 1.0, 0.0));
    }
    let mut r = VerificationReport::from_conditions("t44-trend", inputs, conditions);
    r.samples = Some(jobs.len() as u64);
    for (n, g) in ns.iter().zip(&gaps) {
        r = r.detail(&format!("gap_n{n}"), *g);
    }
    for (key, v) in details {
        r = r.detail(key, v);
    }
    let r = r.note("slope -0.5 is the informational rate; only its sign is asserted");
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [50.0f64, 100.0, 200.0, 400.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (s, se) = ols_slope(&x, &y);
        assert!((s + 0.5).abs() < 1e-12);
        assert!(se < 1e-6);
    }

    #[test]
    fn too_few_sizes_are_refused() {
        let input = TrendInput { n_values: vec![50], ..TrendInput::default() };
        assert!(matches!(verify_generalization_trend(&input), Err(Error::Config(_))));
        let input = TrendInput { n_values: vec![50, 100, 100, 200], ..TrendInput::default() };
        assert!(matches!(verify_generalization_trend(&input), Err(Error::Config(_))));
    }
}
