//! Population-level checks on the noisy-label channel: the decomposition of
//! the noisy risk, and the bound on the clean-risk gap between a model fitted
//! to noisy labels and one fitted to clean labels.
//!
//! The noisy channel: with probability `1 - gamma` a sample is drawn from a
//! class cluster and keeps its label; with probability `gamma` it is drawn from
//! the extra cluster and receives a uniformly random label among the `c`
//! classes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rwlab_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::report::{Condition, Relation, VerificationReport};
use crate::datasim::{GeneratedPool, Geometry, LabeledSample, OriginalDataset, SimConfig};
use crate::error::{Error, Result};
use crate::losses::ce_loss;
use crate::models::{predict_probs, stack_rows, ClassifierParams, ModelConfig};
use crate::rng::{self, Stream};
use crate::trainer::{train_baseline_sl, RunOptions, TrainData, TrainerConfig};

/// Allowance for summation-order rounding when both estimators are exact.
const ROUNDING: f64 = 1e-12;
const CHUNK: usize = 20_000;

// Sub-stream ids under `Stream::Verify`.
const S_DIRECT: u64 = 1;
const S_CLEAN: u64 = 2;
const S_EXTRA: u64 = 3;
const S_TRAIN_CLEAN: u64 = 10;
const S_TRAIN_FLIP: u64 = 11;
const S_TRAIN_EXTRA: u64 = 12;
const S_EVAL: u64 = 13;
const S_EQ_DIRECT: u64 = 20;
const S_EQ_CLEAN: u64 = 21;

/// Sampler for the clean and noisy distributions of a simulator configuration.
pub struct Channel {
    geo: Geometry,
    classes: usize,
    extra_sigma: f64,
    pub gamma: f64,
}

impl Channel {
    pub fn new(sim: &SimConfig, gamma: f64) -> Result<Self> {
        sim.validate()?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        Ok(Channel { geo: Geometry::new(sim), classes: sim.classes, extra_sigma: sim.extra_class_sigma, gamma })
    }

    fn around(&self, mean: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        mean.iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + sigma * z
            })
            .collect()
    }

    /// Class-balanced clean draw: label `i mod c`.
    pub fn clean(&self, i: usize, rng: &mut ChaCha8Rng) -> LabeledSample {
        let label = i % self.classes;
        LabeledSample { features: self.around(&self.geo.class_means[label], 1.0, rng), label }
    }

    pub fn extra(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.around(&self.geo.extra_mean, self.extra_sigma, rng)
    }

    /// A draw from the noisy channel and whether it came from the extra cluster.
    pub fn noisy(&self, i: usize, rng: &mut ChaCha8Rng) -> (LabeledSample, bool) {
        if rng.random::<f64>() < self.gamma {
            let features = self.extra(rng);
            let label = rng.random_range(0..self.classes);
            (LabeledSample { features, label }, true)
        } else {
            (self.clean(i, rng), false)
        }
    }

    /// Predictor that is uniform wherever the extra cluster's density exceeds
    /// every class density, and the class posterior elsewhere.
    pub fn uniform_on_noise(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let sq = |m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let class_ll: Vec<f64> = self.geo.class_means.iter().map(|m| -0.5 * sq(m)).collect();
        let extra_ll = -0.5 * sq(&self.geo.extra_mean) / (self.extra_sigma * self.extra_sigma)
            - d * self.extra_sigma.ln();
        let top = class_ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if extra_ll > top {
            return vec![1.0 / self.classes as f64; self.classes];
        }
        let e: Vec<f64> = class_ll.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

fn sample_rng(seed: u64, sub: u64, i: usize) -> ChaCha8Rng {
    rng::rng2(seed, Stream::Verify, sub, i as u64)
}

/// Probabilities of `theta` on feature rows, in chunks.
fn probs_of(theta: &ClassifierParams, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(CHUNK) {
        let p: Tensor = predict_probs(theta, &stack_rows(chunk, theta.dim())?)?;
        out.extend((0..chunk.len()).map(|i| p.row_slice(i).to_vec()));
    }
    Ok(out)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

/// Either a trained classifier or the analytic uniform-on-noise predictor.
pub enum Predictor<'a> {
    Model(&'a ClassifierParams),
    UniformOnNoise,
}

fn predict(p: &Predictor<'_>, ch: &Channel, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match p {
        Predictor::Model(theta) => probs_of(theta, rows),
        Predictor::UniformOnNoise => Ok(rows.iter().map(|x| ch.uniform_on_noise(x)).collect()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionInput {
    pub gamma: f64,
    pub n_mc: usize,
    pub prob_floor: f64,
    pub seed: u64,
}

/// Estimates the noisy risk directly (sampling the noisy channel) and as
/// `(1 - gamma) * R_clean + (gamma / c) * sum_j E[loss(x_extra, j)]` from two
/// further independent streams; passes if they agree within three combined
/// standard errors.
pub fn verify_risk_decomposition(
    sim: &SimConfig,
    predictor: Predictor<'_>,
    input: &DecompositionInput,
) -> Result<VerificationReport> {
    if input.n_mc < 10_000 {
        return Err(Error::Config(format!("decomposition check needs n_mc >= 10000, got {}", input.n_mc)));
    }
    let ch = Channel::new(sim, input.gamma)?;
    let (g, n, c) = (input.gamma, input.n_mc, sim.classes);

    let direct: Vec<(LabeledSample, bool)> = (0..n).map(|i| ch.noisy(i, &mut sample_rng(input.seed, S_DIRECT, i))).collect();
    let rows: Vec<Vec<f64>> = direct.iter().map(|(s, _)| s.features.clone()).collect();
    let probs = predict(&predictor, &ch, &rows)?;
    let direct_losses = direct
        .iter()
        .zip(&probs)
        .map(|((s, _), p)| ce_loss(p, s.label, input.prob_floor))
        .collect::<Result<Vec<_>>>()?;
    let (direct_mean, direct_var) = mean_var(&direct_losses);

    let (clean_mean, clean_var, clean_n, extra_mean, extra_var, extra_n) = if g == 0.0 {
        // no noise: the decomposition is the clean risk of the same samples
        (direct_mean, direct_var, n, 0.0, 0.0, 0)
    } else {
        let clean: Vec<LabeledSample> = (0..n).map(|i| ch.clean(i, &mut sample_rng(input.seed, S_CLEAN, i))).collect();
        let rows: Vec<Vec<f64>> = clean.iter().map(|s| s.features.clone()).collect();
        let probs = predict(&predictor, &ch, &rows)?;
        let cl = clean
            .iter()
            .zip(&probs)
            .map(|(s, p)| ce_loss(p, s.label, input.prob_floor))
            .collect::<Result<Vec<_>>>()?;
        let extra: Vec<Vec<f64>> = (0..n).map(|i| ch.extra(&mut sample_rng(input.seed, S_EXTRA, i))).collect();
        let probs = predict(&predictor, &ch, &extra)?;
        let el = probs
            .iter()
            .map(|p| Ok((0..c).map(|j| ce_loss(p, j, input.prob_floor)).sum::<Result<f64>>()? / c as f64))
            .collect::<Result<Vec<_>>>()?;
        let (cm, cv) = mean_var(&cl);
        let (em, ev) = mean_var(&el);
        (cm, cv, n, em, ev, n)
    };
    let decomposed = (1.0 - g) * clean_mean + g * extra_mean;
    let se_direct = (direct_var / n as f64).sqrt();
    let se_dec = if g == 0.0 {
        se_direct
    } else {
        ((1.0 - g).powi(2) * clean_var / clean_n as f64 + g * g * extra_var / extra_n as f64).sqrt()
    };
    let combined = (se_direct * se_direct + se_dec * se_dec).sqrt();
    let inputs = serde_json::json!({
        "gamma": g, "classes": c, "n_mc": n, "prob_floor": input.prob_floor, "seed": input.seed,
        "sim": sim,
    });
    let cond = Condition::new("direct vs decomposed", direct_mean, Relation::Within, decomposed, 3.0 * combined + ROUNDING);
    Ok(VerificationReport::from_conditions("decomposition", inputs, vec![cond])
        .with_stderr(combined, (n + clean_n + extra_n) as u64)
        .detail("direct", direct_mean)
        .detail("decomposed", decomposed)
        .detail("clean_risk", clean_mean)
        .detail("noise_term", g * extra_mean)
        .detail("stderr_direct", se_direct)
        .detail("stderr_decomposed", se_dec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem41Input {
    pub gamma: f64,
    /// Training-set size for both fitted models.
    pub n_train: usize,
    /// Clean evaluation samples for the risk gap.
    pub n_eval: usize,
    /// Samples per estimator in the equality-case check.
    pub n_mc: usize,
    pub iterations: usize,
    pub eta: f64,
    pub prob_floor: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for Theorem41Input {
    fn default() -> Self {
        Theorem41Input {
            gamma: 0.3,
            n_train: 1000,
            n_eval: 100_000,
            n_mc: 400_000,
            iterations: 1000,
            eta: 0.5,
            prob_floor: 1e-6,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

/// Clean and noisy training sets sharing every clean draw, so that
/// `gamma = 0` gives two identical sets.
pub fn paired_training_sets(sim: &SimConfig, gamma: f64, n: usize, seed: u64) -> Result<(OriginalDataset, OriginalDataset)> {
    let ch = Channel::new(sim, gamma)?;
    let mut clean = Vec::with_capacity(n);
    let mut noisy = Vec::with_capacity(n);
    for i in 0..n {
        let s = ch.clean(i, &mut sample_rng(seed, S_TRAIN_CLEAN, i));
        let mut flip = sample_rng(seed, S_TRAIN_FLIP, i);
        if flip.random::<f64>() < gamma {
            let features = ch.extra(&mut sample_rng(seed, S_TRAIN_EXTRA, i));
            noisy.push(LabeledSample { features, label: flip.random_range(0..sim.classes) });
        } else {
            noisy.push(s.clone());
        }
        clean.push(s);
    }
    Ok((
        OriginalDataset::new(sim.dim, sim.classes, clean)?,
        OriginalDataset::new(sim.dim, sim.classes, noisy)?,
    ))
}

fn fit(set: &OriginalDataset, input: &Theorem41Input) -> Result<ClassifierParams> {
    let cfg = TrainerConfig {
        iterations: input.iterations,
        eta_theta: input.eta,
        full_batch: true,
        eval_every: input.iterations.max(1),
        checkpoint_every: Some(0),
        seed: input.seed,
        model: input.model.clone(),
        loss: crate::losses::LossConfig { prob_floor: input.prob_floor, ..Default::default() },
        ..TrainerConfig::default()
    };
    let data = TrainData { originals: set.clone(), pool: GeneratedPool::empty(), test: None };
    Ok(train_baseline_sl(&data, &cfg, RunOptions::default())?.theta)
}

/// Equality case: the noise term of the uniform-on-noise predictor,
/// `R_S(h_u) - (1 - gamma) R(h_u)`, from two independent streams.
pub fn uniform_noise_gap(sim: &SimConfig, gamma: f64, n: usize, prob_floor: f64, seed: u64) -> Result<(f64, f64)> {
    let ch = Channel::new(sim, gamma)?;
    let direct: Vec<f64> = (0..n)
        .map(|i| {
            let (s, _) = ch.noisy(i, &mut sample_rng(seed, S_EQ_DIRECT, i));
            ce_loss(&ch.uniform_on_noise(&s.features), s.label, prob_floor)
        })
        .collect::<Result<_>>()?;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let s = ch.clean(i, &mut sample_rng(seed, S_EQ_CLEAN, i));
            ce_loss(&ch.uniform_on_noise(&s.features), s.label, prob_floor)
        })
        .collect::<Result<_>>()?;
    let (dm, dv) = mean_var(&direct);
    let (cm, cv) = mean_var(&clean);
    let gap = dm - (1.0 - gamma) * cm;
    let se = (dv / n as f64 + (1.0 - gamma).powi(2) * cv / n as f64).sqrt();
    Ok((gap, se))
}

/// Fits one model to noisy labels and one to clean labels (full-batch
/// descent, same budget), and checks the clean-risk gap against
/// `(-3 se, gamma * A + 3 se]`. For `gamma > 0` also checks that the
/// uniform-on-noise predictor's gap is `gamma * ln c` within 2%.
pub fn verify_theorem_4_1(sim: &SimConfig, input: &Theorem41Input) -> Result<VerificationReport> {
    let (g, c) = (input.gamma, sim.classes);
    let a = -input.prob_floor.ln();
    let (clean_set, noisy_set) = paired_training_sets(sim, g, input.n_train, input.seed)?;
    let theta_star = fit(&clean_set, input)?;
    let theta_tilde = fit(&noisy_set, input)?;

    let ch = Channel::new(sim, g)?;
    let eval: Vec<LabeledSample> = (0..input.n_eval).map(|i| ch.clean(i, &mut sample_rng(input.seed, S_EVAL, i))).collect();
    let rows: Vec<Vec<f64>> = eval.iter().map(|s| s.features.clone()).collect();
    let (ps, pt) = (probs_of(&theta_star, &rows)?, probs_of(&theta_tilde, &rows)?);
    let mut diffs = Vec::with_capacity(eval.len());
    let (mut rs, mut rt) = (0.0, 0.0);
    for ((s, a_), b_) in eval.iter().zip(&ps).zip(&pt) {
        let ls = ce_loss(a_, s.label, input.prob_floor)?;
        let lt = ce_loss(b_, s.label, input.prob_floor)?;
        rs += ls;
        rt += lt;
        diffs.push(lt - ls);
    }
    let (gap, var) = mean_var(&diffs);
    let se = (var / diffs.len() as f64).sqrt();
    let eps = 3.0 * se;

    let mut conditions = vec![
        Condition::new("gap <= gamma * A", gap, Relation::AtMost, g * a, eps),
        Condition::new("gap > -3 se", gap, Relation::AtLeast, 0.0, eps),
    ];
    let mut details = vec![
        ("risk_clean_fit", rs / eval.len() as f64),
        ("risk_noisy_fit", rt / eval.len() as f64),
        ("bound_gamma_a", g * a),
        ("loss_bound_a", a),
    ];
    if g > 0.0 {
        let (eq_gap, eq_se) = uniform_noise_gap(sim, g, input.n_mc, input.prob_floor, input.seed)?;
        let target = g * (c as f64).ln();
        conditions.push(Condition::new("uniform-on-noise gap = gamma ln c", eq_gap, Relation::WithinRelative, target, 0.02));
        details.push(("uniform_gap", eq_gap));
        details.push(("uniform_gap_stderr", eq_se));
        details.push(("gamma_ln_c", target));
    }
    let inputs = serde_json::json!({ "sim": sim, "input": input });
    let mut report = VerificationReport::from_conditions("t41", inputs, conditions).with_stderr(se, input.n_eval as u64);
    for (k, v) in details {
        report = report.detail(k, v);
    }
    Ok(report.note("lower side reported as gap > -3 se; strict positivity is not asserted"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_predictor_balances_both_sides() {
        let sim = SimConfig::default();
        let theta = ClassifierParams::zeros(sim.dim, 4, sim.classes);
        for gamma in [0.0, 0.3, 1.0] {
            let r = verify_risk_decomposition(
                &sim,
                Predictor::Model(&theta),
                &DecompositionInput { gamma, n_mc: 10_000, prob_floor: 1e-6, seed: 1 },
            )
            .unwrap();
            assert!(r.pass, "{gamma}: {}", r.summary());
            assert!((r.details["direct"] - 5f64.ln()).abs() < 1e-12);
            assert!((r.details["decomposed"] - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn no_noise_means_identical_estimates() {
        let sim = SimConfig::default();
        let (theta, _) = crate::models::init_params(sim.dim, sim.classes, &ModelConfig::default(), 2).unwrap();
        let r = verify_risk_decomposition(
            &sim,
            Predictor::Model(&theta),
            &DecompositionInput { gamma: 0.0, n_mc: 10_000, prob_floor: 1e-6, seed: 3 },
        )
        .unwrap();
        assert_eq!(r.details["direct"], r.details["decomposed"]);
        assert!(r.pass);
    }

    #[test]
    fn small_sample_is_rejected() {
        let sim = SimConfig::default();
        let err = verify_risk_decomposition(
            &sim,
            Predictor::UniformOnNoise,
            &DecompositionInput { gamma: 0.3, n_mc: 100, prob_floor: 1e-6, seed: 0 },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn paired_sets_coincide_without_noise() {
        let sim = SimConfig::default();
        let (a, b) = paired_training_sets(&sim, 0.0, 50, 4).unwrap();
        assert_eq!(a, b);
        let (a, b) = paired_training_sets(&sim, 0.5, 200, 4).unwrap();
        let changed = a.samples.iter().zip(&b.samples).filter(|(x, y)| x != y).count();
        assert!(changed > 50 && changed < 150, "{changed}");
    }

    #[test]
    fn uniform_on_noise_is_uniform_at_the_extra_mean() {
        let sim = SimConfig::default();
        let ch = Channel::new(&sim, 0.3).unwrap();
        let geo = Geometry::new(&sim);
        assert_eq!(ch.uniform_on_noise(&geo.extra_mean), vec![0.2; 5]);
        let p = ch.uniform_on_noise(&geo.class_means[2]);
        assert!(p[2] > 0.99);
    }
}
