//! Synthetic originals and a noise-controlled stand-in for a generative
//! augmentation method.
//!
//! Originals are isotropic unit-variance Gaussian clusters, one per class.
//! Each generated sample is, independently, a perturbed copy of its origin
//! (probability `1 - gamma`) or a draw from a single extra cluster that belongs
//! to none of the classes (probability `gamma`). Labels are 0-based; the extra
//! class has index `classes`.
//!
//! Which generated samples are noisy is returned separately as
//! [`HiddenTruth`]. Training code only ever receives the [`GeneratedPool`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Input dimension.
    pub dim: usize,
    /// Number of classes of interest.
    pub classes: usize,
    pub n_per_class: usize,
    /// Generated samples per original.
    pub expansion_ratio: usize,
    /// Probability that a generated sample falls in the extra class.
    pub gamma: f64,
    pub perturb_sigma: f64,
    /// Pairwise distance between class means.
    pub class_separation: f64,
    /// Distance from the extra cluster's mean to the nearest class mean.
    pub extra_class_offset: f64,
    pub extra_class_sigma: f64,
    pub n_test_per_class: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dim: 16,
            classes: 5,
            n_per_class: 40,
            expansion_ratio: 5,
            gamma: 0.3,
            perturb_sigma: 0.5,
            class_separation: 6.0,
            extra_class_offset: 6.0,
            extra_class_sigma: 0.9,
            n_test_per_class: 200,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim < 2 {
            return fail(format!("sim.dim must be >= 2, got {}", self.dim));
        }
        if self.classes < 2 {
            return fail(format!("sim.classes must be >= 2, got {}", self.classes));
        }
        if self.expansion_ratio < 1 {
            return fail("sim.expansion_ratio must be >= 1".into());
        }
        if self.n_per_class < 1 {
            return fail("sim.n_per_class must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("sim.gamma must lie in [0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("perturb_sigma", self.perturb_sigma),
            ("extra_class_offset", self.extra_class_offset),
            ("extra_class_sigma", self.extra_class_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("sim.{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return fail(format!("sim.class_separation must be > 0, got {}", self.class_separation));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OriginalDataset {
    pub dim: usize,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
}

impl OriginalDataset {
    pub fn new(dim: usize, classes: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Dimension { expected: dim, found: s.features.len() });
            }
            if s.label >= classes {
                return Err(Error::LabelOutOfRange { label: s.label, classes });
            }
        }
        Ok(OriginalDataset { dim, classes, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> OriginalDataset {
        OriginalDataset {
            dim: self.dim,
            classes: self.classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// A generated sample as visible to training code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub features: Vec<f64>,
    /// Index of the original this sample was generated from.
    pub origin_index: usize,
    /// Position among the `expansion_ratio` samples of that original.
    pub gen_index: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GeneratedPool {
    pub expansion_ratio: usize,
    pub samples: Vec<GeneratedSample>,
}

impl GeneratedPool {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// True class of every pool sample (`classes` marks the extra class).
/// Only verification code reads this.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTruth {
    pub classes: usize,
    pub true_class: Vec<usize>,
}

impl HiddenTruth {
    pub fn is_noisy(&self, pool_index: usize) -> bool {
        self.true_class[pool_index] == self.classes
    }

    pub fn noisy_count(&self) -> usize {
        (0..self.true_class.len()).filter(|&i| self.is_noisy(i)).count()
    }
}

/// Class means and extra-cluster mean for a configuration.
///
/// With `classes < dim` the means are the scaled basis vectors
/// `e_k * sep / sqrt(2)`, a regular simplex with every pairwise distance equal
/// to `sep`; the extra mean sits above the simplex centroid along `e_classes`
/// so it is equidistant from all classes. Otherwise the means lie on a circle
/// in the first two coordinates with adjacent distance `sep`.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub class_means: Vec<Vec<f64>>,
    pub extra_mean: Vec<f64>,
}

impl Geometry {
    pub fn new(cfg: &SimConfig) -> Self {
        let (d, c, sep) = (cfg.dim, cfg.classes, cfg.class_separation);
        let mut class_means = vec![vec![0.0; d]; c];
        let mut extra_mean = vec![0.0; d];
        if c < d {
            let s = sep / 2f64.sqrt();
            for (k, m) in class_means.iter_mut().enumerate() {
                m[k] = s;
            }
            for v in extra_mean.iter_mut().take(c) {
                *v = s / c as f64;
            }
            // centroid-to-vertex distance of the simplex
            let r2 = sep * sep / 2.0 * (1.0 - 1.0 / c as f64);
            extra_mean[c] = (cfg.extra_class_offset.powi(2) - r2).max(0.0).sqrt();
        } else {
            let radius = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
            for (k, m) in class_means.iter_mut().enumerate() {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            if d > 2 {
                extra_mean[2] = (cfg.extra_class_offset.powi(2) - radius * radius).max(0.0).sqrt();
            }
        }
        Geometry { class_means, extra_mean }
    }
}

fn gaussian_around(center: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    center
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            m + sigma * z
        })
        .collect()
}

fn clusters(cfg: &SimConfig, per_class: usize, stream: Stream) -> Result<OriginalDataset> {
    cfg.validate()?;
    let geo = Geometry::new(cfg);
    let samples = (0..cfg.classes * per_class)
        .map(|i| {
            let label = i / per_class;
            let mut rng = rng::rng(cfg.seed, stream, i as u64);
            LabeledSample { features: gaussian_around(&geo.class_means[label], 1.0, &mut rng), label }
        })
        .collect();
    OriginalDataset::new(cfg.dim, cfg.classes, samples)
}

/// The original (clean, labeled) training set: `n_per_class` per class,
/// ordered by class.
pub fn make_original(cfg: &SimConfig) -> Result<OriginalDataset> {
    clusters(cfg, cfg.n_per_class, Stream::Originals)
}

/// A held-out clean test set from the same class distributions.
pub fn make_test(cfg: &SimConfig) -> Result<OriginalDataset> {
    clusters(cfg, cfg.n_test_per_class, Stream::TestSet)
}

/// Simulated generative augmentation: `expansion_ratio` samples per original.
pub fn augment(originals: &OriginalDataset, cfg: &SimConfig) -> Result<(GeneratedPool, HiddenTruth)> {
    cfg.validate()?;
    if originals.is_empty() {
        return Err(Error::Empty("originals"));
    }
    if originals.dim != cfg.dim {
        return Err(Error::Dimension { expected: cfg.dim, found: originals.dim });
    }
    let geo = Geometry::new(cfg);
    let m = cfg.expansion_ratio;
    let mut samples = Vec::with_capacity(originals.len() * m);
    let mut true_class = Vec::with_capacity(originals.len() * m);
    for (i, orig) in originals.samples.iter().enumerate() {
        for j in 0..m {
            let mut rng = rng::rng(cfg.seed, Stream::Augment, (i * m + j) as u64);
            let noisy = rng.random::<f64>() < cfg.gamma;
            let features = if noisy {
                gaussian_around(&geo.extra_mean, cfg.extra_class_sigma, &mut rng)
            } else {
                gaussian_around(&orig.features, cfg.perturb_sigma, &mut rng)
            };
            samples.push(GeneratedSample { features, origin_index: i, gen_index: j });
            true_class.push(if noisy { cfg.classes } else { orig.label });
        }
    }
    Ok((GeneratedPool { expansion_ratio: m, samples }, HiddenTruth { classes: cfg.classes, true_class }))
}

/// `x + N(0, sigma^2 I)`, reproducible from `seed`.
pub fn perturb(x: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    gaussian_around(x, sigma, &mut rng)
}

/// Anchor (generated), positive (its origin), negative (an original of another class).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One triplet per pool index in `batch`, negatives drawn uniformly from the
/// originals whose label differs from the anchor's origin label.
pub fn sample_triplets(
    batch: &[usize],
    pool: &GeneratedPool,
    originals: &OriginalDataset,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let mut by_label = vec![Vec::new(); originals.classes];
    for (i, s) in originals.samples.iter().enumerate() {
        by_label[s.label].push(i);
    }
    if by_label.iter().filter(|v| !v.is_empty()).count() < 2 {
        return Err(Error::InsufficientClasses);
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    batch
        .iter()
        .map(|&anchor| {
            let positive = pool.samples[anchor].origin_index;
            let label = originals.samples[positive].label;
            let eligible = originals.len() - by_label[label].len();
            let mut r = rng.random_range(0..eligible);
            let negative = by_label
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != label)
                .find_map(|(_, members)| {
                    if r < members.len() {
                        Some(members[r])
                    } else {
                        r -= members.len();
                        None
                    }
                })
                .expect("r < eligible");
            Ok(Triplet { anchor, positive, negative })
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of generated samples strictly closer to their own origin than to
/// every other original.
pub fn measure_triplet_assumption_rate(pool: &GeneratedPool, originals: &OriginalDataset) -> f64 {
    if pool.is_empty() {
        return f64::NAN;
    }
    let hits = pool
        .samples
        .iter()
        .filter(|s| {
            let own = sq_dist(&s.features, &originals.samples[s.origin_index].features);
            originals
                .samples
                .iter()
                .enumerate()
                .all(|(k, o)| k == s.origin_index || own < sq_dist(&s.features, &o.features))
        })
        .count();
    hits as f64 / pool.len() as f64
}
