//! How well learned weights separate clean generated samples from noisy ones.

use super::report::{Condition, Relation, VerificationReport};
use crate::datasim::HiddenTruth;
use crate::error::{Error, Result};

pub const QUINTILES: usize = 5;
/// Largest single drop in clean fraction tolerated between adjacent quintiles.
pub const INVERSION_ALLOWANCE: f64 = 0.02;

/// Probability that a random clean sample outweighs a random noisy one,
/// ties counting one half. `None` when either group is empty.
pub fn ranking_quality(weights: &[f64], noisy: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
    let n_noisy = noisy.iter().filter(|&&x| x).count() as f64;
    let n_clean = weights.len() as f64 - n_noisy;
    if n_noisy == 0.0 || n_clean == 0.0 {
        return None;
    }
    // Mann-Whitney with midranks
    let mut clean_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && weights[order[j + 1]] == weights[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        clean_rank_sum += order[i..=j].iter().filter(|&&k| !noisy[k]).count() as f64 * mid;
        i = j + 1;
    }
    Some((clean_rank_sum - n_clean * (n_clean + 1.0) / 2.0) / (n_clean * n_noisy))
}

/// Clean fraction in each weight quintile, lowest weights first.
pub fn quintile_clean_fractions(weights: &[f64], noisy: &[bool]) -> Vec<f64> {
    let n = weights.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    (0..QUINTILES)
        .map(|q| {
            let part = &order[q * n / QUINTILES..(q + 1) * n / QUINTILES];
            if part.is_empty() {
                return 0.0;
            }
            part.iter().filter(|&&i| !noisy[i]).count() as f64 / part.len() as f64
        })
        .collect()
}

/// Passes when clean fractions rise across quintiles (one drop of at most two
/// points allowed) and ranking quality exceeds `min_quality` (0.5 when not
/// given).
pub fn weight_noise_separation(weights: &[f64], noisy: &[bool], min_quality: Option<f64>) -> Result<VerificationReport> {
    if weights.len() != noisy.len() {
        return Err(Error::Config(format!("{} weights for {} hidden flags", weights.len(), noisy.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Config("weights must be finite".into()));
    }
    let inputs = serde_json::json!({ "samples": weights.len(), "noisy": noisy.iter().filter(|&&x| x).count() });
    let Some(quality) = ranking_quality(weights, noisy) else {
        return Ok(VerificationReport::not_applicable("weight-sep", inputs, "pool is all clean or all noisy"));
    };
    if weights.len() < QUINTILES {
        return Err(Error::Config(format!("need at least {QUINTILES} samples")));
    }
    let fractions = quintile_clean_fractions(weights, noisy);
    let drops: Vec<f64> = fractions.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let largest_drop = drops.iter().copied().fold(0.0, f64::max);
    let threshold = min_quality.unwrap_or(0.5);
    let quality_condition = if min_quality.is_some() {
        Condition::new("ranking quality", quality, Relation::AtLeast, threshold, 0.0)
    } else {
        Condition::new("ranking quality", quality, Relation::Above, threshold, 0.0)
    };
    let mut r = VerificationReport::from_conditions(
        "weight-sep",
        inputs,
        vec![
            quality_condition,
            Condition::new("quintile inversions", drops.len() as f64, Relation::AtMost, 1.0, 0.0),
            Condition::new("largest inversion", largest_drop, Relation::AtMost, INVERSION_ALLOWANCE, 0.0),
        ],
    );
    r.samples = Some(weights.len() as u64);
    for (q, f) in fractions.iter().enumerate() {
        r = r.detail(&format!("quintile{}_clean_fraction", q + 1), *f);
    }
    Ok(r)
}

/// Probe for [`crate::trainer::RunOptions`]: mean weight over clean and over
/// noisy pool samples.
pub fn noise_probe(truth: &HiddenTruth) -> impl Fn(&[f64]) -> (Option<f64>, Option<f64>) + Sync + '_ {
    move |w: &[f64]| {
        let (mut c, mut nc, mut z, mut nz) = (0.0, 0usize, 0.0, 0usize);
        for (i, &v) in w.iter().enumerate() {
            if truth.is_noisy(i) {
                z += v;
                nz += 1;
            } else {
                c += v;
                nc += 1;
            }
        }
        ((nc > 0).then(|| c / nc as f64), (nz > 0).then(|| z / nz as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pairwise count, the definition itself.
    fn brute_quality(w: &[f64], noisy: &[bool]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for i in (0..w.len()).filter(|&i| !noisy[i]) {
            for j in (0..w.len()).filter(|&j| noisy[j]) {
                s += if w[i] > w[j] { 1.0 } else if w[i] == w[j] { 0.5 } else { 0.0 };
                n += 1.0;
            }
        }
        s / n
    }

    #[test]
    fn constant_weights_are_uninformative() {
        let noisy: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let r = weight_noise_separation(&[0.4; 50], &noisy, None).unwrap();
        assert_eq!(r.measured, 0.5);
        assert!(!r.pass);
    }

    #[test]
    fn oracle_weights_separate_perfectly() {
        let noisy: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let w: Vec<f64> = noisy.iter().map(|&z| if z { 0.0 } else { 1.0 }).collect();
        let r = weight_noise_separation(&w, &noisy, Some(0.8)).unwrap();
        assert_eq!(r.measured, 1.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn midrank_formula_matches_pair_count() {
        let w = [0.3, 0.1, 0.3, 0.9, 0.5, 0.5, 0.2, 0.3];
        let noisy = [true, false, false, true, false, true, true, false];
        let q = ranking_quality(&w, &noisy).unwrap();
        assert!((q - brute_quality(&w, &noisy)).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_not_applicable() {
        let r = weight_noise_separation(&[0.1, 0.2, 0.3, 0.4, 0.5], &[false; 5], None).unwrap();
        assert!(!r.applicable && !r.pass);
    }

    #[test]
    fn quintiles_count_clean_share() {
        let w: Vec<f64> = (0..10).map(f64::from).collect();
        let noisy = [true, true, true, false, true, false, false, false, false, false];
        assert_eq!(quintile_clean_fractions(&w, &noisy), vec![0.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn two_inversions_fail() {
        // clean fractions 0.2, 0.1, 0.5, 0.4, 1.0
        let mut noisy = Vec::new();
        for k in [2, 1, 5, 4, 10] {
            noisy.extend((0..10).map(|i| i >= k));
        }
        let w: Vec<f64> = (0..50).map(f64::from).collect();
        let r = weight_noise_separation(&w, &noisy, None).unwrap();
        assert!(!r.pass);
        assert_eq!(r.conditions[1].measured, 2.0);
    }
}
