use proptest::prelude::*;
use rwlab_core::datasim::*;
use rwlab_core::io;
use rwlab_core::trainer::{train_trireweight, RunOptions, TrainData, TrainerConfig};
use statrs::distribution::{Binomial, DiscreteCDF};

fn small(seed: u64) -> SimConfig {
    SimConfig { n_per_class: 6, seed, ..SimConfig::default() }
}

#[test]
fn two_classes_fifty_each() {
    let cfg = SimConfig { classes: 2, n_per_class: 50, ..SimConfig::default() };
    let d = make_original(&cfg).unwrap();
    assert_eq!(d.len(), 100);
    assert_eq!(d.labels().filter(|&l| l == 0).count(), 50);
}

/// Softmax regression by plain gradient descent, independent of the crate's models.
fn linear_accuracy(set: &OriginalDataset) -> f64 {
    let (d, c) = (set.dim, set.classes);
    let mut w = vec![vec![0.0; d + 1]; c];
    for _ in 0..300 {
        let mut grad = vec![vec![0.0; d + 1]; c];
        for s in &set.samples {
            let z: Vec<f64> = w.iter().map(|wk| wk[d] + (0..d).map(|i| wk[i] * s.features[i]).sum::<f64>()).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for k in 0..c {
                let g = e[k] / tot - f64::from(u8::from(k == s.label));
                for i in 0..d {
                    grad[k][i] += g * s.features[i];
                }
                grad[k][d] += g;
            }
        }
        for k in 0..c {
            for i in 0..=d {
                w[k][i] -= 0.1 * grad[k][i] / set.len() as f64;
            }
        }
    }
    let hits = set
        .samples
        .iter()
        .filter(|s| {
            let z: Vec<f64> = w.iter().map(|wk| wk[d] + (0..d).map(|i| wk[i] * s.features[i]).sum::<f64>()).collect();
            (0..c).fold(0, |b, k| if z[k] > z[b] { k } else { b }) == s.label
        })
        .count();
    hits as f64 / set.len() as f64
}

#[test]
fn wide_separation_is_linearly_separable() {
    let cfg = SimConfig { dim: 2, class_separation: 8.0, n_per_class: 200, ..SimConfig::default() };
    let acc = linear_accuracy(&make_original(&cfg).unwrap());
    assert!(acc > 0.99, "{acc}");
}

#[test]
fn noisy_count_within_binomial_interval() {
    let cfg = SimConfig { classes: 5, n_per_class: 20, expansion_ratio: 5, gamma: 0.3, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    assert_eq!(orig.len(), 100);
    let bin = Binomial::new(0.3, 500).unwrap();
    let (lo, hi) = (bin.inverse_cdf(0.0005), bin.inverse_cdf(0.9995));
    for seed in 0..20 {
        let (pool, truth) = augment(&orig, &SimConfig { seed, ..cfg.clone() }).unwrap();
        assert_eq!(pool.len(), 500);
        let k = truth.noisy_count() as u64;
        assert!((lo..=hi).contains(&k), "seed {seed}: {k} outside [{lo}, {hi}]");
    }
}

#[test]
fn noisy_fraction_converges() {
    let cfg = SimConfig { dim: 2, classes: 2, n_per_class: 10_000, expansion_ratio: 5, gamma: 0.3, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    let (pool, truth) = augment(&orig, &cfg).unwrap();
    assert_eq!(pool.len(), 100_000);
    let frac = truth.noisy_count() as f64 / pool.len() as f64;
    assert!((frac - 0.3).abs() < 0.3 * 0.01, "{frac}");
}

#[test]
fn perturbation_scale_concentrates() {
    let x = vec![1.5; 1000];
    let y = perturb(&x, 0.1, 42);
    let rms = (x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 1000.0).sqrt();
    assert!((rms - 0.1).abs() < 0.01, "{rms}");
}

#[test]
fn negatives_are_uniform_over_eligible_originals() {
    // four originals, one per class: three eligible negatives for every anchor
    let cfg = SimConfig { classes: 4, n_per_class: 1, expansion_ratio: 1, gamma: 0.0, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    let (pool, _) = augment(&orig, &cfg).unwrap();
    let batch = vec![0; 100_000];
    let trips = sample_triplets(&batch, &pool, &orig, 5).unwrap();
    let mut counts = [0usize; 4];
    for t in &trips {
        counts[t.negative] += 1;
    }
    assert_eq!(counts[0], 0);
    for &k in &counts[1..] {
        let f = k as f64 / 1e5;
        assert!((f - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn two_classes_always_cross() {
    let cfg = SimConfig { classes: 2, n_per_class: 10, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    let (pool, _) = augment(&orig, &cfg).unwrap();
    let batch: Vec<usize> = (0..10).collect();
    let trips = sample_triplets(&batch, &pool, &orig, 1).unwrap();
    assert_eq!(trips.len(), 10);
    for t in trips {
        assert_eq!(pool.samples[t.anchor].origin_index, t.positive);
        assert_ne!(orig.samples[t.positive].label, orig.samples[t.negative].label);
    }
}

#[test]
fn assumption_rate_on_clean_wide_config() {
    let cfg = SimConfig { gamma: 0.1, perturb_sigma: 0.3, class_separation: 8.0, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    let (pool, _) = augment(&orig, &cfg).unwrap();
    let rate = measure_triplet_assumption_rate(&pool, &orig);
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn assumption_rate_at_chance_for_pure_noise() {
    // a noisy sample ignores its origin, so its origin is the nearest original
    // with probability about 1/n
    let cfg = SimConfig { gamma: 1.0, expansion_ratio: 20, ..SimConfig::default() };
    let orig = make_original(&cfg).unwrap();
    let (pool, _) = augment(&orig, &cfg).unwrap();
    let rate = measure_triplet_assumption_rate(&pool, &orig);
    let chance = 1.0 / orig.len() as f64;
    let se = (chance * (1.0 - chance) / pool.len() as f64).sqrt();
    assert!((rate - chance).abs() < 4.0 * se + 1e-12, "{rate} vs {chance}");
}

#[test]
fn hidden_column_does_not_reach_the_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(3);
    let orig = make_original(&cfg).unwrap();
    let (pool, truth) = augment(&orig, &cfg).unwrap();
    let with = dir.path().join("with.csv");
    let without = dir.path().join("without.csv");
    io::write_pool(&with, &pool, Some(&truth)).unwrap();
    io::write_pool(&without, &pool, None).unwrap();
    let tc = TrainerConfig { iterations: 30, batch_original: 8, batch_generated: 16, ..TrainerConfig::default() };
    let run = |p: &std::path::Path| {
        let pool = io::read_pool(p, &orig, cfg.expansion_ratio).unwrap();
        let data = TrainData { originals: orig.clone(), pool, test: None };
        train_trireweight(&data, &tc, RunOptions::default()).unwrap()
    };
    assert_eq!(run(&with), run(&without));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn provenance_is_total(seed in 0u64..1000, m in 1usize..6, gamma in 0.0f64..=1.0) {
        let cfg = SimConfig { expansion_ratio: m, gamma, ..small(seed) };
        let orig = make_original(&cfg).unwrap();
        let (pool, truth) = augment(&orig, &cfg).unwrap();
        prop_assert_eq!(pool.len(), orig.len() * m);
        prop_assert_eq!(truth.true_class.len(), pool.len());
        let mut per_origin = vec![0usize; orig.len()];
        for (i, s) in pool.samples.iter().enumerate() {
            prop_assert!(s.origin_index < orig.len());
            prop_assert!(s.gen_index < m);
            per_origin[s.origin_index] += 1;
            let t = truth.true_class[i];
            prop_assert!(t == cfg.classes || t == orig.samples[s.origin_index].label);
            prop_assert_eq!(truth.is_noisy(i), t == cfg.classes);
        }
        prop_assert!(per_origin.iter().all(|&k| k == m));
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000) {
        let cfg = small(seed);
        let a = make_original(&cfg).unwrap();
        prop_assert_eq!(&a, &make_original(&cfg).unwrap());
        prop_assert_eq!(augment(&a, &cfg).unwrap(), augment(&a, &cfg).unwrap());
        prop_assert!(a.samples.iter().all(|s| s.label < cfg.classes && s.features.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn triplets_respect_labels(seed in 0u64..1000, k in 1usize..40) {
        let cfg = small(seed);
        let orig = make_original(&cfg).unwrap();
        let (pool, _) = augment(&orig, &cfg).unwrap();
        let batch: Vec<usize> = (0..k).map(|i| (i * 7) % pool.len()).collect();
        let trips = sample_triplets(&batch, &pool, &orig, seed).unwrap();
        prop_assert_eq!(trips.len(), k);
        for (t, &a) in trips.iter().zip(&batch) {
            prop_assert_eq!(t.anchor, a);
            prop_assert_eq!(pool.samples[a].origin_index, t.positive);
            prop_assert_ne!(orig.samples[t.positive].label, orig.samples[t.negative].label);
        }
    }

    #[test]
    fn zero_sigma_is_identity(x in proptest::collection::vec(-10.0f64..10.0, 1..20), seed in any::<u64>()) {
        prop_assert_eq!(perturb(&x, 0.0, seed), x);
    }
}
