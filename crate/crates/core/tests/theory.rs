use proptest::prelude::*;
use rwlab_core::datasim::{GeneratedPool, SimConfig};
use rwlab_core::io;
use rwlab_core::losses::SupervisionFlags;
use rwlab_core::theory::*;
use rwlab_core::trainer::*;
use rwlab_core::Error;

fn small_sim(seed: u64) -> SimConfig {
    SimConfig { n_per_class: 10, seed, ..SimConfig::default() }
}

#[test]
fn no_noise_gives_no_gap() {
    let input = Theorem41Input { gamma: 0.0, n_train: 250, n_eval: 20_000, iterations: 300, ..Theorem41Input::default() };
    let r = verify_theorem_4_1(&SimConfig::default(), &input).unwrap();
    assert!(r.pass, "{}", r.summary());
    // identical training sets give identical fits
    assert_eq!(r.measured, 0.0);
    assert!(!r.conditions.iter().any(|c| c.relation == Relation::WithinRelative));
}

#[test]
fn decomposition_of_the_uniform_predictor() {
    // uniform wherever the extra cluster dominates, so the noise term is ln c
    let sim = SimConfig::default();
    let input = DecompositionInput { gamma: 0.3, n_mc: 20_000, prob_floor: 1e-6, seed: 4 };
    let r = verify_risk_decomposition(&sim, Predictor::UniformOnNoise, &input).unwrap();
    assert!(r.pass, "{}", r.summary());
    assert!((r.details["noise_term"] / 0.3 - 5f64.ln()).abs() < 0.02 * 5f64.ln());
}

#[test]
fn stationary_weights_keep_the_outer_loss_level() {
    // a classifier that never moves makes the meta-gradient vanish
    let (data, _) = build_data(&small_sim(1)).unwrap();
    let cfg = TrainerConfig { iterations: 30, eta_theta: 0.0, full_batch: true, eval_every: 10, ..TrainerConfig::default() };
    let out = train_trireweight(&data, &cfg, RunOptions::default()).unwrap();
    assert!(out.metrics.trace.iter().all(|s| (s.after - s.before).abs() <= 1e-9 && s.meta_grad_norm == 0.0));
    let r = verify_theorem_4_5(&out.metrics, &DescentInput::default()).unwrap();
    assert!(r.pass, "{}", r.summary());
    assert_eq!(r.details["level_steps"], 30.0);
}

#[test]
fn plain_descent_without_generated_data_is_monotone() {
    let (mut data, _) = build_data(&small_sim(2)).unwrap();
    data.pool = GeneratedPool::empty();
    let cfg =
        TrainerConfig { iterations: 200, eta_theta: 0.01, eta_alpha: 0.0, full_batch: true, eval_every: 50, ..TrainerConfig::default() };
    let out = train_trireweight(&data, &cfg, RunOptions::default()).unwrap();
    let r = verify_theorem_4_5(&out.metrics, &DescentInput::default()).unwrap();
    assert!(r.pass, "{}", r.summary());
}

#[test]
fn exact_descent_refuses_stochastic_runs() {
    let (data, _) = build_data(&small_sim(3)).unwrap();
    let cfg = TrainerConfig { iterations: 20, eval_every: 10, ..TrainerConfig::default() };
    let out = train_trireweight(&data, &cfg, RunOptions::default()).unwrap();
    assert!(matches!(verify_theorem_4_5(&out.metrics, &DescentInput::default()), Err(Error::Config(_))));
    let relaxed = DescentInput { mode: DescentMode::Relaxed, ..DescentInput::default() };
    assert!(verify_theorem_4_5(&out.metrics, &relaxed).is_ok());
}

#[test]
fn empty_pool_makes_all_three_coincide() {
    let cfg = TrainerConfig { iterations: 100, eval_every: 50, ..TrainerConfig::default() };
    let mut learned = Vec::new();
    let mut sl = Vec::new();
    let mut nsl = Vec::new();
    for seed in 0..3 {
        let (mut data, _) = build_data(&small_sim(seed)).unwrap();
        data.pool = GeneratedPool::empty();
        let cfg = TrainerConfig { seed, ..cfg.clone() };
        let risk = |m| {
            let out = train(m, &data, &cfg, RunOptions::default()).unwrap();
            evaluate(&out.theta, &data.originals, 1e-6).unwrap().risk
        };
        learned.push(SeedRisk { seed, risk: risk(Method::TriReWeight) });
        sl.push(SeedRisk { seed, risk: risk(Method::Sl) });
        nsl.push(SeedRisk { seed, risk: risk(Method::Nsl) });
        assert_eq!(learned.last().unwrap().risk.to_bits(), sl.last().unwrap().risk.to_bits());
        assert_eq!(nsl.last().unwrap().risk.to_bits(), sl.last().unwrap().risk.to_bits());
    }
    let representable = check_representability(&build_data(&small_sim(0)).unwrap().0, &cfg).unwrap();
    let r = verify_theorem_4_3(&learned, &sl, &nsl, Some(representable), &OrderingInput { majority: 3, ..OrderingInput::default() })
        .unwrap();
    assert!(r.pass, "{}", r.summary());
    assert_eq!(r.details["largest_excess"], 0.0);
}

/// The no-connection-only objective against both baselines, as a special
/// case of the ordering check.
#[test]
fn no_connection_only_is_never_worse() {
    let mut cfg = TrainerConfig::default();
    cfg.loss.supervision = SupervisionFlags::new(false, false, true);
    let runs = run_campaign(&SimConfig::default(), &cfg, &[0, 1, 2, 3, 4]).unwrap();
    let risks = |f: fn(&PairedRun) -> f64| runs.iter().map(|r| SeedRisk { seed: r.seed, risk: f(r) }).collect::<Vec<_>>();
    let r = verify_theorem_4_3(
        &risks(|r| r.learned_risk),
        &risks(|r| r.sl_risk),
        &risks(|r| r.nsl_risk),
        None,
        &OrderingInput::default(),
    )
    .unwrap();
    assert!(r.pass, "{} {:?}", r.summary(), r.details);
}

#[test]
fn trend_input_contract() {
    let base = TrendInput::default();
    for bad in [
        TrendInput { n_values: vec![100], ..base.clone() },
        TrendInput { n_values: vec![50, 100, 100, 200], ..base.clone() },
        TrendInput { n_values: vec![50, 100, 200, 401], ..base.clone() },
    ] {
        assert!(matches!(verify_generalization_trend(&bad), Err(Error::Config(_))));
    }
    assert!(matches!(verify_generalization_trend(&TrendInput { seeds: vec![], ..base }), Err(Error::Empty(_))));
}

#[test]
fn slope_confidence_interval_covers_a_noisy_power_law() {
    let x: Vec<f64> = [50.0f64, 100.0, 200.0, 400.0, 800.0].iter().map(|v| v.ln()).collect();
    let wiggle = [0.01, -0.02, 0.015, -0.005, 0.0];
    let y: Vec<f64> = x.iter().zip(wiggle).map(|(a, w)| -0.5 * a + 1.0 + w).collect();
    let (slope, se) = ols_slope(&x, &y);
    assert!((slope + 0.5).abs() < 4.0 * se + 1e-12);
    assert!(se > 0.0);
}

#[test]
fn separation_reference_weights() {
    let noisy: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
    let constant = weight_noise_separation(&vec![0.4; 100], &noisy, None).unwrap();
    assert_eq!(constant.measured, 0.5);
    assert!(!constant.pass);
    let oracle: Vec<f64> = noisy.iter().map(|&n| if n { 0.0 } else { 1.0 }).collect();
    let r = weight_noise_separation(&oracle, &noisy, Some(0.8)).unwrap();
    assert_eq!(r.measured, 1.0);
    assert!(r.pass);
    let one_group = weight_noise_separation(&oracle, &[false; 100], None).unwrap();
    assert!(!one_group.applicable && !one_group.pass);
}

#[test]
fn reports_serialize_with_a_stable_schema() {
    let r = weight_noise_separation(&[0.9, 0.8, 0.1, 0.2, 0.7], &[false, false, true, true, false], None).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in ["check", "inputs", "measured", "target", "tolerance", "pass", "stderr", "samples"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    io::write_report_summary(&path, &[r.clone(), r]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().starts_with("check"));
}

fn relation() -> impl Strategy<Value = Relation> {
    prop_oneof![
        Just(Relation::AtMost),
        Just(Relation::AtLeast),
        Just(Relation::Above),
        Just(Relation::Within),
        Just(Relation::WithinRelative),
    ]
}

proptest! {
    #[test]
    fn verdicts_recompute_identically(
        conds in proptest::collection::vec((-10.0f64..10.0, relation(), -10.0f64..10.0, 0.0f64..2.0), 1..6),
    ) {
        let conditions: Vec<Condition> =
            conds.iter().map(|&(m, rel, t, tol)| Condition::new("c", m, rel, t, tol)).collect();
        let r = VerificationReport::from_conditions("x", serde_json::json!({}), conditions);
        prop_assert_eq!(r.pass, r.recompute());
        prop_assert_eq!(r.recompute(), r.recompute());
        prop_assert_eq!(r.pass, r.conditions.iter().all(|c| c.pass));
        let back: VerificationReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back.recompute(), r.pass);
    }
}
