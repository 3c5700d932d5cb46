//! Alternating bi-level optimization of classifier and weight network, the
//! two baselines, and the supervision ablation.
//!
//! Every iteration draws an original batch and a generated batch, builds
//! triplets, takes one SGD step on the classifier under the current weights
//! and then one projected SGD step on the weight network along the gradient
//! of the post-step classification loss (differentiated through the step).
//!
//! The objective graph is built once per run; iterations only rebind inputs.
//! All randomness is addressed by `(seed, stream, iteration)`, so a run
//! resumed from a checkpoint continues exactly as if never interrupted.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use rwlab_autodiff::{
    gradient_by_name, second_order_gradient, AdError, Bindings, Expr, GradMap, Graph, Session, Shape, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::datasim::{sample_triplets, GeneratedPool, OriginalDataset};
use crate::error::{Error, Result};
use crate::losses::{
    inner_loss_graph, outer_loss_graph, GeneratedBatch, GeneratedNodes, LossConfig, SupervisionFlags, WeightSource,
};
use crate::models::{
    init_params, one_hot, predict_probs, project_unit_ball, stack_rows, weightnet_forward, ClassifierNodes,
    ClassifierParams, ModelConfig, WeightNetParams, CLS_NAMES,
};
use crate::rng::{self, Stream};

const LOSS_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    pub eta_theta: f64,
    /// Step size of the weight network. The meta-gradient carries a factor
    /// `eta_theta / batch_generated`, so useful values are large.
    pub eta_alpha: f64,
    pub batch_original: usize,
    pub batch_generated: usize,
    /// Fraction of originals held out as the outer (meta) set; 0 uses the
    /// training originals themselves.
    pub meta_split_fraction: f64,
    pub eval_every: usize,
    /// Checkpoint cadence in iterations; `None` means `10 * eval_every`, 0 disables.
    pub checkpoint_every: Option<usize>,
    /// Use every original and every generated sample in each iteration, with
    /// triplets and perturbations fixed across iterations.
    pub full_batch: bool,
    /// Replace the weight network by a constant weight.
    pub weight_override: Option<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub model: ModelConfig,
    #[serde(skip)]
    pub loss: LossConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            iterations: 2000,
            eta_theta: 0.05,
            eta_alpha: 100.0,
            batch_original: 32,
            batch_generated: 64,
            meta_split_fraction: 0.0,
            eval_every: 25,
            checkpoint_every: None,
            full_batch: false,
            weight_override: None,
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.eta_theta >= 0.0 && self.eta_theta.is_finite()) {
            return fail("trainer.eta_theta must be finite and >= 0");
        }
        if !(self.eta_alpha >= 0.0 && self.eta_alpha.is_finite()) {
            return fail("trainer.eta_alpha must be finite and >= 0");
        }
        if self.batch_original == 0 || self.batch_generated == 0 {
            return fail("trainer batch sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.meta_split_fraction) {
            return fail("trainer.meta_split_fraction must lie in [0, 1)");
        }
        if self.eval_every == 0 {
            return fail("trainer.eval_every must be >= 1");
        }
        if let Some(w) = self.weight_override {
            if !(0.0..=1.0).contains(&w) {
                return fail("trainer.weight_override must lie in [0, 1]");
            }
        }
        self.model.validate()?;
        self.loss.validate()
    }

    pub fn checkpoint_cadence(&self) -> usize {
        self.checkpoint_every.unwrap_or(self.eval_every * 10)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TriReWeight,
    Sl,
    Nsl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TriReWeight => "trireweight",
            Method::Sl => "sl",
            Method::Nsl => "nsl",
        }
    }
}

/// Training inputs. The pool carries no ground truth about noise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub originals: OriginalDataset,
    pub pool: GeneratedPool,
    pub test: Option<OriginalDataset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub t: usize,
    pub l_cls: f64,
    pub l_weight: f64,
    pub train_accuracy: f64,
    pub train_risk: f64,
    pub test_accuracy: Option<f64>,
    pub test_risk: Option<f64>,
    pub mean_weight: Option<f64>,
    pub mean_weight_clean: Option<f64>,
    pub mean_weight_noisy: Option<f64>,
}

/// Outer loss on the iteration's outer batch before and after the classifier step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    pub t: usize,
    pub before: f64,
    pub after: f64,
    pub meta_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub origin_index: usize,
    pub gen_index: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub trace: Vec<DescentStep>,
    /// Per-sample weights at `t = T`, in pool order.
    pub weights: Option<Vec<WeightRow>>,
    /// Whether every step ran on the full data with fixed triplets.
    pub full_batch: bool,
    /// Outer loss on the whole outer set at `t = 0` and at the last step run.
    #[serde(default)]
    pub initial_risk: Option<f64>,
    #[serde(default)]
    pub final_risk: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub risk: f64,
}

/// Accuracy and mean clamped cross-entropy of `theta` on `set`.
pub fn evaluate(theta: &ClassifierParams, set: &OriginalDataset, prob_floor: f64) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let rows: Vec<&[f64]> = set.samples.iter().map(|s| s.features.as_slice()).collect();
    let probs = predict_probs(theta, &stack_rows(&rows, set.dim)?)?;
    let (mut hits, mut risk) = (0usize, 0.0);
    for (i, s) in set.samples.iter().enumerate() {
        let row = probs.row_slice(i);
        let best = row
            .iter()
            .enumerate()
            .fold(0, |b, (k, &p)| if p > row[b] { k } else { b });
        hits += usize::from(best == s.label);
        risk += -row[s.label].max(prob_floor).ln();
    }
    let n = set.len() as f64;
    Ok(Evaluation { accuracy: hits as f64 / n, risk: risk / n })
}

/// Weight the network assigns to every pool sample, in pool order.
pub fn pool_weights(
    theta: &ClassifierParams,
    alpha: &WeightNetParams,
    pool: &GeneratedPool,
    originals: &OriginalDataset,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let anchors: Vec<&[f64]> = pool.samples.iter().map(|s| s.features.as_slice()).collect();
    let origins: Vec<&[f64]> =
        pool.samples.iter().map(|s| originals.samples[s.origin_index].features.as_slice()).collect();
    let (a_val, o_val) = (stack_rows(&anchors, originals.dim)?, stack_rows(&origins, originals.dim)?);
    let mut g = Graph::new();
    let nodes = theta.declare(&mut g)?;
    let alpha_nodes = alpha.declare(&mut g)?;
    let a = g.input("anchor", a_val.shape())?;
    let o = g.input("origin", o_val.shape())?;
    let fa = crate::models::classifier_forward(&mut g, a, &nodes)?;
    let fo = crate::models::classifier_forward(&mut g, o, &nodes)?;
    let origin_emb = alpha_nodes.w_origin.map(|_| fo.embedding);
    let w = weightnet_forward(&mut g, fa.embedding, origin_emb, &alpha_nodes)?;
    let mut b = Bindings::new();
    theta.bind(&mut b);
    alpha.bind(&mut b);
    b.insert("anchor", a_val).insert("origin", o_val);
    Ok(rwlab_autodiff::evaluate(&g, w, &b)?.into_data())
}

/// Serialized parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl StoredTensor {
    fn from_tensor(t: &Tensor) -> Self {
        StoredTensor { shape: [t.shape().rows, t.shape().cols], values: t.data().to_vec() }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(Shape::new(self.shape[0], self.shape[1]), self.values.clone())?)
    }
}

/// Resumable state: parameters, progress and metrics so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub method: Method,
    pub t: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, StoredTensor>,
    pub ball_radius: f64,
    pub metrics: RunMetrics,
}

impl Checkpoint {
    pub fn theta(&self, template: &ClassifierParams) -> Result<ClassifierParams> {
        let mut out = template.clone();
        for p in &mut out.params {
            let stored = self.params.get(&p.name).ok_or_else(|| Error::Schema {
                file: "checkpoint".into(),
                detail: format!("missing parameter {}", p.name),
            })?;
            p.value = stored.to_tensor()?;
        }
        Ok(out)
    }

    pub fn alpha(&self, template: &WeightNetParams) -> Result<Option<WeightNetParams>> {
        if !template.params.iter().all(|p| self.params.contains_key(&p.name)) {
            return Ok(None);
        }
        let mut out = template.clone();
        out.ball_radius = self.ball_radius;
        for p in &mut out.params {
            p.value = self.params[&p.name].to_tensor()?;
        }
        Ok(Some(out))
    }
}

/// Full configuration echo, including the model and loss sections.
pub fn config_echo(cfg: &TrainerConfig) -> serde_json::Value {
    serde_json::json!({
        "trainer": cfg,
        "model": cfg.model,
        "loss": cfg.loss,
    })
}

/// Per-run hooks and options.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Maps pool weights to (mean over clean, mean over noisy). Supplied by
    /// verification code; the trainer never sees which samples are noisy.
    pub probe: Option<&'a (dyn Fn(&[f64]) -> (Option<f64>, Option<f64>) + Sync)>,
    pub on_checkpoint: Option<&'a mut dyn FnMut(&Checkpoint) -> Result<()>>,
    /// Stop (with a final checkpoint) once this many iterations are done.
    pub stop_after: Option<usize>,
    pub resume: Option<Checkpoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub method: Method,
    pub theta: ClassifierParams,
    pub alpha: Option<WeightNetParams>,
    pub metrics: RunMetrics,
    /// Iterations completed; below `T` when stopped early.
    pub iterations_done: usize,
}

impl TrainOutcome {
    pub fn finished(&self, cfg: &TrainerConfig) -> bool {
        self.iterations_done >= cfg.iterations
    }
}

struct Program {
    graph: Graph,
    inner_total: Expr,
    theta_next: [Expr; 4],
    outer_before: Expr,
    outer_after: Expr,
    meta: Option<GradMap>,
    gen_rows: usize,
    meta_rows: Option<usize>,
    orig_rows: usize,
}

enum Weighting {
    Net,
    Fixed(f64),
}

fn build_program(
    method: Method,
    cfg: &TrainerConfig,
    theta: &ClassifierParams,
    alpha: &WeightNetParams,
    rows: (usize, usize, Option<usize>),
) -> Result<Program> {
    let (orig_rows, gen_rows, meta_rows) = rows;
    let (dim, classes) = (theta.dim(), theta.classes());
    let mut g = Graph::new();
    let theta_nodes = theta.declare(&mut g)?;
    let x = g.input("x_orig", Shape::new(orig_rows, dim))?;
    let y = g.input("y_orig", Shape::new(orig_rows, classes))?;

    let weighting = match (method, cfg.weight_override) {
        (Method::Nsl, _) => Weighting::Fixed(1.0),
        (_, Some(w)) => Weighting::Fixed(w),
        _ => Weighting::Net,
    };
    let mut loss = cfg.loss.clone();
    if method == Method::Nsl {
        loss.supervision = SupervisionFlags::new(true, false, false);
    }
    let gen_nodes = if gen_rows > 0 && method != Method::Sl {
        Some(GeneratedNodes::declare(&mut g, "gen", gen_rows, dim, classes)?)
    } else {
        None
    };
    let alpha_nodes = match (&weighting, &gen_nodes) {
        (Weighting::Net, Some(_)) => Some(alpha.declare(&mut g)?),
        _ => None,
    };
    let source = match (&weighting, &alpha_nodes) {
        (_, Some(n)) => WeightSource::Net(n),
        (Weighting::Fixed(w), None) => WeightSource::Fixed(*w),
        (Weighting::Net, None) => WeightSource::Fixed(0.0),
    };
    let inner = inner_loss_graph(&mut g, &theta_nodes, x, y, gen_nodes.as_ref().map(|n| (n, source)), &loss, &cfg.model)?;

    let grads = gradient_by_name(&mut g, inner.total, &CLS_NAMES)?;
    let mut next = Vec::with_capacity(4);
    for (name, current) in CLS_NAMES.iter().zip(theta_nodes.as_array()) {
        let step = g.scale(grads.get(name).expect("requested"), cfg.eta_theta);
        next.push(g.sub(current, step)?);
    }
    let theta_next = [next[0], next[1], next[2], next[3]];

    let (xm, ym) = match meta_rows {
        Some(r) => (g.input("x_meta", Shape::new(r, dim))?, g.input("y_meta", Shape::new(r, classes))?),
        None => (x, y),
    };
    let outer_before = outer_loss_graph(&mut g, &theta_nodes, xm, ym, loss.prob_floor)?;
    let outer_after = outer_loss_graph(&mut g, &ClassifierNodes::from_array(theta_next), xm, ym, loss.prob_floor)?;
    let meta = match alpha_nodes {
        Some(_) => Some(second_order_gradient(&mut g, outer_after, &grads, &alpha.names())?),
        None => None,
    };
    Ok(Program {
        graph: g,
        inner_total: inner.total,
        theta_next,
        outer_before,
        outer_after,
        meta,
        gen_rows: gen_nodes.map_or(0, |_| gen_rows),
        meta_rows,
        orig_rows,
    })
}

fn diverged(iteration: usize, reason: impl Into<String>) -> Error {
    Error::Diverged { iteration, reason: reason.into() }
}

fn ad_at(iteration: usize) -> impl Fn(AdError) -> Error {
    move |e| match e {
        AdError::NumericOverflow { .. } => diverged(iteration, e.to_string()),
        other => Error::Autodiff(other),
    }
}

fn check_loss(iteration: usize, name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v > LOSS_LIMIT {
        return Err(diverged(iteration, format!("{name} = {v}")));
    }
    Ok(v)
}

/// Splits originals into (inner training indices, outer indices).
fn split_originals(n: usize, cfg: &TrainerConfig) -> (Vec<usize>, Option<Vec<usize>>) {
    let held = (cfg.meta_split_fraction * n as f64).floor() as usize;
    if held == 0 || held >= n {
        return ((0..n).collect(), None);
    }
    let mut rng = rng::rng(cfg.seed, Stream::MetaSplit, 0);
    let mut perm = index::sample(&mut rng, n, n).into_vec();
    let meta = perm.split_off(n - held);
    perm.sort_unstable();
    let mut meta = meta;
    meta.sort_unstable();
    (perm, Some(meta))
}

fn draw(pool: &[usize], k: usize, seed: u64, stream: Stream, t: u64) -> Vec<usize> {
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut rng = rng::rng(seed, stream, t);
    index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

fn rows_of(set: &OriginalDataset, idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| set.samples[i].features.as_slice()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| set.samples[i].label).collect();
    Ok((stack_rows(&rows, set.dim)?, one_hot(&labels, set.classes)?))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs one method. The three public entry points below are thin wrappers.
pub fn train(method: Method, data: &TrainData, cfg: &TrainerConfig, mut opts: RunOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let originals = &data.originals;
    if originals.is_empty() {
        return Err(Error::Empty("originals"));
    }
    let pool = if method == Method::Sl { GeneratedPool::empty() } else { data.pool.clone() };
    if let Some(bad) = pool.samples.iter().find(|s| s.origin_index >= originals.len()) {
        return Err(Error::Config(format!("pool sample refers to missing original {}", bad.origin_index)));
    }
    let (mut theta, mut alpha) = init_params(originals.dim, originals.classes, &cfg.model, cfg.seed)?;
    let mut metrics = RunMetrics { full_batch: cfg.full_batch, ..RunMetrics::default() };
    let mut start = 0;
    if let Some(ck) = opts.resume.take() {
        if ck.method != method || ck.seed != cfg.seed || ck.config != config_echo(cfg) {
            return Err(Error::Config("checkpoint does not belong to this configuration".into()));
        }
        theta = ck.theta(&theta)?;
        if let Some(a) = ck.alpha(&alpha)? {
            alpha = a;
        }
        metrics = ck.metrics;
        start = ck.t;
    }

    let (train_idx, meta_idx) = split_originals(originals.len(), cfg);
    let all_gen: Vec<usize> = (0..pool.len()).collect();
    let pick_rows = |avail: usize, batch: usize| if cfg.full_batch { avail } else { batch.min(avail) };
    let orig_rows = pick_rows(train_idx.len(), cfg.batch_original);
    let gen_rows = pick_rows(all_gen.len(), cfg.batch_generated);
    let meta_rows = meta_idx.as_ref().map(|m| pick_rows(m.len(), cfg.batch_original));
    let program = build_program(method, cfg, &theta, &alpha, (orig_rows, gen_rows, meta_rows))?;
    let uses_net = program.meta.is_some();
    let has_weights = method == Method::TriReWeight && !pool.is_empty();
    let outer_set = originals.select(meta_idx.as_deref().unwrap_or(&train_idx));
    if start == 0 {
        metrics.initial_risk = Some(evaluate(&theta, &outer_set, cfg.loss.prob_floor)?.risk);
    }

    let stop = opts.stop_after.unwrap_or(usize::MAX).min(cfg.iterations);
    let cadence = cfg.checkpoint_cadence();
    let mut t = start;
    while t < stop {
        let it = t + 1;
        let step_key = if cfg.full_batch { 0 } else { t as u64 };
        let mut b = Bindings::new();
        theta.bind(&mut b);
        let oi = draw(&train_idx, program.orig_rows, cfg.seed, Stream::BatchOriginal, step_key);
        let (xo, yo) = rows_of(originals, &oi)?;
        b.insert("x_orig", xo).insert("y_orig", yo);
        if program.gen_rows > 0 {
            let gi = draw(&all_gen, program.gen_rows, cfg.seed, Stream::BatchGenerated, step_key);
            let trips = sample_triplets(&gi, &pool, originals, rng::derive(cfg.seed, Stream::Triplets, step_key))?;
            let batch = GeneratedBatch::assemble(&pool, originals, &trips, cfg.loss.consistency_sigma, |k| {
                rng::derive2(cfg.seed, Stream::Perturbation, step_key, k as u64)
            })?;
            batch.bind(&mut b, "gen");
        }
        if let (Some(meta), Some(r)) = (&meta_idx, program.meta_rows) {
            let mi = draw(meta, r, cfg.seed, Stream::MetaSplit, step_key + 1);
            let (xm, ym) = rows_of(originals, &mi)?;
            b.insert("x_meta", xm).insert("y_meta", ym);
        }
        if uses_net {
            alpha.bind(&mut b);
        }

        let mut s = Session::new(&program.graph, &b);
        let err = ad_at(it);
        let l_cls = check_loss(it, "inner loss", s.eval_scalar(program.inner_total).map_err(&err)?)?;
        let before = check_loss(it, "outer loss", s.eval_scalar(program.outer_before).map_err(&err)?)?;
        let after = check_loss(it, "outer loss", s.eval_scalar(program.outer_after).map_err(&err)?)?;
        let mut next = Vec::with_capacity(4);
        for e in program.theta_next {
            next.push(s.eval(e).map_err(&err)?.clone());
        }
        let mut meta_norm = 0.0;
        let mut new_alpha = None;
        if let Some(meta) = &program.meta {
            let grads: BTreeMap<String, Tensor> =
                meta.iter().map(|(n, e)| Ok((n.to_owned(), s.eval(e).map_err(&err)?.clone()))).collect::<Result<_>>()?;
            meta_norm = grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
            let stepped = alpha.with_values(|name| {
                let cur = alpha.params.iter().find(|p| p.name == name).expect("own name");
                let gr = &grads[name];
                Tensor::new(cur.value.shape(), cur.value.data().iter().zip(gr.data()).map(|(a, d)| a - cfg.eta_alpha * d).collect())
                    .expect("same shape")
            });
            new_alpha = Some(project_unit_ball(&stepped));
        }
        drop(s);

        theta = theta.with_values(|name| {
            let k = CLS_NAMES.iter().position(|n| *n == name).expect("classifier block");
            next[k].clone()
        });
        if !theta.is_finite() {
            return Err(diverged(it, "classifier parameters became non-finite"));
        }
        if let Some(a) = new_alpha {
            if !a.is_finite() {
                return Err(diverged(it, "weight parameters became non-finite"));
            }
            alpha = a;
        }
        metrics.trace.push(DescentStep { t: it, before, after, meta_grad_norm: meta_norm });

        if it % cfg.eval_every == 0 {
            let train_eval = evaluate(&theta, originals, cfg.loss.prob_floor)?;
            let test_eval = data.test.as_ref().map(|t| evaluate(&theta, t, cfg.loss.prob_floor)).transpose()?;
            let (mut mw, mut clean, mut noisy) = (None, None, None);
            if has_weights {
                let w = match cfg.weight_override {
                    Some(v) => vec![v; pool.len()],
                    None => pool_weights(&theta, &alpha, &pool, originals)?,
                };
                mw = mean(&w);
                if let Some(probe) = opts.probe {
                    (clean, noisy) = probe(&w);
                }
            }
            metrics.records.push(MetricRecord {
                t: it,
                l_cls,
                l_weight: after,
                train_accuracy: train_eval.accuracy,
                train_risk: train_eval.risk,
                test_accuracy: test_eval.map(|e| e.accuracy),
                test_risk: test_eval.map(|e| e.risk),
                mean_weight: mw,
                mean_weight_clean: clean,
                mean_weight_noisy: noisy,
            });
        }
        t = it;
        let at_stop = t == stop && t < cfg.iterations;
        if (cadence > 0 && t % cadence == 0) || at_stop {
            if let Some(cb) = opts.on_checkpoint.as_mut() {
                cb(&checkpoint(method, cfg, t, &theta, &alpha, &metrics))?;
            }
        }
    }

    metrics.final_risk = Some(evaluate(&theta, &outer_set, cfg.loss.prob_floor)?.risk);
    if t >= cfg.iterations && has_weights && metrics.weights.is_none() {
        let w = match cfg.weight_override {
            Some(v) => vec![v; pool.len()],
            None => pool_weights(&theta, &alpha, &pool, originals)?,
        };
        metrics.weights = Some(
            pool.samples
                .iter()
                .zip(w)
                .map(|(s, weight)| WeightRow { origin_index: s.origin_index, gen_index: s.gen_index, weight })
                .collect(),
        );
    }
    Ok(TrainOutcome {
        method,
        theta,
        alpha: (method == Method::TriReWeight).then_some(alpha),
        metrics,
        iterations_done: t,
    })
}

pub fn checkpoint(
    method: Method,
    cfg: &TrainerConfig,
    t: usize,
    theta: &ClassifierParams,
    alpha: &WeightNetParams,
    metrics: &RunMetrics,
) -> Checkpoint {
    let mut params = BTreeMap::new();
    for p in &theta.params {
        params.insert(p.name.clone(), StoredTensor::from_tensor(&p.value));
    }
    if method == Method::TriReWeight {
        for p in &alpha.params {
            params.insert(p.name.clone(), StoredTensor::from_tensor(&p.value));
        }
    }
    Checkpoint {
        method,
        t,
        seed: cfg.seed,
        config: config_echo(cfg),
        params,
        ball_radius: alpha.ball_radius,
        metrics: metrics.clone(),
    }
}

pub fn train_trireweight(data: &TrainData, cfg: &TrainerConfig, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    train(Method::TriReWeight, data, cfg, opts)
}

/// Plain descent on the originals only.
pub fn train_baseline_sl(data: &TrainData, cfg: &TrainerConfig, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    train(Method::Sl, data, cfg, opts)
}

/// Originals plus every generated sample with its origin's label, weight 1.
pub fn train_baseline_nsl(data: &TrainData, cfg: &TrainerConfig, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    train(Method::Nsl, data, cfg, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub combo: String,
    pub seed: u64,
    pub test_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub combo: String,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
}

/// Runs TriReWeight once per `(combo, seed)` in parallel. `data_for_seed`
/// supplies the data of each replicate (with a test set); the trainer seed is
/// set to the replicate seed.
pub fn run_ablation_matrix(
    data_for_seed: &(dyn Fn(u64) -> Result<TrainData> + Sync),
    cfg: &TrainerConfig,
    combos: &[SupervisionFlags],
    seeds: &[u64],
) -> Result<Vec<AblationCell>> {
    if let Some(c) = combos.iter().find(|c| !c.any()) {
        return Err(Error::Config(format!("ablation combo `{}` has no supervision", c.label())));
    }
    let cells: Vec<(SupervisionFlags, u64)> =
        combos.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    Ok(cells
        .par_iter()
        .map(|&(combo, seed)| {
            let run = || -> Result<f64> {
                let data = data_for_seed(seed)?;
                let mut c = cfg.clone();
                c.seed = seed;
                c.loss.supervision = combo;
                let out = train_trireweight(&data, &c, RunOptions::default())?;
                let test = data.test.as_ref().ok_or(Error::Empty("test set"))?;
                Ok(evaluate(&out.theta, test, c.loss.prob_floor)?.accuracy)
            };
            match run() {
                Ok(acc) => AblationCell { combo: combo.label(), seed, test_accuracy: Some(acc), error: None },
                Err(e) => AblationCell { combo: combo.label(), seed, test_accuracy: None, error: Some(e.to_string()) },
            }
        })
        .collect())
}

/// Mean and sample standard deviation per combo, over successful cells, in
/// first-appearance order.
pub fn summarize_ablation(cells: &[AblationCell]) -> Vec<AblationSummary> {
    let mut order: Vec<String> = Vec::new();
    for c in cells {
        if !order.contains(&c.combo) {
            order.push(c.combo.clone());
        }
    }
    order
        .into_iter()
        .map(|combo| {
            let v: Vec<f64> = cells.iter().filter(|c| c.combo == combo).filter_map(|c| c.test_accuracy).collect();
            let m = mean(&v).unwrap_or(f64::NAN);
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            AblationSummary { combo, mean: m, sd, runs: v.len() }
        })
        .collect()
}
