//! Cross-entropy, triplet and consistency losses, and their weighted
//! composition into the inner (classifier) and outer (weight) objectives.
//!
//! Each loss exists twice: as a plain function on slices, and as a graph
//! builder producing one value per batch row. The objectives are only built as
//! graphs, so their gradients (and gradients through their gradients) come
//! from the autodiff engine.

use rwlab_autodiff::{evaluate, Bindings, Expr, Graph, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::datasim::{perturb, GeneratedPool, OriginalDataset, Triplet};
use crate::error::{Error, Result};
use crate::models::{
    classifier_forward, one_hot, stack_rows, weightnet_forward, ClassifierNodes, ClassifierParams, ForwardResult, ModelConfig,
    TripletSpace, WeightNetNodes, WeightNetParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencySpace {
    Probs,
    Logits,
}

/// Which kinds of supervision generated samples receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionFlags {
    /// Classification loss with the origin's label.
    pub strong: bool,
    /// Triplet loss against the origin and an original of another class.
    pub pairwise: bool,
    /// Consistency under perturbation, no label at all.
    pub no_connection: bool,
}

impl Default for SupervisionFlags {
    fn default() -> Self {
        SupervisionFlags { strong: false, pairwise: true, no_connection: true }
    }
}

impl SupervisionFlags {
    pub const fn new(strong: bool, pairwise: bool, no_connection: bool) -> Self {
        SupervisionFlags { strong, pairwise, no_connection }
    }

    pub fn any(&self) -> bool {
        self.strong || self.pairwise || self.no_connection
    }

    /// The seven non-empty combinations, single flags first.
    pub fn all_combos() -> Vec<SupervisionFlags> {
        vec![
            Self::new(true, false, false),
            Self::new(false, true, false),
            Self::new(false, false, true),
            Self::new(true, true, false),
            Self::new(true, false, true),
            Self::new(false, true, true),
            Self::new(true, true, true),
        ]
    }

    /// Short label such as `pairwise+no_connection`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.strong {
            parts.push("strong");
        }
        if self.pairwise {
            parts.push("pairwise");
        }
        if self.no_connection {
            parts.push("no_connection");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        let mut f = SupervisionFlags::new(false, false, false);
        for part in label.split('+').map(str::trim) {
            match part {
                "strong" => f.strong = true,
                "pairwise" => f.pairwise = true,
                "no_connection" => f.no_connection = true,
                other => return Err(Error::Config(format!("unknown supervision kind `{other}`"))),
            }
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Mix between triplet (beta) and consistency (1 - beta).
    pub beta: f64,
    pub margin: f64,
    pub prob_floor: f64,
    /// Scale of the perturbation used by the consistency term.
    pub consistency_sigma: f64,
    pub consistency_space: ConsistencySpace,
    pub supervision: SupervisionFlags,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.5,
            margin: 0.2,
            prob_floor: 1e-6,
            consistency_sigma: 0.5,
            consistency_space: ConsistencySpace::Probs,
            supervision: SupervisionFlags::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("loss.beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("loss.margin must be > 0, got {}", self.margin)));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-3) {
            return Err(Error::Config(format!("loss.prob_floor must lie in (0, 1e-3], got {}", self.prob_floor)));
        }
        if !(self.consistency_sigma >= 0.0 && self.consistency_sigma.is_finite()) {
            return Err(Error::Config("loss.consistency_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Largest value the clamped cross-entropy can take.
    pub fn loss_bound(&self) -> f64 {
        -self.prob_floor.ln()
    }
}

/// `-log(max(probs[y], floor))`.
pub fn ce_loss(probs: &[f64], y: usize, prob_floor: f64) -> Result<f64> {
    let p = *probs.get(y).ok_or(Error::LabelOutOfRange { label: y, classes: probs.len() })?;
    Ok(-p.max(prob_floor).ln())
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), found: b.len() });
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(d(a, p) - d(a, n) + margin, 0)` with Euclidean `d`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    check_len(anchor, positive)?;
    check_len(anchor, negative)?;
    Ok((euclid(anchor, positive) - euclid(anchor, negative) + margin).max(0.0))
}

/// Squared Euclidean distance.
pub fn consistency_loss(perturbed: &[f64], clean: &[f64]) -> Result<f64> {
    check_len(perturbed, clean)?;
    Ok(perturbed.iter().zip(clean).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Row-wise clamped cross-entropy, `[batch, 1]`.
pub fn ce_rows(g: &mut Graph, probs: Expr, onehot: Expr, prob_floor: f64) -> Result<Expr> {
    let picked = g.mul(probs, onehot)?;
    let picked = g.sum_rows(picked)?;
    let floor = g.scalar(prob_floor);
    let clamped = g.max(picked, floor)?;
    let l = g.log(clamped);
    Ok(g.neg(l))
}

/// Row-wise triplet hinge on `[batch, k]` representations, `[batch, 1]`.
pub fn triplet_rows(g: &mut Graph, anchor: Expr, positive: Expr, negative: Expr, margin: f64) -> Result<Expr> {
    let dist = |g: &mut Graph, other: Expr| -> Result<Expr> {
        let diff = g.sub(anchor, other)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum_rows(sq)?;
        Ok(g.sqrt(s))
    };
    let dp = dist(g, positive)?;
    let dn = dist(g, negative)?;
    let gap = g.sub(dp, dn)?;
    let m = g.scalar(margin);
    let shifted = g.add(gap, m)?;
    let zero = g.scalar(0.0);
    Ok(g.max(shifted, zero)?)
}

/// Row-wise squared distance, `[batch, 1]`.
pub fn consistency_rows(g: &mut Graph, perturbed: Expr, clean: Expr) -> Result<Expr> {
    let diff = g.sub(perturbed, clean)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum_rows(sq)?)
}

/// Inputs describing a batch of generated samples and their triplets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratedNodes {
    pub anchor: Expr,
    pub perturbed: Expr,
    pub positive: Expr,
    pub negative: Expr,
    /// Origin labels, one-hot. Read only by the strong-supervision term.
    pub origin_onehot: Expr,
}

impl GeneratedNodes {
    pub fn declare(g: &mut Graph, prefix: &str, rows: usize, dim: usize, classes: usize) -> Result<Self> {
        let s = Shape::new(rows, dim);
        Ok(GeneratedNodes {
            anchor: g.input(&format!("{prefix}.anchor"), s)?,
            perturbed: g.input(&format!("{prefix}.perturbed"), s)?,
            positive: g.input(&format!("{prefix}.positive"), s)?,
            negative: g.input(&format!("{prefix}.negative"), s)?,
            origin_onehot: g.input(&format!("{prefix}.origin_onehot"), Shape::new(rows, classes))?,
        })
    }
}

/// Numeric values for [`GeneratedNodes`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedBatch {
    pub anchor: Tensor,
    pub perturbed: Tensor,
    pub positive: Tensor,
    pub negative: Tensor,
    pub origin_onehot: Tensor,
}

impl GeneratedBatch {
    /// Gathers triplet members; anchor `k` is perturbed with seed `perturb_seed(k)`.
    pub fn assemble(
        pool: &GeneratedPool,
        originals: &OriginalDataset,
        triplets: &[Triplet],
        sigma: f64,
        perturb_seed: impl Fn(usize) -> u64,
    ) -> Result<Self> {
        let dim = originals.dim;
        let anchors: Vec<&[f64]> = triplets.iter().map(|t| pool.samples[t.anchor].features.as_slice()).collect();
        let perturbed: Vec<Vec<f64>> =
            anchors.iter().enumerate().map(|(k, a)| perturb(a, sigma, perturb_seed(k))).collect();
        let pos: Vec<&[f64]> = triplets.iter().map(|t| originals.samples[t.positive].features.as_slice()).collect();
        let neg: Vec<&[f64]> = triplets.iter().map(|t| originals.samples[t.negative].features.as_slice()).collect();
        let labels: Vec<usize> = triplets.iter().map(|t| originals.samples[t.positive].label).collect();
        Ok(GeneratedBatch {
            anchor: stack_rows(&anchors, dim)?,
            perturbed: stack_rows(&perturbed, dim)?,
            positive: stack_rows(&pos, dim)?,
            negative: stack_rows(&neg, dim)?,
            origin_onehot: one_hot(&labels, originals.classes)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.anchor.shape().rows
    }

    pub fn bind(&self, b: &mut Bindings, prefix: &str) {
        b.insert(format!("{prefix}.anchor"), self.anchor.clone())
            .insert(format!("{prefix}.perturbed"), self.perturbed.clone())
            .insert(format!("{prefix}.positive"), self.positive.clone())
            .insert(format!("{prefix}.negative"), self.negative.clone())
            .insert(format!("{prefix}.origin_onehot"), self.origin_onehot.clone());
    }
}

/// Where per-sample weights of generated samples come from.
#[derive(Clone, Copy, Debug)]
pub enum WeightSource<'a> {
    Net(&'a WeightNetNodes),
    /// The same weight for every sample (1 for unweighted training, 0 to
    /// switch generated samples off while keeping the graph shape).
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InnerNodes {
    pub total: Expr,
    pub original_ce: Expr,
    /// Mean weighted generated-sample loss.
    pub generated: Option<Expr>,
    /// Per-sample weights, `[batch, 1]`.
    pub weights: Option<Expr>,
}

/// Mean clamped cross-entropy of the classifier on `(x, onehot)`.
pub fn outer_loss_graph(g: &mut Graph, theta: &ClassifierNodes, x: Expr, onehot: Expr, prob_floor: f64) -> Result<Expr> {
    let fwd = classifier_forward(g, x, theta)?;
    let rows = ce_rows(g, fwd.probs, onehot, prob_floor)?;
    Ok(g.mean(rows))
}

/// Mean CE over the original batch plus the mean over generated samples of
/// `w * (beta * triplet + (1 - beta) * consistency [+ strong CE])`, each term
/// gated by its supervision flag.
pub fn inner_loss_graph(
    g: &mut Graph,
    theta: &ClassifierNodes,
    x_orig: Expr,
    y_orig: Expr,
    generated: Option<(&GeneratedNodes, WeightSource<'_>)>,
    loss: &LossConfig,
    model: &ModelConfig,
) -> Result<InnerNodes> {
    let original_ce = outer_loss_graph(g, theta, x_orig, y_orig, loss.prob_floor)?;
    let Some((gen, source)) = generated else {
        return Ok(InnerNodes { total: original_ce, original_ce, generated: None, weights: None });
    };
    let flags = loss.supervision;
    if !flags.any() {
        return Err(Error::Config("generated samples are used but every supervision flag is off".into()));
    }
    let anchor = classifier_forward(g, gen.anchor, theta)?;
    let positive = classifier_forward(g, gen.positive, theta)?;

    let mut terms = Vec::new();
    if flags.pairwise {
        let negative = classifier_forward(g, gen.negative, theta)?;
        let pick = |f: &ForwardResult| match model.triplet_space {
            TripletSpace::Embedding => f.embedding,
            TripletSpace::Probs => f.probs,
        };
        let phi = triplet_rows(g, pick(&anchor), pick(&positive), pick(&negative), loss.margin)?;
        terms.push(g.scale(phi, loss.beta));
    }
    if flags.no_connection {
        let perturbed = classifier_forward(g, gen.perturbed, theta)?;
        let omega = match loss.consistency_space {
            ConsistencySpace::Probs => consistency_rows(g, perturbed.probs, anchor.probs)?,
            ConsistencySpace::Logits => consistency_rows(g, perturbed.logits, anchor.logits)?,
        };
        terms.push(g.scale(omega, 1.0 - loss.beta));
    }
    if flags.strong {
        terms.push(ce_rows(g, anchor.probs, gen.origin_onehot, loss.prob_floor)?);
    }
    let mut bracket = terms[0];
    for &t in &terms[1..] {
        bracket = g.add(bracket, t)?;
    }

    let rows = g.shape(gen.anchor).rows;
    let weights = match source {
        WeightSource::Net(alpha) => {
            let a = g.detach(anchor.embedding);
            let o = alpha.w_origin.map(|_| positive.embedding).map(|e| g.detach(e));
            weightnet_forward(g, a, o, alpha)?
        }
        WeightSource::Fixed(v) => g.constant(Tensor::filled(Shape::new(rows, 1), v)),
    };
    let weighted = g.mul(weights, bracket)?;
    let generated = g.mean(weighted);
    let total = g.add(original_ce, generated)?;
    Ok(InnerNodes { total, original_ce, generated: Some(generated), weights: Some(weights) })
}

/// Weight parameters for the numeric objective wrappers.
#[derive(Clone, Copy, Debug)]
pub enum Weights<'a> {
    Net(&'a WeightNetParams),
    Fixed(f64),
}

/// Value of the inner objective for concrete parameters and batches.
pub fn inner_loss(
    theta: &ClassifierParams,
    weights: Weights<'_>,
    x_orig: &Tensor,
    y_orig: &[usize],
    generated: Option<&GeneratedBatch>,
    loss: &LossConfig,
    model: &ModelConfig,
) -> Result<f64> {
    if y_orig.is_empty() {
        return Err(Error::Empty("original batch"));
    }
    let (dim, classes) = (theta.dim(), theta.classes());
    let mut g = Graph::new();
    let nodes = theta.declare(&mut g)?;
    let x = g.input("x", Shape::new(y_orig.len(), dim))?;
    let y = g.input("y", Shape::new(y_orig.len(), classes))?;
    let mut b = Bindings::new();
    theta.bind(&mut b);
    b.insert("x", x_orig.clone()).insert("y", one_hot(y_orig, classes)?);

    let gen_nodes = match generated {
        Some(batch) if batch.rows() > 0 => {
            batch.bind(&mut b, "gen");
            Some(GeneratedNodes::declare(&mut g, "gen", batch.rows(), dim, classes)?)
        }
        _ => None,
    };
    let alpha_nodes = match weights {
        Weights::Net(alpha) => {
            alpha.bind(&mut b);
            Some(alpha.declare(&mut g)?)
        }
        Weights::Fixed(_) => None,
    };
    let source = match (&alpha_nodes, weights) {
        (Some(n), _) => WeightSource::Net(n),
        (None, Weights::Fixed(v)) => WeightSource::Fixed(v),
        (None, Weights::Net(_)) => unreachable!(),
    };
    let inner = inner_loss_graph(&mut g, &nodes, x, y, gen_nodes.as_ref().map(|n| (n, source)), loss, model)?;
    Ok(evaluate(&g, inner.total, &b)?.item().expect("scalar"))
}

/// Mean clamped cross-entropy of `theta` on a labeled set.
pub fn outer_loss(theta: &ClassifierParams, set: &OriginalDataset, prob_floor: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("outer set"));
    }
    let rows: Vec<&[f64]> = set.samples.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<usize> = set.labels().collect();
    let x_val = stack_rows(&rows, set.dim)?;
    let mut g = Graph::new();
    let nodes = theta.declare(&mut g)?;
    let x = g.input("x", x_val.shape())?;
    let y = g.input("y", Shape::new(labels.len(), theta.classes()))?;
    let l = outer_loss_graph(&mut g, &nodes, x, y, prob_floor)?;
    let mut b = Bindings::new();
    theta.bind(&mut b);
    b.insert("x", x_val).insert("y", one_hot(&labels, theta.classes())?);
    Ok(evaluate(&g, l, &b)?.item().expect("scalar"))
}
