//! Classifier `h(x; theta)` and weight network `w(anchor, origin; alpha)` as
//! graph builders, plus their parameter records.
//!
//! Both are one-hidden-layer tanh MLPs. The classifier maps `dim -> hidden ->
//! classes`; its hidden activations are the embedding the triplet loss and the
//! weight network look at. The weight network maps the (detached) embeddings of
//! a generated sample and of its origin to a sigmoid weight.

use rand::Rng;
use rwlab_autodiff::{Bindings, Expr, Graph, ParamVector, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInput {
    /// Anchor embedding and origin embedding.
    Pairwise,
    /// Anchor embedding only.
    Unary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletSpace {
    Embedding,
    Probs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub weight_hidden: usize,
    pub ball_radius: f64,
    pub weight_input: WeightInput,
    pub triplet_space: TripletSpace,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            weight_hidden: 16,
            ball_radius: 10.0,
            weight_input: WeightInput::Pairwise,
            triplet_space: TripletSpace::Embedding,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.weight_hidden == 0 {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return Err(Error::Config(format!("model.ball_radius must be > 0, got {}", self.ball_radius)));
        }
        Ok(())
    }
}

pub const CLS_W1: &str = "cls.w1";
pub const CLS_B1: &str = "cls.b1";
pub const CLS_W2: &str = "cls.w2";
pub const CLS_B2: &str = "cls.b2";
pub const CLS_NAMES: [&str; 4] = [CLS_W1, CLS_B1, CLS_W2, CLS_B2];

pub const WN_ANCHOR: &str = "wnet.w_anchor";
pub const WN_ORIGIN: &str = "wnet.w_origin";
pub const WN_B1: &str = "wnet.b1";
pub const WN_W2: &str = "wnet.w2";
pub const WN_B2: &str = "wnet.b2";

fn shape_of(params: &[ParamVector], name: &str) -> Option<Shape> {
    params.iter().find(|p| p.name == name).map(|p| p.value.shape())
}

fn l2(params: &[ParamVector]) -> f64 {
    params.iter().flat_map(|p| p.value.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Classifier weights, in the fixed order of [`CLS_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub params: Vec<ParamVector>,
}

impl ClassifierParams {
    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        let shapes = [
            Shape::new(dim, hidden),
            Shape::row(hidden),
            Shape::new(hidden, classes),
            Shape::row(classes),
        ];
        ClassifierParams {
            params: CLS_NAMES.iter().zip(shapes).map(|(n, s)| ParamVector::new(*n, Tensor::zeros(s))).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.params[0].value.shape().rows
    }

    pub fn hidden(&self) -> usize {
        self.params[0].value.shape().cols
    }

    pub fn classes(&self) -> usize {
        self.params[3].value.shape().cols
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn bind(&self, b: &mut Bindings) {
        for p in &self.params {
            b.insert(p.name.clone(), p.value.clone());
        }
    }

    pub fn declare(&self, g: &mut Graph) -> Result<ClassifierNodes> {
        let mut e = Vec::with_capacity(4);
        for p in &self.params {
            e.push(g.param(&p.name, p.value.shape())?);
        }
        Ok(ClassifierNodes { w1: e[0], b1: e[1], w2: e[2], b2: e[3] })
    }

    /// Replaces each block's values, keeping names and order.
    pub fn with_values(&self, mut values: impl FnMut(&str) -> Tensor) -> Self {
        ClassifierParams {
            params: self.params.iter().map(|p| ParamVector::new(p.name.clone(), values(&p.name))).collect(),
        }
    }
}

/// Weight-network parameters. `alpha` is the concatenation of all blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNetParams {
    pub params: Vec<ParamVector>,
    pub ball_radius: f64,
}

impl WeightNetParams {
    pub fn zeros(embed: usize, hidden: usize, input: WeightInput, ball_radius: f64) -> Self {
        let mut shapes = vec![(WN_ANCHOR, Shape::new(embed, hidden))];
        if input == WeightInput::Pairwise {
            shapes.push((WN_ORIGIN, Shape::new(embed, hidden)));
        }
        shapes.extend([(WN_B1, Shape::row(hidden)), (WN_W2, Shape::new(hidden, 1)), (WN_B2, Shape::scalar())]);
        WeightNetParams {
            params: shapes.into_iter().map(|(n, s)| ParamVector::new(n, Tensor::zeros(s))).collect(),
            ball_radius,
        }
    }

    pub fn input(&self) -> WeightInput {
        if shape_of(&self.params, WN_ORIGIN).is_some() {
            WeightInput::Pairwise
        } else {
            WeightInput::Unary
        }
    }

    pub fn embed(&self) -> usize {
        self.params[0].value.shape().rows
    }

    pub fn norm(&self) -> f64 {
        l2(&self.params)
    }

    pub fn len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn bind(&self, b: &mut Bindings) {
        for p in &self.params {
            b.insert(p.name.clone(), p.value.clone());
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn declare(&self, g: &mut Graph) -> Result<WeightNetNodes> {
        let mut get = |name: &str| -> Result<Option<Expr>> {
            match shape_of(&self.params, name) {
                Some(s) => Ok(Some(g.param(name, s)?)),
                None => Ok(None),
            }
        };
        Ok(WeightNetNodes {
            w_anchor: get(WN_ANCHOR)?.expect("always present"),
            w_origin: get(WN_ORIGIN)?,
            b1: get(WN_B1)?.expect("always present"),
            w2: get(WN_W2)?.expect("always present"),
            b2: get(WN_B2)?.expect("always present"),
        })
    }

    pub fn with_values(&self, mut values: impl FnMut(&str) -> Tensor) -> Self {
        WeightNetParams {
            params: self.params.iter().map(|p| ParamVector::new(p.name.clone(), values(&p.name))).collect(),
            ball_radius: self.ball_radius,
        }
    }
}

/// Graph handles for classifier weights. They may be parameters or any
/// expressions of matching shape, e.g. the result of an update step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierNodes {
    pub w1: Expr,
    pub b1: Expr,
    pub w2: Expr,
    pub b2: Expr,
}

impl ClassifierNodes {
    pub fn as_array(&self) -> [Expr; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn from_array(e: [Expr; 4]) -> Self {
        ClassifierNodes { w1: e[0], b1: e[1], w2: e[2], b2: e[3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightNetNodes {
    pub w_anchor: Expr,
    pub w_origin: Option<Expr>,
    pub b1: Expr,
    pub w2: Expr,
    pub b2: Expr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardResult {
    pub logits: Expr,
    pub probs: Expr,
    pub embedding: Expr,
}

/// Forward pass for a batch `x` of shape `[batch, dim]`.
pub fn classifier_forward(g: &mut Graph, x: Expr, theta: &ClassifierNodes) -> Result<ForwardResult> {
    let (dim, found) = (g.shape(theta.w1).rows, g.shape(x).cols);
    if dim != found {
        return Err(Error::Dimension { expected: dim, found });
    }
    let pre = g.matmul(x, theta.w1)?;
    let pre = g.add(pre, theta.b1)?;
    let embedding = g.tanh(pre);
    let logits = g.matmul(embedding, theta.w2)?;
    let logits = g.add(logits, theta.b2)?;
    let probs = g.softmax(logits);
    Ok(ForwardResult { logits, probs, embedding })
}

/// Per-row weights in (0, 1), shape `[batch, 1]`.
///
/// Gradients flow into whatever the embedding expressions depend on; callers
/// that want the weights to see the representation but not shape it pass
/// detached embeddings.
pub fn weightnet_forward(
    g: &mut Graph,
    anchor_emb: Expr,
    origin_emb: Option<Expr>,
    alpha: &WeightNetNodes,
) -> Result<Expr> {
    let embed = g.shape(alpha.w_anchor).rows;
    for e in std::iter::once(anchor_emb).chain(origin_emb) {
        if g.shape(e).cols != embed {
            return Err(Error::Dimension { expected: embed, found: g.shape(e).cols });
        }
    }
    let mut pre = g.matmul(anchor_emb, alpha.w_anchor)?;
    match (alpha.w_origin, origin_emb) {
        (Some(w), Some(o)) => {
            let t = g.matmul(o, w)?;
            pre = g.add(pre, t)?;
        }
        (None, None) => {}
        _ => return Err(Error::Config("weight network input form does not match its parameters".into())),
    }
    let pre = g.add(pre, alpha.b1)?;
    let hidden = g.tanh(pre);
    let out = g.matmul(hidden, alpha.w2)?;
    let out = g.add(out, alpha.b2)?;
    Ok(g.sigmoid(out))
}

/// Scales `alpha` back onto the ball of radius `ball_radius` if it lies outside.
pub fn project_unit_ball(alpha: &WeightNetParams) -> WeightNetParams {
    let norm = alpha.norm();
    if norm <= alpha.ball_radius {
        return alpha.clone();
    }
    let scaled = |k: f64| {
        alpha.with_values(|name| {
            let p = alpha.params.iter().find(|p| p.name == name).expect("own name");
            p.value.map(|v| v * k)
        })
    };
    // rounding can leave the rescaled norm an ulp above the radius, which
    // would make a second projection move the point again
    let mut k = alpha.ball_radius / norm;
    let mut out = scaled(k);
    while out.norm() > alpha.ball_radius {
        k = k.next_down();
        out = scaled(k);
    }
    out
}

fn uniform_block(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let s = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.numel()).map(|_| rng.random_range(-s..=s)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of every block,
/// weight network projected onto its ball.
pub fn init_params(dim: usize, classes: usize, cfg: &ModelConfig, seed: u64) -> Result<(ClassifierParams, WeightNetParams)> {
    cfg.validate()?;
    let mut rng = rng::rng(seed, Stream::Init, 0);
    let cls = ClassifierParams::zeros(dim, cfg.hidden, classes);
    let fan_in = |name: &str| match name {
        CLS_W1 | CLS_B1 => dim,
        _ => cfg.hidden,
    };
    let cls = cls.with_values(|name| {
        let shape = shape_of(&cls.params, name).expect("own name");
        uniform_block(shape, fan_in(name), &mut rng)
    });

    let mut rng = rng::rng(seed, Stream::Init, 1);
    let wn = WeightNetParams::zeros(cfg.hidden, cfg.weight_hidden, cfg.weight_input, cfg.ball_radius);
    let wn_fan_in = match cfg.weight_input {
        WeightInput::Pairwise => 2 * cfg.hidden,
        WeightInput::Unary => cfg.hidden,
    };
    let wn = wn.with_values(|name| {
        let shape = shape_of(&wn.params, name).expect("own name");
        let fan = if matches!(name, WN_W2 | WN_B2) { cfg.weight_hidden } else { wn_fan_in };
        uniform_block(shape, fan, &mut rng)
    });
    Ok((cls, project_unit_ball(&wn)))
}

/// Stacks feature rows into a `[n, dim]` tensor.
pub fn stack_rows<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Result<Tensor> {
    if rows.is_empty() {
        return Ok(Tensor::zeros(Shape::new(0, dim)));
    }
    for r in rows {
        if r.as_ref().len() != dim {
            return Err(Error::Dimension { expected: dim, found: r.as_ref().len() });
        }
    }
    Ok(Tensor::from_rows(rows)?)
}

/// One-hot rows, `[labels.len(), classes]`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(Shape::new(labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

/// Class probabilities for each row of `x` (numeric convenience).
pub fn predict_probs(theta: &ClassifierParams, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let nodes = theta.declare(&mut g)?;
    let xe = g.input("x", x.shape())?;
    let fwd = classifier_forward(&mut g, xe, &nodes)?;
    let mut b = Bindings::new();
    theta.bind(&mut b);
    b.insert("x", x.clone());
    Ok(rwlab_autodiff::evaluate(&g, fwd.probs, &b)?)
}
