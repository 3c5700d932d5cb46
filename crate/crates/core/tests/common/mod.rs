//! Shared builders for gradient checks.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwlab_autodiff::{
    evaluate, finite_diff_gradient, gradient_by_name, second_order_gradient, AdError, Bindings, Graph, Shape, Tensor,
};
use rwlab_core::datasim::{augment, make_original, sample_triplets, SimConfig};
use rwlab_core::losses::{inner_loss_graph, GeneratedBatch, GeneratedNodes, LossConfig, SupervisionFlags, WeightSource};
use rwlab_core::models::*;

/// One alternating step worth of inputs: parameters, an original batch and a
/// generated batch.
pub struct MetaProblem {
    pub theta: ClassifierParams,
    pub alpha: WeightNetParams,
    pub x: Tensor,
    pub y: Tensor,
    pub batch: GeneratedBatch,
    pub eta_theta: f64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Constant weight instead of the network. The network reads detached
    /// embeddings, so classifier gradients are checked under a fixed weight.
    pub fixed_weight: Option<f64>,
}

fn jitter(t: &Tensor, rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let data = t.data().iter().map(|v| v + rng.random_range(-scale..scale)).collect();
    Tensor::new(t.shape(), data).unwrap()
}

/// Simulator data at the desk dimensions with randomized parameters, so
/// instances are not all near the initial point.
pub fn desk_problem(seed: u64, rows: usize) -> MetaProblem {
    let sim = SimConfig { n_per_class: 8, seed, ..SimConfig::default() };
    let orig = make_original(&sim).unwrap();
    let (pool, _) = augment(&orig, &sim).unwrap();
    let model = ModelConfig::default();
    let (theta, alpha) = init_params(orig.dim, orig.classes, &model, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let theta = theta.with_values(|n| jitter(&theta.params.iter().find(|p| p.name == n).unwrap().value, &mut rng, 0.1));
    let alpha = alpha.with_values(|n| jitter(&alpha.params.iter().find(|p| p.name == n).unwrap().value, &mut rng, 0.2));

    let oi: Vec<usize> = (0..rows).map(|_| rng.random_range(0..orig.len())).collect();
    let gi: Vec<usize> = (0..rows).map(|_| rng.random_range(0..pool.len())).collect();
    let xs: Vec<&[f64]> = oi.iter().map(|&i| orig.samples[i].features.as_slice()).collect();
    let ys: Vec<usize> = oi.iter().map(|&i| orig.samples[i].label).collect();
    let trips = sample_triplets(&gi, &pool, &orig, seed).unwrap();
    let batch = GeneratedBatch::assemble(&pool, &orig, &trips, 0.5, |k| seed * 1000 + k as u64).unwrap();
    MetaProblem {
        theta,
        alpha,
        x: stack_rows(&xs, orig.dim).unwrap(),
        y: one_hot(&ys, orig.classes).unwrap(),
        batch,
        eta_theta: 0.05,
        loss: LossConfig { supervision: SupervisionFlags::new(true, true, true), ..LossConfig::default() },
        model,
        fixed_weight: None,
    }
}

impl MetaProblem {
    fn bindings(&self, alpha: &WeightNetParams) -> Bindings {
        let mut b = Bindings::new();
        self.theta.bind(&mut b);
        alpha.bind(&mut b);
        b.insert("x", self.x.clone()).insert("y", self.y.clone());
        self.batch.bind(&mut b, "gen");
        b
    }

    fn inner_graph(&self, g: &mut Graph) -> (rwlab_autodiff::Expr, ClassifierNodes) {
        let tn = self.theta.declare(g).unwrap();
        let an = self.alpha.declare(g).unwrap();
        let (n, d, c) = (self.x.shape().rows, self.theta.dim(), self.theta.classes());
        let x = g.input("x", Shape::new(n, d)).unwrap();
        let y = g.input("y", Shape::new(n, c)).unwrap();
        let gn = GeneratedNodes::declare(g, "gen", self.batch.rows(), d, c).unwrap();
        let source = match self.fixed_weight {
            Some(w) => WeightSource::Fixed(w),
            None => WeightSource::Net(&an),
        };
        let out = inner_loss_graph(g, &tn, x, y, Some((&gn, source)), &self.loss, &self.model).unwrap();
        (out.total, tn)
    }

    /// Reverse-mode classifier gradient of the inner objective, as a function
    /// of the weight-network parameters.
    pub fn inner_grad_fn(&self) -> impl Fn(&WeightNetParams) -> BTreeMap<String, Tensor> + '_ {
        let mut g = Graph::new();
        let (total, _) = self.inner_graph(&mut g);
        let grads = gradient_by_name(&mut g, total, &CLS_NAMES).unwrap();
        move |alpha| grads.values(&g, &self.bindings(alpha)).unwrap()
    }

    pub fn inner_grad(&self) -> BTreeMap<String, Tensor> {
        self.inner_grad_fn()(&self.alpha)
    }

    /// Classifier after one inner step with gradient `grad`.
    pub fn step(&self, grad: &BTreeMap<String, Tensor>) -> ClassifierParams {
        self.theta.with_values(|n| {
            let cur = &self.theta.params.iter().find(|p| p.name == n).unwrap().value;
            let gr = &grad[n];
            Tensor::new(cur.shape(), cur.data().iter().zip(gr.data()).map(|(a, d)| a - self.eta_theta * d).collect()).unwrap()
        })
    }

    /// Mean clamped cross-entropy on the original batch, computed row by row
    /// from predicted probabilities.
    pub fn outer_value(&self, theta: &ClassifierParams) -> f64 {
        let p = predict_probs(theta, &self.x).unwrap();
        let n = self.x.shape().rows;
        let mut total = 0.0;
        for i in 0..n {
            let y = self.y.row_slice(i);
            let k = (0..y.len()).find(|&k| y[k] == 1.0).unwrap();
            total += -p.row_slice(i)[k].max(self.loss.prob_floor).ln();
        }
        total / n as f64
    }

    /// Meta-gradient by second-order reverse mode through the inner step.
    pub fn meta_grad(&self) -> BTreeMap<String, Tensor> {
        let mut g = Graph::new();
        let (total, tn) = self.inner_graph(&mut g);
        let grads = gradient_by_name(&mut g, total, &CLS_NAMES).unwrap();
        let mut next = Vec::new();
        for (name, cur) in CLS_NAMES.iter().zip(tn.as_array()) {
            let s = g.scale(grads.get(name).unwrap(), self.eta_theta);
            next.push(g.sub(cur, s).unwrap());
        }
        let nodes = ClassifierNodes::from_array([next[0], next[1], next[2], next[3]]);
        let xm = g.symbol("x").unwrap();
        let ym = g.symbol("y").unwrap();
        let outer = rwlab_core::losses::outer_loss_graph(&mut g, &nodes, xm, ym, self.loss.prob_floor).unwrap();
        let meta = second_order_gradient(&mut g, outer, &grads, &self.alpha.names()).unwrap();
        meta.values(&g, &self.bindings(&self.alpha)).unwrap()
    }

    /// Meta-gradient by central differences over each weight-network block,
    /// re-running the inner step at every probe point.
    pub fn meta_grad_fd(&self, h: f64) -> BTreeMap<String, Tensor> {
        let grad_at = self.inner_grad_fn();
        let mut out = BTreeMap::new();
        for name in self.alpha.names() {
            let point = self.alpha.params.iter().find(|p| p.name == name).unwrap().value.clone();
            let grad = finite_diff_gradient(
                |v| {
                    let a = self.alpha.with_values(|n| {
                        if n == name { v.clone() } else { self.alpha.params.iter().find(|p| p.name == n).unwrap().value.clone() }
                    });
                    let f = self.outer_value(&self.step(&grad_at(&a)));
                    if f.is_finite() { Ok(f) } else { Err(AdError::NonFiniteObjective { coord: 0 }) }
                },
                &point,
                h,
            )
            .unwrap();
            out.insert(name.to_owned(), grad);
        }
        out
    }

    /// Classifier gradient of the inner objective by central differences.
    pub fn inner_grad_fd(&self, h: f64) -> BTreeMap<String, Tensor> {
        let mut g = Graph::new();
        let (total, _) = self.inner_graph(&mut g);
        let base = self.bindings(&self.alpha);
        let mut out = BTreeMap::new();
        for name in CLS_NAMES {
            let point = base.get(name).unwrap().clone();
            let grad = finite_diff_gradient(
                |v| {
                    let mut b = base.clone();
                    b.insert(name, v.clone());
                    evaluate(&g, total, &b)?.item().ok_or(AdError::NotScalar(Shape::scalar()))
                },
                &point,
                h,
            )
            .unwrap();
            out.insert(name.to_owned(), grad);
        }
        out
    }
}

/// `|a - b| / max(|a|, |b|)` over all blocks jointly, in the l2 norm.
pub fn relative_error(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (k, ta) in a {
        for (x, y) in ta.data().iter().zip(b[k].data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 { diff.sqrt() } else { diff.sqrt() / scale }
}
