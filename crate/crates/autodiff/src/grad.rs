use std::collections::BTreeMap;

use crate::error::AdError;
use crate::eval::{Bindings, Session};
use crate::graph::{Expr, Graph, Op};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name. Each entry is a node of the graph the
/// gradient was built in, so it can be evaluated or differentiated again.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    entries: BTreeMap<String, Expr>,
}

impl GradMap {
    pub fn get(&self, name: &str) -> Option<Expr> {
        self.entries.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Expr)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn exprs(&self) -> Vec<Expr> {
        self.entries.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Numeric values of every entry.
    pub fn values(&self, graph: &Graph, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>, AdError> {
        let mut session = Session::new(graph, bindings);
        self.entries
            .iter()
            .map(|(k, &e)| Ok((k.clone(), session.eval(e)?.clone())))
            .collect()
    }

    /// Copies of the entries that block further differentiation.
    pub fn detached(&self, graph: &mut Graph) -> GradMap {
        let entries = self.entries.iter().map(|(k, &e)| (k.clone(), graph.detach(e))).collect();
        GradMap { entries }
    }
}

/// Reverse-mode gradient of a scalar `output` with respect to arbitrary nodes.
///
/// The result nodes are appended to `graph`. A node that does not influence
/// `output` gets an explicit zero of its own shape.
pub fn gradient(graph: &mut Graph, output: Expr, wrt: &[Expr]) -> Result<Vec<Expr>, AdError> {
    let out_shape = graph.shape(output);
    if !out_shape.is_scalar() {
        return Err(AdError::NotScalar(out_shape));
    }

    // relevant[i]: node i lies on some path to a requested node
    let top = output.0;
    let mut relevant = vec![false; top + 1];
    for w in wrt {
        if w.0 <= top {
            relevant[w.0] = true;
        }
    }
    for i in 0..=top {
        if relevant[i] {
            continue;
        }
        let mut any = false;
        match graph.op(Expr(i)) {
            Op::Detach(_) | Op::Greater(..) => {}
            op => op.children().for_each(|c| any |= relevant[c.0]),
        }
        relevant[i] = any;
    }

    let mut adjoint: Vec<Option<Expr>> = vec![None; top + 1];
    if relevant[top] {
        adjoint[top] = Some(graph.scalar(1.0));
    }
    for i in (0..=top).rev() {
        let Some(g) = adjoint[i] else { continue };
        let node = Expr(i);
        let op = graph.op(node).clone();
        for (child, contribution) in vjp(graph, node, &op, g, &relevant)? {
            adjoint[child.0] = Some(match adjoint[child.0] {
                Some(acc) => graph.add(acc, contribution)?,
                None => contribution,
            });
        }
    }

    Ok(wrt
        .iter()
        .map(|w| match adjoint.get(w.0).copied().flatten() {
            Some(g) => g,
            None => {
                let shape = graph.shape(*w);
                graph.constant(Tensor::zeros(shape))
            }
        })
        .collect())
}

/// Gradient with respect to named parameters or inputs.
pub fn gradient_by_name(graph: &mut Graph, output: Expr, names: &[&str]) -> Result<GradMap, AdError> {
    let wrt = names
        .iter()
        .map(|n| graph.symbol(n).ok_or_else(|| AdError::UnboundSymbol((*n).to_owned())))
        .collect::<Result<Vec<_>, _>>()?;
    let grads = gradient(graph, output, &wrt)?;
    Ok(GradMap { entries: names.iter().map(|n| (*n).to_owned()).zip(grads).collect() })
}

/// Differentiates `outer` with respect to `wrt`, where `outer` was built from
/// parameters that were updated with `inner_grad` (double backprop).
///
/// Fails with [`AdError::DetachedGradient`] if no differentiable path connects
/// `outer` to the inner gradient.
pub fn second_order_gradient(
    graph: &mut Graph,
    outer: Expr,
    inner_grad: &GradMap,
    wrt: &[&str],
) -> Result<GradMap, AdError> {
    if !graph.depends_on(outer, &inner_grad.exprs()) {
        return Err(AdError::DetachedGradient);
    }
    gradient_by_name(graph, outer, wrt)
}

fn reduce(graph: &mut Graph, g: Expr, to: Expr) -> Result<Expr, AdError> {
    let shape = graph.shape(to);
    graph.sum_to(g, shape)
}

/// Vector-Jacobian products of one node, as new graph nodes.
fn vjp(graph: &mut Graph, node: Expr, op: &Op, g: Expr, relevant: &[bool]) -> Result<Vec<(Expr, Expr)>, AdError> {
    let wants = |e: &Expr| relevant[e.0];
    let mut out = Vec::with_capacity(2);
    match *op {
        Op::Input(_) | Op::Param(_) | Op::Constant(_) | Op::Detach(_) | Op::Greater(..) => {}
        Op::Add(a, b) => {
            if wants(&a) {
                out.push((a, reduce(graph, g, a)?));
            }
            if wants(&b) {
                out.push((b, reduce(graph, g, b)?));
            }
        }
        Op::Sub(a, b) => {
            if wants(&a) {
                out.push((a, reduce(graph, g, a)?));
            }
            if wants(&b) {
                let ng = graph.neg(g);
                out.push((b, reduce(graph, ng, b)?));
            }
        }
        Op::Mul(a, b) => {
            if wants(&a) {
                let t = graph.mul(g, b)?;
                out.push((a, reduce(graph, t, a)?));
            }
            if wants(&b) {
                let t = graph.mul(g, a)?;
                out.push((b, reduce(graph, t, b)?));
            }
        }
        Op::Neg(a) => out.push((a, graph.neg(g))),
        Op::Scale(a, k) => out.push((a, graph.scale(g, k))),
        Op::MatMul(a, b) => {
            if wants(&a) {
                let bt = graph.transpose(b);
                out.push((a, graph.matmul(g, bt)?));
            }
            if wants(&b) {
                let at = graph.transpose(a);
                out.push((b, graph.matmul(at, g)?));
            }
        }
        Op::Transpose(a) => out.push((a, graph.transpose(g))),
        Op::Max(a, b) => {
            if wants(&a) {
                let mask = graph.greater(a, b)?;
                let t = graph.mul(g, mask)?;
                out.push((a, reduce(graph, t, a)?));
            }
            if wants(&b) {
                let mask = graph.greater(b, a)?;
                let t = graph.mul(g, mask)?;
                out.push((b, reduce(graph, t, b)?));
            }
        }
        Op::Exp(a) => out.push((a, graph.mul(g, node)?)),
        Op::Log(a) => {
            let r = graph.safe_recip(a);
            out.push((a, graph.mul(g, r)?));
        }
        Op::Sigmoid(a) => {
            let one_minus = graph.one_minus(node)?;
            let d = graph.mul(node, one_minus)?;
            out.push((a, graph.mul(g, d)?));
        }
        Op::Tanh(a) => {
            let sq = graph.mul(node, node)?;
            let d = graph.one_minus(sq)?;
            out.push((a, graph.mul(g, d)?));
        }
        Op::Sqrt(a) => {
            // d sqrt(x) = 1 / (2 sqrt(x)); taken as 0 at x = 0
            let r = graph.safe_recip(node);
            let half = graph.scale(r, 0.5);
            out.push((a, graph.mul(g, half)?));
        }
        Op::SafeRecip(a) => {
            let sq = graph.mul(node, node)?;
            let t = graph.mul(g, sq)?;
            out.push((a, graph.neg(t)));
        }
        Op::Softmax(a) => {
            // y * (g - rowsum(g * y))
            let gy = graph.mul(g, node)?;
            let s = graph.sum_rows(gy)?;
            let centered = graph.sub(g, s)?;
            out.push((a, graph.mul(node, centered)?));
        }
        Op::SquaredL2(a) => {
            let two_a = graph.scale(a, 2.0);
            out.push((a, graph.mul(two_a, g)?));
        }
        Op::Sum(a) => {
            let shape = graph.shape(a);
            out.push((a, graph.broadcast_to(g, shape)?));
        }
        Op::Mean(a) => {
            let shape = graph.shape(a);
            let scaled = graph.scale(g, 1.0 / shape.numel() as f64);
            out.push((a, graph.broadcast_to(scaled, shape)?));
        }
        Op::SumTo(a, _) => {
            let shape = graph.shape(a);
            out.push((a, graph.broadcast_to(g, shape)?));
        }
        Op::BroadcastTo(a, _) => out.push((a, reduce(graph, g, a)?)),
    }
    out.retain(|(c, _)| relevant[c.0]);
    Ok(out)
}
