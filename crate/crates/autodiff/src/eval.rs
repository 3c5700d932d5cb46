use std::collections::BTreeMap;

use crate::error::AdError;
use crate::graph::{Expr, Graph, Op};
use crate::tensor::{Shape, Tensor};

/// A named, shaped block of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub name: String,
    pub value: Tensor,
}

impl ParamVector {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        ParamVector { name: name.into(), value }
    }
}

/// Values for the inputs and parameters of a graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bindings {
    values: BTreeMap<String, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn insert_param(&mut self, p: ParamVector) -> &mut Self {
        self.values.insert(p.name, p.value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.values.iter()
    }
}

impl FromIterator<(String, Tensor)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Bindings { values: iter.into_iter().collect() }
    }
}

/// Evaluates a single expression. Pure: neither the graph nor the bindings change.
pub fn evaluate(graph: &Graph, expr: Expr, bindings: &Bindings) -> Result<Tensor, AdError> {
    let mut session = Session::new(graph, bindings);
    session.eval(expr).cloned()
}

/// Memoizing evaluator. Nodes shared between several requested outputs are
/// computed once.
pub struct Session<'g, 'b> {
    graph: &'g Graph,
    bindings: &'b Bindings,
    cache: Vec<Option<Tensor>>,
}

impl<'g, 'b> Session<'g, 'b> {
    pub fn new(graph: &'g Graph, bindings: &'b Bindings) -> Self {
        Session { graph, bindings, cache: vec![None; graph.len()] }
    }

    pub fn eval(&mut self, expr: Expr) -> Result<&Tensor, AdError> {
        self.ensure(expr)?;
        Ok(self.cache[expr.0].as_ref().expect("computed above"))
    }

    pub fn eval_scalar(&mut self, expr: Expr) -> Result<f64, AdError> {
        let t = self.eval(expr)?;
        t.item().ok_or(AdError::NotScalar(t.shape()))
    }

    fn ensure(&mut self, expr: Expr) -> Result<(), AdError> {
        if self.cache[expr.0].is_some() {
            return Ok(());
        }
        let mut needed = vec![false; expr.0 + 1];
        let mut stack = vec![expr];
        while let Some(e) = stack.pop() {
            if needed[e.0] || self.cache[e.0].is_some() {
                continue;
            }
            needed[e.0] = true;
            self.graph.op(e).children().for_each(|c| stack.push(c));
        }
        for (i, _) in needed.iter().enumerate().filter(|(_, n)| **n) {
            let value = self.compute(Expr(i))?;
            if !value.is_finite() {
                return Err(AdError::NumericOverflow { op: self.graph.op(Expr(i)).name(), node: i });
            }
            self.cache[i] = Some(value);
        }
        Ok(())
    }

    fn get(&self, e: Expr) -> &Tensor {
        self.cache[e.0].as_ref().expect("children are evaluated first")
    }

    fn compute(&self, e: Expr) -> Result<Tensor, AdError> {
        let shape = self.graph.shape(e);
        let out = match self.graph.op(e) {
            Op::Input(name) | Op::Param(name) => {
                let v = self.bindings.get(name).ok_or_else(|| AdError::UnboundSymbol(name.clone()))?;
                if v.shape() != shape {
                    return Err(AdError::BindingShape {
                        name: name.clone(),
                        expected: shape,
                        found: v.shape(),
                    });
                }
                v.clone()
            }
            Op::Constant(t) => t.clone(),
            Op::Add(a, b) => binary(self.get(*a), self.get(*b), shape, |x, y| x + y),
            Op::Sub(a, b) => binary(self.get(*a), self.get(*b), shape, |x, y| x - y),
            Op::Mul(a, b) => binary(self.get(*a), self.get(*b), shape, |x, y| x * y),
            Op::Max(a, b) => binary(self.get(*a), self.get(*b), shape, f64::max),
            Op::Greater(a, b) => {
                binary(self.get(*a), self.get(*b), shape, |x, y| if x > y { 1.0 } else { 0.0 })
            }
            Op::Neg(a) => self.get(*a).map(|x| -x),
            Op::Scale(a, k) => {
                let k = *k;
                self.get(*a).map(|x| k * x)
            }
            Op::Exp(a) => self.get(*a).map(f64::exp),
            Op::Log(a) => self.get(*a).map(f64::ln),
            Op::Sigmoid(a) => self.get(*a).map(sigmoid),
            Op::Tanh(a) => self.get(*a).map(f64::tanh),
            Op::Sqrt(a) => self.get(*a).map(f64::sqrt),
            Op::SafeRecip(a) => self.get(*a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
            Op::MatMul(a, b) => matmul(self.get(*a), self.get(*b)),
            Op::Transpose(a) => transpose(self.get(*a)),
            Op::Softmax(a) => softmax_rows(self.get(*a)),
            Op::SquaredL2(a) => Tensor::scalar(self.get(*a).data().iter().map(|x| x * x).sum()),
            Op::Sum(a) => Tensor::scalar(self.get(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = self.get(*a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::SumTo(a, target) => sum_to(self.get(*a), *target),
            Op::BroadcastTo(a, target) => broadcast_to(self.get(*a), *target),
            Op::Detach(a) => self.get(*a).clone(),
        };
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

fn binary(a: &Tensor, b: &Tensor, shape: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == shape && b.shape() == shape {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(shape, data).expect("same length");
    }
    let (sa, sb) = (a.shape(), b.shape());
    let mut data = Vec::with_capacity(shape.numel());
    for i in 0..shape.rows {
        for j in 0..shape.cols {
            data.push(f(a.data()[sa.index_broadcast(i, j)], b.data()[sb.index_broadcast(i, j)]));
        }
    }
    Tensor::new(shape, data).expect("sized to shape")
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let (n, k, m) = (sa.rows, sa.cols, sb.cols);
    let mut out = vec![0.0; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(Shape::new(n, m), out).expect("sized")
}

fn transpose(a: &Tensor) -> Tensor {
    let s = a.shape();
    let mut out = vec![0.0; s.numel()];
    for i in 0..s.rows {
        for j in 0..s.cols {
            out[j * s.rows + i] = a.data()[i * s.cols + j];
        }
    }
    Tensor::new(Shape::new(s.cols, s.rows), out).expect("sized")
}

fn softmax_rows(a: &Tensor) -> Tensor {
    let s = a.shape();
    let mut out = Vec::with_capacity(s.numel());
    for i in 0..s.rows {
        let row = a.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &x in row {
            let v = (x - max).exp();
            total += v;
            out.push(v);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    Tensor::new(s, out).expect("sized")
}

fn sum_to(a: &Tensor, target: Shape) -> Tensor {
    let s = a.shape();
    let mut out = vec![0.0; target.numel()];
    for i in 0..s.rows {
        for j in 0..s.cols {
            out[target.index_broadcast(i, j)] += a.data()[i * s.cols + j];
        }
    }
    Tensor::new(target, out).expect("sized")
}

fn broadcast_to(a: &Tensor, target: Shape) -> Tensor {
    let s = a.shape();
    let mut out = Vec::with_capacity(target.numel());
    for i in 0..target.rows {
        for j in 0..target.cols {
            out.push(a.data()[s.index_broadcast(i, j)]);
        }
    }
    Tensor::new(target, out).expect("sized")
}
