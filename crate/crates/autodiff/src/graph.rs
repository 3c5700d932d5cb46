use std::collections::HashMap;

use crate::error::AdError;
use crate::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
///
/// Handles are only meaningful for the graph that issued them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(pub(crate) usize);

impl Expr {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Node kinds. Binary elementwise ops broadcast rows or columns of extent 1.
#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    Constant(Tensor),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    Scale(Expr, f64),
    MatMul(Expr, Expr),
    Transpose(Expr),
    /// Elementwise maximum; the tie point gets subgradient 0 on both sides.
    Max(Expr, Expr),
    /// `1` where `a > b`, else `0`. Piecewise constant, so never differentiated.
    Greater(Expr, Expr),
    Exp(Expr),
    Log(Expr),
    Sigmoid(Expr),
    Tanh(Expr),
    Sqrt(Expr),
    /// `1/x`, with `1/0` defined as 0.
    SafeRecip(Expr),
    /// Row-wise softmax.
    Softmax(Expr),
    SquaredL2(Expr),
    Sum(Expr),
    Mean(Expr),
    /// Sums broadcast dimensions away until the operand has the target shape.
    SumTo(Expr, Shape),
    BroadcastTo(Expr, Shape),
    /// Passes the value through and blocks differentiation.
    Detach(Expr),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "parameter",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "multiply",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Max(..) => "max",
            Op::Greater(..) => "greater",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Sqrt(_) => "sqrt",
            Op::SafeRecip(_) => "recip",
            Op::Softmax(_) => "softmax",
            Op::SquaredL2(_) => "squared_l2",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumTo(..) => "sum_to",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::Detach(_) => "detach",
        }
    }

    pub fn children(&self) -> Children {
        use Op::*;
        match *self {
            Input(_) | Param(_) | Constant(_) => Children::None,
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | Max(a, b) | Greater(a, b) => {
                Children::Two(a, b)
            }
            Neg(a) | Scale(a, _) | Transpose(a) | Exp(a) | Log(a) | Sigmoid(a) | Tanh(a)
            | Sqrt(a) | SafeRecip(a) | Softmax(a) | SquaredL2(a) | Sum(a) | Mean(a)
            | SumTo(a, _) | BroadcastTo(a, _) | Detach(a) => Children::One(a),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Children {
    None,
    One(Expr),
    Two(Expr, Expr),
}

impl Children {
    pub fn for_each(self, mut f: impl FnMut(Expr)) {
        match self {
            Children::None => {}
            Children::One(a) => f(a),
            Children::Two(a, b) => {
                f(a);
                f(b);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Shape,
}

/// Append-only expression graph.
///
/// Every node's children precede it, so index order is a topological order.
/// Gradients are appended to the same graph as ordinary nodes, which is what
/// makes them differentiable again.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    symbols: HashMap<String, Expr>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, e: Expr) -> &Op {
        &self.nodes[e.0].op
    }

    pub fn shape(&self, e: Expr) -> Shape {
        self.nodes[e.0].shape
    }

    /// Looks up a declared input or parameter.
    pub fn symbol(&self, name: &str) -> Option<Expr> {
        self.symbols.get(name).copied()
    }

    fn push(&mut self, op: Op, shape: Shape) -> Expr {
        self.nodes.push(Node { op, shape });
        Expr(self.nodes.len() - 1)
    }

    fn leaf(&mut self, name: &str, shape: Shape, param: bool) -> Result<Expr, AdError> {
        if let Some(&e) = self.symbols.get(name) {
            let expected = self.shape(e);
            if expected != shape {
                return Err(AdError::Redeclared { name: name.to_owned(), expected, found: shape });
            }
            return Ok(e);
        }
        let op = if param { Op::Param(name.to_owned()) } else { Op::Input(name.to_owned()) };
        let e = self.push(op, shape);
        self.symbols.insert(name.to_owned(), e);
        Ok(e)
    }

    /// Declares (or returns the existing) named input.
    pub fn input(&mut self, name: &str, shape: Shape) -> Result<Expr, AdError> {
        self.leaf(name, shape, false)
    }

    /// Declares (or returns the existing) named parameter.
    pub fn param(&mut self, name: &str, shape: Shape) -> Result<Expr, AdError> {
        self.leaf(name, shape, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Expr {
        let shape = value.shape();
        self.push(Op::Constant(value), shape)
    }

    pub fn scalar(&mut self, value: f64) -> Expr {
        self.constant(Tensor::scalar(value))
    }

    fn elementwise(&mut self, op: Op, a: Expr, b: Expr) -> Result<Expr, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = sa
            .broadcast(&sb)
            .ok_or(AdError::ShapeMismatch { op: op.name(), left: sa, right: sb })?;
        Ok(self.push(op, shape))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        self.elementwise(Op::Add(a, b), a, b)
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        self.elementwise(Op::Sub(a, b), a, b)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        self.elementwise(Op::Mul(a, b), a, b)
    }

    pub fn max(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        self.elementwise(Op::Max(a, b), a, b)
    }

    pub fn greater(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        self.elementwise(Op::Greater(a, b), a, b)
    }

    fn unary(&mut self, op: Op, a: Expr) -> Expr {
        let shape = self.shape(a);
        self.push(op, shape)
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        self.unary(Op::Neg(a), a)
    }

    pub fn scale(&mut self, a: Expr, k: f64) -> Expr {
        self.unary(Op::Scale(a, k), a)
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        self.unary(Op::Exp(a), a)
    }

    pub fn log(&mut self, a: Expr) -> Expr {
        self.unary(Op::Log(a), a)
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        self.unary(Op::Sigmoid(a), a)
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        self.unary(Op::Tanh(a), a)
    }

    pub fn sqrt(&mut self, a: Expr) -> Expr {
        self.unary(Op::Sqrt(a), a)
    }

    pub fn safe_recip(&mut self, a: Expr) -> Expr {
        self.unary(Op::SafeRecip(a), a)
    }

    pub fn softmax(&mut self, a: Expr) -> Expr {
        self.unary(Op::Softmax(a), a)
    }

    pub fn detach(&mut self, a: Expr) -> Expr {
        self.unary(Op::Detach(a), a)
    }

    pub fn matmul(&mut self, a: Expr, b: Expr) -> Result<Expr, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(AdError::ShapeMismatch { op: "matmul", left: sa, right: sb });
        }
        Ok(self.push(Op::MatMul(a, b), Shape::new(sa.rows, sb.cols)))
    }

    pub fn transpose(&mut self, a: Expr) -> Expr {
        let s = self.shape(a);
        self.push(Op::Transpose(a), Shape::new(s.cols, s.rows))
    }

    pub fn squared_l2(&mut self, a: Expr) -> Expr {
        self.push(Op::SquaredL2(a), Shape::scalar())
    }

    pub fn sum(&mut self, a: Expr) -> Expr {
        self.push(Op::Sum(a), Shape::scalar())
    }

    pub fn mean(&mut self, a: Expr) -> Expr {
        self.push(Op::Mean(a), Shape::scalar())
    }

    pub fn sum_to(&mut self, a: Expr, target: Shape) -> Result<Expr, AdError> {
        let s = self.shape(a);
        if s == target {
            return Ok(a);
        }
        if !target.broadcasts_to(&s) {
            return Err(AdError::ShapeMismatch { op: "sum_to", left: s, right: target });
        }
        Ok(self.push(Op::SumTo(a, target), target))
    }

    pub fn broadcast_to(&mut self, a: Expr, target: Shape) -> Result<Expr, AdError> {
        let s = self.shape(a);
        if s == target {
            return Ok(a);
        }
        if !s.broadcasts_to(&target) {
            return Err(AdError::ShapeMismatch { op: "broadcast_to", left: s, right: target });
        }
        Ok(self.push(Op::BroadcastTo(a, target), target))
    }

    /// Per-row sum, `[r, c] -> [r, 1]`.
    pub fn sum_rows(&mut self, a: Expr) -> Result<Expr, AdError> {
        let s = self.shape(a);
        self.sum_to(a, Shape::new(s.rows, 1))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Expr) -> Result<Expr, AdError> {
        let one = self.scalar(1.0);
        self.sub(one, a)
    }

    /// True when `from` reaches any of `targets` without crossing a
    /// non-differentiable edge.
    pub fn depends_on(&self, from: Expr, targets: &[Expr]) -> bool {
        let Some(&lowest) = targets.iter().min() else {
            return false;
        };
        let mut seen = vec![false; from.0 + 1];
        let mut stack = vec![from];
        while let Some(e) = stack.pop() {
            // children precede parents, so nothing below `lowest` can reach a target
            if e < lowest || seen[e.0] {
                continue;
            }
            seen[e.0] = true;
            if targets.contains(&e) {
                return true;
            }
            match self.op(e) {
                Op::Detach(_) | Op::Greater(..) => {}
                op => op.children().for_each(|c| stack.push(c)),
            }
        }
        false
    }
}
