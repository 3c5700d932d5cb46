//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Expressions live in an append-only [`Graph`]. Calling [`gradient`] appends
//! the backward pass to the same graph, so gradients are themselves
//! expressions: they can be evaluated under different [`Bindings`], fed into
//! parameter updates, and differentiated again. That last property is what
//! meta-gradients through an unrolled update step need.
//!
//! ```
//! use rwlab_autodiff::{evaluate, gradient_by_name, Bindings, Graph, Shape, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param("x", Shape::scalar()).unwrap();
//! let y = g.mul(x, x).unwrap();
//! let dy = gradient_by_name(&mut g, y, &["x"]).unwrap();
//!
//! let mut b = Bindings::new();
//! b.insert("x", Tensor::scalar(3.0));
//! assert_eq!(evaluate(&g, dy.get("x").unwrap(), &b).unwrap().item(), Some(6.0));
//! ```

mod error;
mod eval;
mod fd;
mod grad;
mod graph;
mod tensor;

pub use error::AdError;
pub use eval::{evaluate, Bindings, ParamVector, Session};
pub use fd::finite_diff_gradient;
pub use grad::{gradient, gradient_by_name, second_order_gradient, GradMap};
pub use graph::{Children, Expr, Graph, Op};
pub use tensor::{Shape, Tensor};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    eval::sigmoid(x)
}
