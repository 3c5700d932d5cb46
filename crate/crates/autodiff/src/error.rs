use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("no binding for symbol `{0}`")]
    UnboundSymbol(String),

    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },

    #[error("binding `{name}` has shape {found}, graph declares {expected}")]
    BindingShape { name: String, expected: Shape, found: Shape },

    #[error("symbol `{name}` redeclared with shape {found} (was {expected})")]
    Redeclared { name: String, expected: Shape, found: Shape },

    #[error("{len} values cannot fill shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("non-finite value produced by {op} at node {node}")]
    NumericOverflow { op: &'static str, node: usize },

    #[error("gradient requires a scalar output, got shape {0}")]
    NotScalar(Shape),

    #[error("outer expression does not depend on the inner gradient through a differentiable path")]
    DetachedGradient,

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("objective evaluated to a non-finite value at coordinate {coord}")]
    NonFiniteObjective { coord: usize },
}
