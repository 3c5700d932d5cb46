use std::fmt;

use crate::error::AdError;

/// Row-major 2-D shape. Vectors are `1 x n` rows, scalars are `1 x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub const fn row(len: usize) -> Self {
        Shape { rows: 1, cols: len }
    }

    pub const fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Shape produced by an elementwise op on `self` and `other`.
    ///
    /// Each dimension must match or be 1 on one side (matrix-vector
    /// broadcasting only).
    pub fn broadcast(&self, other: &Shape) -> Option<Shape> {
        let dim = |a: usize, b: usize| match (a, b) {
            _ if a == b => Some(a),
            (1, b) => Some(b),
            (a, 1) => Some(a),
            _ => None,
        };
        Some(Shape::new(dim(self.rows, other.rows)?, dim(self.cols, other.cols)?))
    }

    /// True when a tensor of this shape can be broadcast up to `target`.
    pub fn broadcasts_to(&self, target: &Shape) -> bool {
        (self.rows == target.rows || self.rows == 1) && (self.cols == target.cols || self.cols == 1)
    }

    #[inline]
    pub(crate) fn index_broadcast(&self, i: usize, j: usize) -> usize {
        let r = if self.rows == 1 { 0 } else { i };
        let c = if self.cols == 1 { 0 } else { j };
        r * self.cols + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.rows, self.cols)
    }
}

/// Dense matrix of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, AdError> {
        if data.len() != shape.numel() {
            return Err(AdError::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor { shape: Shape::row(values.len()), data: values }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, AdError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(AdError::DataLength { shape: Shape::new(rows.len(), cols), len: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { shape: Shape::new(rows.len(), cols), data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape.cols + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.shape.cols;
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> Option<f64> {
        self.shape.is_scalar().then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
