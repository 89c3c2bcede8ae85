//! Dense `f64` tensors and a reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain row-major value. Differentiation happens on a
//! [`Tape`]: leaves are pushed with or without `requires_grad`, every op
//! appends a node, and [`Tape::backward`] replays the nodes in reverse to
//! fill the gradients of the reachable leaves. Gradients can be taken with
//! respect to any leaf, which is how prototype synthesis differentiates the
//! loss with respect to the *input* of a network rather than its weights.
//!
//! The forward arithmetic lives in [`kernels`] and is shared by the tape and
//! by the tape-free inference path, so both produce bit-identical values.

pub mod kernels;
mod tape;

pub use kernels::ConvGeometry;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} holds {expected} values but {got} were given")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("class index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("softmax needs at least 2 logits, got {0}")]
    TooFewLogits(usize),
    #[error("variable does not belong to this tape")]
    ForeignVar,
}

/// Row-major dense array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Tensor::new(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    /// Number of elements is one, whatever the rank.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Option<f64> {
        self.is_scalar().then(|| self.data[0])
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.shape.len(), 2, "row() on a non-matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// `self -= scale * other`, rejecting updates that would leave a
    /// non-finite value behind.
    pub fn sub_scaled(&mut self, other: &Tensor, scale: f64) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "sub_scaled",
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        let updated: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| a - scale * b).collect();
        check_finite("sub_scaled", &updated)?;
        self.data = updated;
        Ok(())
    }
}

pub(crate) fn check_finite(op: &'static str, values: &[f64]) -> Result<(), TensorError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}
