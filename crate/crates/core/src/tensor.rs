//! Dense row-major tensors plus the raw matrix kernels used by the tape.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::Scalar;

/// Errors raised by tensor construction and by tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },
    #[error("tensor ref {index} does not belong to this tape ({len} nodes)")]
    InvalidRef { index: usize, len: usize },
    #[error("backward seed must be a single element, got shape {shape:?}")]
    NonScalarSeed { shape: Vec<usize> },
    #[error("backward already ran on this tape; build a fresh tape per forward pass")]
    BackwardTwice,
}

/// A dense tensor: a shape and a row-major value buffer.
///
/// `requires_grad` marks leaves whose gradients the tape should report;
/// it is a property of the tensor so frozen parameters stay frozen no
/// matter which graph they are bound into.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                details: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![T::zero(); numel], requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel], requires_grad: false }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false }
    }

    /// Samples every element from N(0, std^2).
    pub fn randn<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { shape, data, requires_grad: false }
    }

    /// Samples from N(0, std^2) truncated to two standard deviations by
    /// resampling anything outside the band.
    pub fn randn_truncated<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        return T::from_f64(std * z);
                    }
                }
            })
            .collect();
        Self { shape, data, requires_grad: false }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Interprets the tensor as a matrix. One-dimensional tensors count as
    /// a single row.
    pub fn as_2d(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(TensorError::ShapeMismatch {
                op: "as_2d",
                details: format!("expected rank <= 2, got shape {:?}", self.shape),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C[m x n] = A[m x k] * B[k x n].
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (t, &av) in a_row.iter().enumerate() {
            let b_row = &b[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C[m x n] = A[m x k] * B[n x k]^T. Row-by-row dot products.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// C[m x n] = A[k x m]^T * B[k x n].
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * n..(t + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}
