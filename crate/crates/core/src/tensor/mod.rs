//! A small reverse-mode differentiable numeric core.
//!
//! Values are dense row-major buffers of rank one or two. A [`Graph`] records
//! every operation applied during a forward pass and [`Graph::backward`] walks
//! the record in reverse to produce gradients for tracked leaves and
//! parameters. The core is generic over [`Real`] so the same code path runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod checkpoint;
mod graph;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use graph::{Gradients, Graph, Var};
pub use optim::{noam_rate, Adam, AdamConfig, OptimizerState};
pub use params::{ParamGrads, ParamId, ParamStore};

use crate::error::{Error, Result};
use num_traits::{Float, NumAssign};
use std::fmt::Debug;

/// Floating-point element type of the numeric core.
pub trait Real:
    Float + NumAssign + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor of rank one or two.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::MalformedInput("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)`, treating a rank-one tensor as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [m, n] => (*m, *n),
        _ => (0, 0),
    }
}

/// `C[m×n] += A[m×k] · B[k×n]`, all row-major.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `C[m×k] += A[m×n] · B[k×n]ᵀ`.
pub(crate) fn matmul_nt_into<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    n: usize,
    k: usize,
) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * k + p] += acc;
        }
    }
}

/// `C[k×n] += A[m×k]ᵀ · B[m×n]`.
pub(crate) fn matmul_tn_into<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `log(sum(exp(row)))`, stable for large magnitudes.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}
