//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is the plain value type (shape + row-major data). Gradient
//! computation goes through a [`Tape`]: leaves are registered on a tape,
//! primitives are applied through it, and [`Tape::backward`] fills in
//! gradients for every leaf that requires them. Tapes are per-forward-pass
//! and single-threaded; tensors with frozen data are cheap to clone
//! (`Arc`-backed) and safe to share across threads.

mod check;
mod grad;
mod ops;
mod tape;
#[cfg(test)]
mod tests;

pub use check::{grad_check, GradReport, GRAD_EPS_DIV};
pub use tape::{PrimOp, Tape, Var};

use std::fmt;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type the numeric stack is generic over.
///
/// `f64` is used by tests and gradient checks; `f32` is the training
/// precision selected through the run config.
pub trait Element:
    Float
    + num_traits::NumAssignOps
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense multi-dimensional array, row-major.
///
/// Data is `Arc`-shared: cloning is cheap and frozen tensors (model
/// weights during inference) can be shared across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor, checking that `shape` and `data` agree.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![E::zero(); numel]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable view of the data; copies only if the buffer is shared.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| F::from_f64(v.as_f64())).collect()),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {context}")))
        }
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<E>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn share_data(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }
}

