//! Detached dense tensors.
//!
//! A [`Tensor`] is a plain shape + row-major buffer with no gradient
//! machinery attached; it is what datasets, parameters and checkpoints move
//! around. Differentiable values live on a [`crate::tape::Tape`] and are
//! referred to by node id; `Tape::value` detaches a node back into a
//! `Tensor`. Feature maps use NCHW order throughout.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape {shape:?} implies {expected} elements but buffer holds {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: axis {axis} size mismatch, lhs {lhs} vs rhs {rhs}")]
    AxisMismatch {
        op: &'static str,
        axis: usize,
        lhs: usize,
        rhs: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, ShapeError> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(ShapeError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![E::ZERO; n],
        }
    }

    pub fn full(shape: Vec<usize>, v: E) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: E) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<E>) {
        (self.shape, self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element-type conversion (f32 <-> f64) through f64.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64c(v.to_f64c())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        match err {
            ShapeError::LengthMismatch {
                expected, actual, ..
            } => {
                assert_eq!(expected, 6);
                assert_eq!(actual, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::new(vec![2, 2], vec![1.0f32, -2.5, 0.0, 3.25]).unwrap();
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t, back);
    }
}
