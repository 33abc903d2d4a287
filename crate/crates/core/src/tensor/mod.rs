//! Dense 64-bit float tensors and a reverse-mode autodiff tape.
//!
//! Every equation in the pipeline is built from the primitives recorded on
//! [`Tape`]. Tensors detached from a tape are plain immutable values and can
//! be shared freely across threads; a tape is single-threaded.

mod tape;

pub use tape::{Tape, TensorId};

use crate::error::{Result, VagError};

/// A dense row-major f64 tensor.
///
/// `grad` is populated by [`Tape::backward`] for leaves inserted with
/// `requires_grad`; `tape_id` links a value to the tape node it was read
/// back from, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    pub tape_id: Option<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(VagError::contract(
                "Tensor::new",
                format!("data length {} != product of shape {:?}", data.len(), shape),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(VagError::contract(
                "Tensor::new",
                format!("zero dimension in shape {shape:?}"),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
            tape_id: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
            tape_id: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
            tape_id: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(&[1], value)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Resets the accumulated gradient buffer.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
