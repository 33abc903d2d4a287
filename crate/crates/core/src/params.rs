//! Named parameter storage shared by the model, optimizer and checkpoints.

use crate::error::{Result, VagError};
use crate::tensor::{Tape, Tensor, TensorId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered, named parameter set. Registration order is the canonical order
/// for optimizer state, gradient accumulation and checkpoint records.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| VagError::contract("ParamSet", format!("unknown parameter '{name}'")))?;
        if data.len() != e.tensor.data.len() {
            return Err(VagError::contract(
                "ParamSet",
                format!("parameter '{name}' length mismatch"),
            ));
        }
        e.tensor.data = data;
        Ok(())
    }

    /// Inserts every parameter on the tape; trainable ones get gradients
    /// only in train mode.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|e| tape.leaf(&e.tensor, train && e.trainable))
            .collect();
        Bound { ids }
    }
}

/// Tape handles for one forward pass, aligned with the ParamSet order.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    /// Builds a binding from externally inserted leaves (finite-difference
    /// harnesses re-insert parameters themselves).
    pub fn from_ids(ids: Vec<TensorId>) -> Bound {
        Bound { ids }
    }

    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for a [rows, cols] map.
pub fn init_linear(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(data, &[rows, cols]).expect("valid init shape")
}

/// Column bias [rows, 1] with the same uniform range as its linear map.
pub fn init_bias(rng: &mut ChaCha8Rng, rows: usize, fan_in: usize) -> Tensor {
    init_linear(rng, rows, 1, fan_in)
}
