//! Video-guided 3D affordance grounding, end to end and from scratch.
//!
//! The crate contains a small f64 autodiff tensor engine, point-cloud
//! geometry kernels, the three modality encoders, the contextual-alignment
//! and spatio-temporal fusion modules, the affordance decoder with its
//! losses, evaluation metrics, a synthetic paired video/point-cloud dataset
//! generator with bit-exact file formats, and the training harness behind
//! the `vagnet` CLI.

pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod mcam;
pub mod metrics;
pub mod model;
pub mod params;
pub mod stfm;
pub mod tensor;
pub mod train;

pub use error::{Result, VagError};
pub use tensor::{Tape, Tensor, TensorId};
