//! Deep feedforward networks and measurements of how their internal
//! representations respond to input variability: perturbation shrinkage,
//! saturation, paired-input distances, mixed-bandwidth generalization and
//! feature-space adaptation, on deterministic synthetic corpora.

pub mod adaptation;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod network;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{ActivationTrace, LabeledFrames, LayerParams, Network, TrainConfig};
