//! Densely connected 1-D convolutional event detector for continuous
//! seismic traces.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`] — dense numeric kernel: feature maps, layer forward and
//!   backward passes, finite-difference gradient checking.
//! * [`model`] — architecture description, parameter store, whole-network
//!   forward/backward, weight serialization.
//! * [`train`] — logistic loss, Adam, z-score preprocessing, the training
//!   loop with checkpointing.
//! * [`data`] — trace and label file formats, window extraction, training
//!   set assembly, and the synthetic trace generator.
//! * [`detect`] — sliding-window scan, overlap dedup, precision/recall
//!   evaluation.

pub mod data;
pub mod detect;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
