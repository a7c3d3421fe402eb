//! Visual query segmentation toolkit.
//!
//! * [`mask`]: run-length masks and response sets
//! * [`metrics`]: stAP / tAP / Rec / Succ evaluation
//! * [`synth`]: deterministic synthetic scene and dataset generation
//! * [`numerics`]: small float64 tensor tape with reverse-mode gradients and AdamW
//! * [`pipeline`]: multi-stage memory-evolution segmentation model
//! * [`training`]: losses and a single-scene overfit trainer
//! * [`cli`]: the `vqs` command line

pub mod cli;
pub mod error;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
