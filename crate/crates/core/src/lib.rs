//! Confidence-gated multimodal fusion: differentiable primitives, low-rank
//! adapters, toy encoders, the fusion block, curriculum training and metrics.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prmf;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};
