//! One-step diffusion distillation at desk scale.
//!
//! The crate trains a small conditional ε-prediction teacher on synthetic
//! data, distills it into a one-step generator with variational score
//! distillation against a LoRA-adapted copy of the teacher, and evaluates and
//! merges the resulting students.
//!
//! Everything runs in `f64` on the CPU with small dense networks whose
//! gradients are written out by hand and checked against finite differences.

pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lora;
pub mod merging;
pub mod metrics;
pub mod netcore;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::{ParamSet, Tensor};
