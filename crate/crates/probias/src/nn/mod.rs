//! Minimal dense numeric core: tensors, tape-based reverse-mode
//! differentiation, AdamW, and a finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use optim::{AdamW, AdamWConfig};
pub use params::{xavier_uniform, ParamId, ParamSet, Parameter, WatchedParams};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Clamp applied to predicted probabilities before BCE logs.
pub const BCE_EPS: f64 = 1e-7;
