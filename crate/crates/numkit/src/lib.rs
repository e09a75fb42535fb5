//! Numeric substrate: dense `f64` tensors, a reverse-mode autodiff tape,
//! a GRU cell, the Adam optimizer and a finite-difference gradient checker.
//!
//! Everything is 64-bit. Tensors are immutable values once built and can be
//! shared across threads; a [`Tape`] lives for a single forward/backward pass.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod gru;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use gru::{gru_cell, Gru};
pub use kernels::{sigmoid, softmax};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
