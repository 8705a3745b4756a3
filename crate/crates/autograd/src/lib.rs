//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse. Parameters live in a [`ParamStore`] outside the tape
//! and are bound per pass with [`Tape::param`], so one store serves any number
//! of passes and the optimizer updates it in place between them.

mod error;
pub mod gradcheck;
mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use error::{AutogradError, Result};
pub use ops::RunningStats;
pub use optim::Adam;
pub use param::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
