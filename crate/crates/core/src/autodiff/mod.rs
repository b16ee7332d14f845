//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every forward op together with the values its
//! backward rule needs. Parameters live in a [`ParamStore`] and are bound to
//! the tape as leaves on first use, so one store can feed many independent
//! tapes (one per batch item) without shared mutable state.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
