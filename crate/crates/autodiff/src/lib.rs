//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records operations as they run; [`Tape::backward`] walks the
//! record in reverse. Trainable arrays live in a [`ParamStore`] and are
//! updated by [`Adam`].

mod adam;
mod error;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AutodiffError, Result};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{logsumexp, sigmoid, Tape, Var};
pub use tensor::Tensor;
