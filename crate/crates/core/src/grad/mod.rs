//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records primitives as they execute. [`Tape::backward`] walks
//! the record in reverse, applying each primitive's analytic adjoint, and
//! deposits parameter gradients into the [`ParamStore`] the parameters were
//! read from.

mod check;
mod params;
mod recurrent;
mod tape;
mod tensor;

pub use check::{grad_check, relative_error, GradCheckReport};
pub use params::{ParamArray, ParamId, ParamStore};
pub use recurrent::CellKind;
pub use tape::{sigmoid, Gradients, Tape, Var, PROB_CLAMP};
pub(crate) use tape::bce_term;
pub use tensor::Tensor;
