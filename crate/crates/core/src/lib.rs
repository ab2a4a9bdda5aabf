//! Risk-sensitive downside-risk numerics for factor-driven incomplete markets.
//!
//! The pipeline: a [`model::ModelSpec`] feeds the HJB solvers in [`hjb`], which
//! produce the ergodic constant `chi(gamma)` and potential `w`. [`ergodic`]
//! derives the invariant measure and `chi'(gamma)`, [`duality`] turns the
//! `chi` curve into the downside rate function, and [`montecarlo`] checks
//! the resulting probabilities by simulation. [`oracle`] holds closed forms.

pub mod duality;
pub mod ergodic;
pub mod error;
mod fd;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod oracle;

pub use error::{Error, Result};
