//! Variable-step BDF2 scalar-auxiliary-variable solver for Allen–Cahn (L²) and
//! Cahn–Hilliard (H⁻¹) gradient flows on periodic rectangles.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod integrator;
pub mod io;
pub mod model;
pub mod spectral;
pub mod stepping;

pub use error::{Error, Result};
pub use integrator::{NewtonPolicy, RatioPolicy, StepOptions, StepRecord, StepState};
pub use model::{DoubleWell, Flow, Potential, SchemeParams, VKind};
pub use spectral::{Field, Grid};
