//! Singular matrix pencils and semilinear differential-algebraic equations
//! `d/dt[A x] + B x = f(t, x)`.
//!
//! * [`pencil`]: pencil rank and regular/singular classification.
//! * [`decomp`]: block decomposition into underdetermined, overdetermined,
//!   finite and infinite parts with projectors and semi-inverses.
//! * [`reduce`]: the equivalent differential and algebraic subsystems,
//!   consistency residuals and Newton completion of the algebraic part.
//! * [`integrate`]: embedded Runge-Kutta integration of the reduced system
//!   with constraint monitoring and finite-escape detection.
//! * [`qualitative`]: sampled checks of Lyapunov-type hypotheses and scalar
//!   comparison inequalities.
//! * [`gasnet`]: isothermal gas pipe and network models.

pub mod decomp;
pub mod error;
pub mod fixtures;
pub mod gasnet;
pub mod integrate;
pub mod linalg;
pub mod matio;
pub mod pencil;
pub mod qualitative;
pub mod reduce;
pub mod synth;

pub use error::{Error, Result};
