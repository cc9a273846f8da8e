//! Numerical machinery for backward doubly stochastic differential equations
//! (BDSDEs) driven by finite-activity Levy processes.
//!
//! The crate covers the full pipeline:
//!
//! * [`levy_model`] — finite-activity Levy models and their moment sequences;
//! * [`teugels_basis`] — orthonormalized Teugels martingale bases built from
//!   those moments;
//! * [`path_engine`] — exact path simulation of the driving processes and the
//!   martingale increments, plus statistical sanity checks;
//! * [`coefficients`] — equation data `(f, g, h, xi)` with growth, modulus,
//!   monotonicity, Osgood, and terminal-integrability checkers;
//! * [`picard_solver`] — a regression-based backward Picard solver;
//! * [`contraction`] — contraction certificates: the constant `M`, interval
//!   schedules, and the `phi` majorant table;
//! * [`cli`] — configuration loading and the command-line entry points.
//!
//! The central object is the equation
//!
//! ```text
//! Y_t = xi + int_t^T f(s, Y_s, Z_s) ds + int_t^T h(s, Y_s) dA_s
//!          + int_t^T g(s, Y_s, Z_s) dB_s   (backward Ito integral)
//!          - sum_i int_t^T Z_s^(i) dH_s^(i)
//! ```
//!
//! where `H^(i)` are the orthonormalized Teugels martingales of the driver
//! and `A` is a nondecreasing process. All randomness is seeded explicitly;
//! every simulation and solve is bit-reproducible for a fixed seed.

pub mod cli;
pub mod coefficients;
pub mod contraction;
pub mod error;
pub mod levy_model;
pub mod path_engine;
pub mod picard_solver;
pub mod quadrature;
pub mod teugels_basis;

pub use error::{Error, Result};
