//! Numerical laboratory for finite-state ergodic mean field games.
//!
//! The crate covers the full pipeline for a d-state game with quadratic
//! transition costs and a congestion-style mean-field coupling:
//!
//! - [`model`] — parameters, simplex points, rate vectors, the Hamiltonian
//!   and its clamped optimal selector;
//! - [`systems`] — the stationary system (closed form and damped fixed
//!   point) and the forward Kolmogorov flow;
//! - [`dgm`] — a from-scratch MLP trained against the ergodic master
//!   equation residual (deep Galerkin style) with an exact analytic
//!   gradient;
//! - [`sim`] — exact event-driven simulation of the n-player game under
//!   stationary, master-equation, time-dependent, and single-deviator
//!   profiles;
//! - [`birth_death`] — exact d = 2 stationary count distributions and
//!   realized per-player costs;
//! - [`ld`] — large-deviation rate functions: the Legendre pair tau/tau*,
//!   the action functional, its variational dual, and the d = 2 good rate
//!   function in closed form and by quadrature.

pub mod birth_death;
pub mod dgm;
pub mod error;
pub mod ld;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod systems;

pub use error::{MfgError, Result};
