//! Equilibrium investment and consumption rules for a population of CRRA
//! agents who compare their wealth and consumption with the crowd.
//!
//! A representative agent of some type invests a fraction `π` of wealth in a
//! risky asset driven by an idiosyncratic and a common Brownian motion, and
//! consumes at rate `c`. Utility is power (CRRA) utility of terminal wealth
//! and of consumption, both measured relative to the population's geometric
//! mean wealth and consumption, weighted by a competition parameter `θ`.
//!
//! When market coefficients are deterministic per type, the equilibrium is
//! explicit:
//!
//! ```text
//! π*_t = h/((1-γ)(σ²+σ0²)) - θγσ0 φ_t/((1-γ)(σ²+σ0²)(1+ψ_t))
//! c*_t = D e^{-∫_t^T B} / (1 + D ∫_t^T e^{-∫_s^T B} ds)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`population`] heterogeneous agent types and the population expectation,
//! * [`odequad`] RK4 and cumulative trapezoid kernels on the shared grid,
//! * [`closedform`] every explicit equilibrium quantity,
//! * [`verify`] BSDE driver and residual, optimality drift, value function,
//! * [`montecarlo`] wealth simulation, utility estimation, deviation and
//!   fixed-point tests,
//! * [`sensitivity`] parameter sweeps around an equilibrium.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled; `std` only adds rayon parallelism to the Monte-Carlo loops.
//! Results are identical either way.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod closedform;
mod error;
pub mod grid;
pub mod math;
pub mod montecarlo;
pub mod odequad;
pub mod population;
pub mod sensitivity;
pub mod verify;

pub use closedform::{EquilibriumSolution, Thresholds};
pub use error::{Error, Result};
pub use grid::{GridCurve, ParamCurve, TimeGrid};
pub use population::{AgentType, Bounds, Population, ValidationReport};
