//! Simulation and analysis of the instantaneous-interaction measurement of a
//! harmonic oscillator by a selectively coupled two-level probe.
//!
//! The probe starts in |g⟩ next to an unknown (and possibly decohering)
//! oscillator state ρ_f. The zero-time curvature of the probe excitation
//! probability P_e(τ) encodes the Fock population P_N of the resonant doublet,
//! independently of any Lindblad noise acting on the oscillator. This crate
//! simulates that dynamics, estimates populations from finite-shot three-point
//! samples, evaluates the associated shot-noise budget, and reconstructs
//! Wigner and Q functions from displaced populations.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hilbert;
pub mod planner;
pub mod protocol;
pub mod rng;
pub mod tomography;

pub use error::{Error, Result};
