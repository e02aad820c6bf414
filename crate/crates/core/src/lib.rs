//! Continuous weak measurement of a dispersively read qubit.
//!
//! The crate simulates measurement records and conditioned trajectories,
//! reconstructs states from records, estimates past quantum states, runs an
//! analog Rabi-stabilizing feedback loop, and models the phase-sensitive
//! parametric amplifier as a driven Duffing oscillator.
//!
//! Module layout, bottom-up:
//!
//! * [`qstate`]: density matrices, Bloch vectors, the cQED parameter map.
//! * [`measure`]: Gaussian POVMs, outcome sampling, single-bin backaction.
//! * [`sme`]: time stepping, record generation, the Lindblad oracle.
//! * [`traj`]: reconstruction, conditional tomography, post-selection,
//!   forward/backward estimation.
//! * [`feedback`]: the phase-locking loop and its efficiency metric.
//! * [`paramp`]: Duffing steady states, bistability, small-signal gain.
//! * [`cli`]: JSON experiment specs, deterministic CSV output.

pub mod cli;
pub mod feedback;
pub mod measure;
pub mod paramp;
pub mod qstate;
pub mod rng;
pub mod sme;
pub mod traj;

pub use measure::{MeasurementParams, Quadrature};
pub use qstate::{BlochVector, QubitState};
pub use sme::{MeasurementRecord, SmeConfig, Trajectory};

/// A numeric argument outside its admissible range.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parameter `{name}` = {value} is invalid: expected {expected}")]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
    pub expected: &'static str,
}

impl ParamError {
    pub fn new(name: &'static str, value: f64, expected: &'static str) -> Self {
        Self { name, value, expected }
    }

    pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<(), ParamError> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Self::new(name, v, "a finite value > 0"))
        }
    }

    pub(crate) fn check_nonneg(name: &'static str, v: f64) -> Result<(), ParamError> {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(Self::new(name, v, "a finite value >= 0"))
        }
    }

    pub(crate) fn check_finite(name: &'static str, v: f64) -> Result<(), ParamError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Self::new(name, v, "a finite value"))
        }
    }

    pub(crate) fn check_efficiency(name: &'static str, v: f64) -> Result<(), ParamError> {
        if v.is_finite() && v > 0.0 && v <= 1.0 {
            Ok(())
        } else {
            Err(Self::new(name, v, "a value in (0, 1]"))
        }
    }
}
