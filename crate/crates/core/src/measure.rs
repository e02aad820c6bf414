//! Discrete weak measurements of σz and of the qubit phase.
//!
//! A bin of duration `dt` with strength `k` and efficiency `η` yields an
//! outcome `V` drawn from two Gaussians of variance `a² = 1/(4kη·dt)`
//! centred on ±1. The conditional update is the Gaussian Kraus map
//! followed by two off-diagonal damping factors: `exp(−2k(1−η)dt)` for the
//! part of the signal the detector loses, and `exp(−γ·dt)` for
//! environmental dephasing.
//!
//! The strength `k = 0` is accepted and means an unmonitored qubit: the
//! detector is off, every sample is `0` and no update carries information.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::qstate::{c, Mat2, QubitState, StateError, TwoQubitState};
use crate::rng::normal;
use crate::ParamError;

/// `ln(1e-300)`: outcomes with smaller probability density are rejected.
const LN_MIN_DENSITY: f64 = -690.775_527_898_213_7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("outcome V = {v} has probability density below 1e-300 for this state")]
    ImpossibleOutcome { v: f64 },
    #[error("|eps| = {0} exceeds 0.3; the indirect model is only meaningful for weak coupling")]
    CouplingTooStrong(f64),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum Quadrature {
    /// σz-carrying quadrature.
    #[default]
    Q,
    /// Phase (photon-number) quadrature: rotates the qubit about z.
    I,
}

impl std::fmt::Display for Quadrature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quadrature::Q => "Q",
            Quadrature::I => "I",
        })
    }
}

/// Strength, efficiency, bin width and dephasing of one measurement bin.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasurementParams {
    /// Measurement strength [1/s].
    pub k: f64,
    /// Detection efficiency.
    pub eta: f64,
    /// Bin duration [s].
    pub dt: f64,
    /// Environmental dephasing [1/s].
    pub gamma: f64,
}

impl MeasurementParams {
    pub fn new(k: f64, eta: f64, dt: f64, gamma: f64) -> Result<Self, ParamError> {
        ParamError::check_nonneg("k", k)?;
        ParamError::check_efficiency("eta", eta)?;
        ParamError::check_positive("dt", dt)?;
        ParamError::check_nonneg("gamma", gamma)?;
        Ok(Self { k, eta, dt, gamma })
    }

    pub fn with_dt(self, dt: f64) -> Result<Self, ParamError> {
        Self::new(self.k, self.eta, dt, self.gamma)
    }

    pub fn with_eta(self, eta: f64) -> Result<Self, ParamError> {
        Self::new(self.k, eta, self.dt, self.gamma)
    }

    /// Outcome variance `a²` of a single bin. Infinite when `k = 0`.
    pub fn a2(&self) -> f64 {
        1.0 / self.inv_a2()
    }

    /// `1/a² = 4kη·dt`, finite for every valid parameter set.
    pub fn inv_a2(&self) -> f64 {
        4.0 * self.k * self.eta * self.dt
    }

    /// Characteristic measurement time `1/(4kη)`.
    pub fn tau_c(&self) -> f64 {
        1.0 / (4.0 * self.k * self.eta)
    }

    /// Dimensionless strength `S = 16kητ` of a record integrated over `tau`.
    pub fn strength(&self, tau: f64) -> f64 {
        16.0 * self.k * self.eta * tau
    }

    /// Off-diagonal factor per bin from the unread part of the signal.
    pub fn unread_damping(&self) -> f64 {
        (-2.0 * self.k * (1.0 - self.eta) * self.dt).exp()
    }

    /// Off-diagonal factor per bin from environmental dephasing.
    pub fn environment_damping(&self) -> f64 {
        (-self.gamma * self.dt).exp()
    }

    pub fn monitored(&self) -> bool {
        self.k > 0.0
    }
}

/// Gaussian Kraus operator `Ω_V`, diagonal in the σz basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PovmOperator {
    /// `(Ω_V)_00`, `(Ω_V)_11`.
    pub diag: [f64; 2],
    pub outcome: f64,
}

impl PovmOperator {
    /// `Ω_V = (2πa²)^(−1/4) exp(−(V − σz)²/4a²)`.
    pub fn gaussian(v: f64, a2: f64) -> Self {
        let norm = (2.0 * PI * a2).powf(-0.25);
        let w = |s: f64| norm * (-(v - s) * (v - s) / (4.0 * a2)).exp();
        Self { diag: [w(1.0), w(-1.0)], outcome: v }
    }

    pub fn matrix(&self) -> Mat2 {
        Mat2::new(c(self.diag[0], 0.), c(0., 0.), c(0., 0.), c(self.diag[1], 0.))
    }
}

pub fn povm_operator(v: f64, p: &MeasurementParams) -> PovmOperator {
    PovmOperator::gaussian(v, p.a2())
}

/// Outcome distribution `ρ00·N(+1, a²) + ρ11·N(−1, a²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomePdf {
    pub p0: f64,
    pub p1: f64,
    pub a2: f64,
}

impl OutcomePdf {
    pub fn density(&self, v: f64) -> f64 {
        let g = |m: f64| (-(v - m) * (v - m) / (2.0 * self.a2)).exp() / (2.0 * PI * self.a2).sqrt();
        self.p0 * g(1.0) + self.p1 * g(-1.0)
    }

    pub fn mean(&self) -> f64 {
        self.p0 - self.p1
    }

    pub fn variance(&self) -> f64 {
        self.a2 + 1.0 - self.mean().powi(2)
    }
}

pub fn outcome_pdf(state: &QubitState, p: &MeasurementParams) -> OutcomePdf {
    OutcomePdf { p0: state.p0(), p1: state.p1(), a2: p.a2() }
}

/// Draw `V` from the exact two-Gaussian mixture. Returns `0` when `k = 0`.
pub fn sample_outcome<R: Rng + ?Sized>(state: &QubitState, p: &MeasurementParams, rng: &mut R) -> f64 {
    if !p.monitored() {
        return 0.0;
    }
    let u: f64 = rng.random();
    let centre = if u < state.p0() { 1.0 } else { -1.0 };
    centre + p.a2().sqrt() * normal(rng)
}

/// Draw a phase-quadrature sample: state independent, `N(0, a²)`.
pub fn sample_phi_outcome<R: Rng + ?Sized>(p: &MeasurementParams, rng: &mut R) -> f64 {
    if !p.monitored() {
        return 0.0;
    }
    p.a2().sqrt() * normal(rng)
}

/// `Ω_V ρ Ω_V†/P(V)` with `1/a² = inv_a2`, computed in log space so strong
/// bins do not underflow. No damping factors.
pub(crate) fn kraus_z(state: &QubitState, v: f64, inv_a2: f64) -> Result<QubitState, MeasureError> {
    if inv_a2 == 0.0 {
        return Ok(*state);
    }
    let l0 = -(v - 1.0) * (v - 1.0) * inv_a2 / 2.0;
    let l1 = -(v + 1.0) * (v + 1.0) * inv_a2 / 2.0;
    let (p0, p1) = (state.p0().max(0.0), state.p1().max(0.0));
    let lp0 = p0.ln() + l0;
    let lp1 = p1.ln() + l1;
    let m = lp0.max(lp1);
    if !m.is_finite() {
        return Err(MeasureError::ImpossibleOutcome { v });
    }
    let u0 = (lp0 - m).exp();
    let u1 = (lp1 - m).exp();
    let n = u0 + u1;
    if m + n.ln() + 0.5 * (inv_a2 / (2.0 * PI)).ln() < LN_MIN_DENSITY {
        return Err(MeasureError::ImpossibleOutcome { v });
    }
    let r01 = state.coherence();
    let coherence = if r01.norm() == 0.0 {
        r01
    } else {
        let ln_mag = r01.norm().ln() + (l0 + l1) / 2.0 - m - n.ln();
        Complex64::from_polar(ln_mag.exp(), r01.arg())
    };
    Ok(QubitState::from_parts(u0 / n, u1 / n, coherence))
}

/// Rotate about z by `θ`: `ρ01 → ρ01·e^{iθ}`. From `+x`, a positive angle
/// moves the Bloch vector towards `−y`.
pub(crate) fn rotate_z(state: &QubitState, theta: f64) -> QubitState {
    QubitState::from_parts(state.p0(), state.p1(), state.coherence() * Complex64::from_polar(1.0, theta))
}

pub(crate) fn damp(state: &QubitState, factor: f64) -> QubitState {
    if factor == 1.0 {
        return *state;
    }
    QubitState::from_parts(state.p0(), state.p1(), state.coherence() * factor)
}

/// Direction of the phase kick relative to the phase-quadrature sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum PhiSign {
    /// `+x → (cos θ, −sin θ, 0)` for `θ = V·S/4 > 0`.
    #[default]
    Standard,
    Reversed,
}

impl PhiSign {
    fn factor(self) -> f64 {
        match self {
            PhiSign::Standard => 1.0,
            PhiSign::Reversed => -1.0,
        }
    }
}

/// Conditional state after a σz bin with outcome `V`.
pub fn apply_backaction_z(state: &QubitState, v: f64, p: &MeasurementParams) -> Result<QubitState, MeasureError> {
    let s = kraus_z(state, v, p.inv_a2())?;
    Ok(damp(&s, p.unread_damping() * p.environment_damping()))
}

/// Conditional state after a phase bin: rotation by `θ = V·4kη·dt` about z.
pub fn apply_backaction_phi(state: &QubitState, v: f64, p: &MeasurementParams) -> QubitState {
    apply_backaction_phi_signed(state, v, p, PhiSign::Standard)
}

pub fn apply_backaction_phi_signed(state: &QubitState, v: f64, p: &MeasurementParams, sign: PhiSign) -> QubitState {
    let s = rotate_z(state, sign.factor() * v * p.inv_a2());
    damp(&s, p.unread_damping() * p.environment_damping())
}

/// Simultaneous readout of both quadratures, each carrying half the
/// detected information. The unread damping is applied once: the two
/// channels together account for `η` of the signal.
pub fn apply_backaction_dual(
    state: &QubitState,
    v_q: f64,
    v_i: f64,
    p: &MeasurementParams,
) -> Result<QubitState, MeasureError> {
    let half = p.inv_a2() / 2.0;
    let s = kraus_z(state, v_q, half)?;
    let s = rotate_z(&s, v_i * half);
    Ok(damp(&s, p.unread_damping() * p.environment_damping()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EnvBasis {
    Z,
    Y,
}

/// Environment readout result: `Plus` is `|0⟩` in the z basis and `|y+⟩`
/// in the y basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EnvOutcome {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndirectOutcome {
    /// Joint state after the interaction, before the environment is read.
    pub joint: TwoQubitState,
    /// Normalized system state after readout.
    pub system: QubitState,
    pub probability: f64,
    /// Joint state after readout: system state ⊗ environment outcome.
    pub joint_after: TwoQubitState,
}

/// Couple a `|+x⟩` system qubit to an environment qubit with strength
/// `eps`, then read the environment projectively.
pub fn indirect_two_qubit(eps: f64, basis: EnvBasis, outcome: EnvOutcome) -> Result<IndirectOutcome, MeasureError> {
    ParamError::check_finite("eps", eps)?;
    if eps.abs() > 0.3 {
        return Err(MeasureError::CouplingTooStrong(eps.abs()));
    }
    let (p, q) = (c(1.0 + eps, 0.0), c(1.0 - eps, 0.0));
    let joint = TwoQubitState::new([p, q, q, p])?;
    // ⟨e| for the chosen outcome, as conjugated coefficients on |0⟩, |1⟩.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (e0, e1) = match (basis, outcome) {
        (EnvBasis::Z, EnvOutcome::Plus) => (c(1., 0.), c(0., 0.)),
        (EnvBasis::Z, EnvOutcome::Minus) => (c(0., 0.), c(1., 0.)),
        (EnvBasis::Y, EnvOutcome::Plus) => (c(s, 0.), c(s, 0.)),
        (EnvBasis::Y, EnvOutcome::Minus) => (c(s, 0.), c(-s, 0.)),
    };
    let (b0, b1) = match basis {
        EnvBasis::Z => (e0, e1),
        // |y±⟩ = (|0⟩ ± i|1⟩)/√2, so ⟨y±| = (⟨0| ∓ i⟨1|)/√2.
        EnvBasis::Y => (e0, e1 * c(0.0, -1.0)),
    };
    let amp = |sys: usize| b0 * joint.amplitude(sys, 0) + b1 * joint.amplitude(sys, 1);
    let (a0, a1) = (amp(0), amp(1));
    let probability = a0.norm_sqr() + a1.norm_sqr();
    let system = QubitState::pure(a0, a1)?;
    // Environment ket |e⟩ is the conjugate of the bra coefficients.
    let (k0, k1) = (b0.conj(), b1.conj());
    let joint_after = TwoQubitState::new([a0 * k0, a0 * k1, a1 * k0, a1 * k1])?;
    Ok(IndirectOutcome { joint, system, probability, joint_after })
}
