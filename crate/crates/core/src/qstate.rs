//! Two-level state algebra.
//!
//! The density matrix is the canonical representation; [`BlochVector`] is a
//! view onto it. Basis ordering is `|0⟩, |1⟩` with `σz|0⟩ = +|0⟩`, so a
//! measurement record with mean `+1` corresponds to the ground state.

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::measure::MeasurementParams;
use crate::ParamError;

/// 2×2 complex matrix used for states, effects and operators.
pub type Mat2 = Matrix2<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
/// Largest Bloch-norm excess accepted from an external matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Largest Bloch-norm excess silently rescaled after a stochastic update.
pub const REPAIR_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0} instead of 1")]
    BadTrace(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    NotPositive(f64),
    #[error("state update left the Bloch sphere by {excess:e} (limit {REPAIR_LIMIT:e}); reduce the step size")]
    StepTooLarge { excess: f64 },
    #[error("state contains non-finite entries")]
    NonFinite,
    #[error("zero-norm amplitude vector")]
    ZeroNorm,
    #[error(transparent)]
    Param(#[from] ParamError),
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity() -> Mat2 {
    Mat2::identity()
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.))
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.))
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.))
}

/// Projector onto `|0⟩` (`σz = +1`).
pub fn projector_ground() -> Mat2 {
    Mat2::new(c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.))
}

/// Projector onto `|1⟩` (`σz = -1`).
pub fn projector_excited() -> Mat2 {
    Mat2::new(c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.))
}

/// Real trace of `a·b`.
pub fn trace_product(a: &Mat2, b: &Mat2) -> Complex64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)] + a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)]
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Qubit density matrix.
///
/// Always Hermitian, unit trace and positive (Bloch norm at most
/// `1 + POSITIVITY_TOL`). Construct through [`QubitState::from_matrix`],
/// [`QubitState::from_bloch`] or one of the named states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    rho: Mat2,
}

impl QubitState {
    pub fn from_matrix(rho: Mat2) -> Result<Self, StateError> {
        if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(StateError::NonFinite);
        }
        let herm = (rho - rho.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(StateError::BadTrace(tr.re));
        }
        let state = Self { rho };
        let r = state.bloch().norm();
        if r > 1.0 + POSITIVITY_TOL {
            return Err(StateError::NotPositive(r));
        }
        Ok(state)
    }

    pub fn from_bloch(b: BlochVector) -> Result<Self, StateError> {
        let r = b.norm();
        if !r.is_finite() {
            return Err(StateError::NonFinite);
        }
        if r > 1.0 + POSITIVITY_TOL {
            return Err(StateError::NotPositive(r));
        }
        Ok(Self::from_bloch_unchecked(b))
    }

    pub(crate) fn from_bloch_unchecked(b: BlochVector) -> Self {
        let rho = Mat2::new(
            c(0.5 * (1.0 + b.z), 0.0),
            c(0.5 * b.x, -0.5 * b.y),
            c(0.5 * b.x, 0.5 * b.y),
            c(0.5 * (1.0 - b.z), 0.0),
        );
        Self { rho }
    }

    /// Pure state `a0|0⟩ + a1|1⟩`, normalized.
    pub fn pure(a0: Complex64, a1: Complex64) -> Result<Self, StateError> {
        let n = (a0.norm_sqr() + a1.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(StateError::ZeroNorm);
        }
        let (a0, a1) = (a0 / n, a1 / n);
        let rho = Mat2::new(
            a0 * a0.conj(),
            a0 * a1.conj(),
            a1 * a0.conj(),
            a1 * a1.conj(),
        );
        Ok(Self { rho })
    }

    pub fn ground() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0., 0., 1.))
    }

    pub fn excited() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0., 0., -1.))
    }

    /// `|+x⟩ = (|0⟩ + |1⟩)/√2`.
    pub fn plus_x() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(1., 0., 0.))
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0., 0., 0.))
    }

    pub fn rho(&self) -> &Mat2 {
        &self.rho
    }

    pub fn bloch(&self) -> BlochVector {
        let r01 = self.rho[(0, 1)];
        BlochVector {
            x: 2.0 * r01.re,
            y: -2.0 * r01.im,
            z: (self.rho[(0, 0)] - self.rho[(1, 1)]).re,
        }
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Population of `|0⟩`.
    pub fn p0(&self) -> f64 {
        self.rho[(0, 0)].re
    }

    /// Population of `|1⟩`.
    pub fn p1(&self) -> f64 {
        self.rho[(1, 1)].re
    }

    /// `Tr(ρ·op)`.
    pub fn expect(&self, op: &Mat2) -> Complex64 {
        trace_product(&self.rho, op)
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, u: &Mat2) -> Self {
        Self { rho: u * self.rho * u.adjoint() }
    }

    /// Wrap the result of a stochastic update, enforcing the positivity
    /// repair rule: Hermitize, renormalize the trace, and rescale the Bloch
    /// vector back onto the sphere if it overshoots by at most
    /// [`REPAIR_LIMIT`].
    pub(crate) fn repaired(rho: Mat2) -> Result<Self, StateError> {
        if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(StateError::NonFinite);
        }
        let tr = (rho[(0, 0)] + rho[(1, 1)]).re;
        let p0 = rho[(0, 0)].re / tr;
        let off = 0.5 * (rho[(0, 1)] + rho[(1, 0)].conj()) / tr;
        let mut b = BlochVector { x: 2.0 * off.re, y: -2.0 * off.im, z: 2.0 * p0 - 1.0 };
        let r = b.norm();
        if r > 1.0 {
            let excess = r - 1.0;
            if excess > REPAIR_LIMIT {
                return Err(StateError::StepTooLarge { excess });
            }
            b = BlochVector { x: b.x / r, y: b.y / r, z: b.z / r };
        }
        Ok(Self::from_bloch_unchecked(b))
    }

    /// Off-diagonal scaling and population reweighting done in place, for
    /// the diagonal Kraus maps of the measurement module. The caller
    /// guarantees the result is a valid state up to rounding.
    pub(crate) fn from_parts(p0: f64, p1: f64, coherence: Complex64) -> Self {
        let rho = Mat2::new(c(p0, 0.0), coherence, coherence.conj(), c(p1, 0.0));
        Self { rho }
    }

    pub(crate) fn coherence(&self) -> Complex64 {
        self.rho[(0, 1)]
    }
}

/// Free-function forms of the state views.
pub fn bloch_of(state: &QubitState) -> BlochVector {
    state.bloch()
}

pub fn state_of(b: BlochVector) -> Result<QubitState, StateError> {
    QubitState::from_bloch(b)
}

pub fn purity(state: &QubitState) -> f64 {
    state.purity()
}

/// System ⊗ environment pure state, index `2·s + e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    psi: [Complex64; 4],
}

impl TwoQubitState {
    pub fn new(psi: [Complex64; 4]) -> Result<Self, StateError> {
        let n = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(StateError::ZeroNorm);
        }
        Ok(Self { psi: psi.map(|a| a / n) })
    }

    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.psi
    }

    pub fn amplitude(&self, sys: usize, env: usize) -> Complex64 {
        self.psi[2 * sys + env]
    }

    /// Reduced density matrix of the system qubit.
    pub fn system_reduced(&self) -> QubitState {
        let mut rho = Mat2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                rho[(i, j)] = (0..2).map(|e| self.amplitude(i, e) * self.amplitude(j, e).conj()).sum();
            }
        }
        QubitState { rho }
    }

    /// Purity of the reduced system state; 1 for a product state.
    pub fn system_purity(&self) -> f64 {
        self.system_reduced().purity()
    }
}

/// Circuit-QED hardware numbers in the dispersive limit.
///
/// `omega01`, `omegac`, `g` and `delta` are informational; nothing evolves
/// them. Only `chi`, `nbar`, `kappa`, `eta` and `gamma` enter the
/// measurement model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CqedParams {
    /// Dispersive shift χ [rad/s].
    pub chi: f64,
    /// Mean intracavity photon number.
    pub nbar: f64,
    /// Cavity linewidth κ [rad/s].
    pub kappa: f64,
    /// Detection efficiency η ∈ (0, 1].
    pub eta: f64,
    /// Environmental dephasing γ [1/s].
    pub gamma: f64,
    pub omega01: f64,
    pub omegac: f64,
    pub g: f64,
    pub delta: f64,
}

impl CqedParams {
    pub fn new(chi: f64, nbar: f64, kappa: f64, eta: f64, gamma: f64) -> Result<Self, ParamError> {
        let p = Self {
            chi,
            nbar,
            kappa,
            eta,
            gamma,
            omega01: 0.0,
            omegac: 0.0,
            g: 0.0,
            delta: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Fill χ from the coupling and detuning with the standard dispersive
    /// result `χ = g²/Δ`. This relation is not part of the measurement model
    /// proper; it is a convenience for entering hardware numbers.
    pub fn with_coupling(mut self, omega01: f64, omegac: f64, g: f64) -> Result<Self, ParamError> {
        let delta = omega01 - omegac;
        if delta == 0.0 {
            return Err(ParamError::new("delta", delta, "nonzero qubit-cavity detuning"));
        }
        self.omega01 = omega01;
        self.omegac = omegac;
        self.g = g;
        self.delta = delta;
        self.chi = (g * g / delta).abs();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check_nonneg("chi", self.chi)?;
        ParamError::check_nonneg("nbar", self.nbar)?;
        ParamError::check_positive("kappa", self.kappa)?;
        ParamError::check_nonneg("gamma", self.gamma)?;
        ParamError::check_efficiency("eta", self.eta)?;
        Ok(())
    }

    /// Measurement strength `k = 4χ²n̄/κ` [1/s].
    pub fn measurement_strength(&self) -> f64 {
        4.0 * self.chi * self.chi * self.nbar / self.kappa
    }

    /// Dimensionless strength of a record integrated over `tau`:
    /// `S = 64τχ²n̄η/κ`.
    pub fn strength_s(&self, tau: f64) -> f64 {
        64.0 * tau * self.chi * self.chi * self.nbar * self.eta / self.kappa
    }

    /// Correlation time of the binned record, `1/κ`.
    pub fn bin_correlation_time(&self) -> f64 {
        1.0 / self.kappa
    }
}

/// Map hardware numbers onto the discrete measurement model with bin `dt`.
pub fn measurement_params(c: &CqedParams, dt: f64) -> Result<MeasurementParams, ParamError> {
    c.validate()?;
    MeasurementParams::new(c.measurement_strength(), c.eta, dt, c.gamma)
}
