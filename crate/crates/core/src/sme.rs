//! Time stepping of a continuously monitored, Rabi-driven qubit.
//!
//! Each bin of width `dt` produces one record sample
//! `V = ⟨σz⟩ + ξ/√(4kη·dt)` with `ξ ~ N(0, 1)`, so the sample variance is the
//! POVM variance `a²`. The drive is `H = Ωσy/2`, which rotates the Bloch
//! vector as `ẋ = Ωz`, `ż = −Ωx`; total transverse dephasing of the
//! unconditioned state is `2k + γ`.
//!
//! Two schemes are provided. [`Scheme::Kraus`] (the default) splits each bin
//! into half a drive rotation, the Gaussian Kraus update for `V`, the
//! unread and environmental damping, and the other half rotation. It keeps
//! pure states pure at `η = 1` to rounding. [`Scheme::EulerMaruyama`] is the
//! plain Itô step of the stochastic master equation. At `η = 1` it leaves
//! the Bloch sphere by `O(k·dt)` per step and will usually trip the
//! positivity guard, so it is mainly useful as a reference for the weak
//! limit.

use rayon::prelude::*;

use crate::measure::{self, MeasureError, MeasurementParams, PhiSign, Quadrature};
use crate::qstate::{BlochVector, QubitState, StateError};
use crate::rng::{normal, stream};
use crate::ParamError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmeError {
    #[error("dt = {dt:e} s exceeds tau_c/100 = {limit:e} s")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("duration {duration:e} s is shorter than one bin ({dt:e} s)")]
    TooShort { duration: f64, dt: f64 },
    #[error("step {step}: {source}")]
    Step { step: usize, source: StateError },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Kraus,
    EulerMaruyama,
}

/// One monitored, driven experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SmeConfig {
    pub params: MeasurementParams,
    /// Rabi frequency Ω [rad/s].
    pub omega_r: f64,
    /// Total duration [s].
    pub duration: f64,
    pub initial: QubitState,
    pub seed: u64,
    pub quadrature: Quadrature,
    pub scheme: Scheme,
    pub phi_sign: PhiSign,
}

impl SmeConfig {
    pub fn new(
        params: MeasurementParams,
        omega_r: f64,
        duration: f64,
        initial: QubitState,
        seed: u64,
    ) -> Result<Self, SmeError> {
        let cfg = Self {
            params,
            omega_r,
            duration,
            initial,
            seed,
            quadrature: Quadrature::Q,
            scheme: Scheme::Kraus,
            phi_sign: PhiSign::Standard,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SmeError> {
        let p = MeasurementParams::new(self.params.k, self.params.eta, self.params.dt, self.params.gamma)?;
        ParamError::check_finite("omega_r", self.omega_r)?;
        ParamError::check_positive("duration", self.duration)?;
        if p.monitored() && p.dt > p.tau_c() / 100.0 * (1.0 + 1e-12) {
            return Err(SmeError::StepTooCoarse { dt: p.dt, limit: p.tau_c() / 100.0 });
        }
        if self.duration < p.dt * (1.0 - 1e-12) {
            return Err(SmeError::TooShort { duration: self.duration, dt: p.dt });
        }
        Ok(())
    }

    pub fn with_quadrature(mut self, q: Quadrature) -> Self {
        self.quadrature = q;
        self
    }

    pub fn with_scheme(mut self, s: Scheme) -> Self {
        self.scheme = s;
        self
    }

    pub fn with_phi_sign(mut self, s: PhiSign) -> Self {
        self.phi_sign = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial(mut self, s: QubitState) -> Self {
        self.initial = s;
        self
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    /// Number of bins, `floor(duration/dt)`, tolerant of rounding in the ratio.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.params.dt * (1.0 + 1e-12)).floor() as usize
    }

    /// Time at the end of bin `i` (zero-based).
    pub fn t_end(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.params.dt
    }
}

/// Binned homodyne samples. Sample `i` is the bin ending at `(i+1)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub samples: Vec<(f64, f64)>,
    pub dt: f64,
    pub quadrature: Quadrature,
    pub seed: u64,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|&(_, v)| v)
    }

    /// Means of `m` consecutive samples; a trailing partial group is dropped.
    pub fn binned(&self, m: usize) -> Vec<f64> {
        assert!(m > 0, "bin size must be positive");
        self.samples.chunks_exact(m).map(|c| c.iter().map(|&(_, v)| v).sum::<f64>() / m as f64).collect()
    }

    /// Uniform spacing, strictly increasing times, finite values.
    pub fn is_well_formed(&self) -> bool {
        self.samples.iter().enumerate().all(|(i, &(t, v))| {
            v.is_finite() && (t - (i + 1) as f64 * self.dt).abs() <= 1e-9 * self.dt.max(t.abs())
        })
    }
}

/// A conditioned state series with the record that produced it.
/// `states[0]` is the initial state at `t = 0`; `states[i + 1]` follows
/// record sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(f64, QubitState)>,
    pub record: MeasurementRecord,
    pub config: SmeConfig,
}

impl Trajectory {
    pub fn bloch(&self) -> Vec<BlochVector> {
        self.states.iter().map(|(_, s)| s.bloch()).collect()
    }

    /// Index into `states` of the grid point closest to `t`, if `t` is on
    /// the grid (within 1e-6 of a bin).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        grid_index(t, self.config.dt(), self.states.len() - 1)
    }

    pub fn state_at(&self, t: f64) -> Option<&QubitState> {
        self.index_of(t).map(|i| &self.states[i].1)
    }
}

pub(crate) fn grid_index(t: f64, dt: f64, n: usize) -> Option<usize> {
    let r = t / dt;
    let i = r.round();
    if i < 0.0 || (r - i).abs() > 1e-6 || i as usize > n {
        None
    } else {
        Some(i as usize)
    }
}

/// Precomputed per-configuration constants of the bin update.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BinUpdate {
    inv_a2: f64,
    noise_scale: f64,
    damping: f64,
    dt: f64,
    k: f64,
    eta: f64,
    gamma: f64,
    quadrature: Quadrature,
    scheme: Scheme,
    phi_sign: f64,
}

impl BinUpdate {
    pub(crate) fn new(cfg: &SmeConfig) -> Self {
        let p = &cfg.params;
        let inv_a2 = p.inv_a2();
        Self {
            inv_a2,
            noise_scale: if inv_a2 > 0.0 { 1.0 / inv_a2.sqrt() } else { 0.0 },
            damping: p.unread_damping() * p.environment_damping(),
            dt: p.dt,
            k: p.k,
            eta: p.eta,
            gamma: p.gamma,
            quadrature: cfg.quadrature,
            scheme: cfg.scheme,
            phi_sign: match cfg.phi_sign {
                PhiSign::Standard => 1.0,
                PhiSign::Reversed => -1.0,
            },
        }
    }

    /// Record sample for a bin whose pre-measurement state has `z`.
    #[inline]
    pub(crate) fn sample(&self, z: f64, xi: f64) -> f64 {
        if self.inv_a2 == 0.0 {
            return 0.0;
        }
        match self.quadrature {
            Quadrature::Q => z + xi * self.noise_scale,
            Quadrature::I => xi * self.noise_scale,
        }
    }

    /// Advance one bin with drive `omega`. The record sample is produced by
    /// `sample_fn` from the state at which the measurement acts, which keeps
    /// generation and reconstruction on one code path.
    #[inline]
    pub(crate) fn advance(
        &self,
        state: &QubitState,
        omega: f64,
        sample_fn: impl FnOnce(f64) -> f64,
    ) -> Result<(QubitState, f64), SmeError> {
        match self.scheme {
            Scheme::Kraus => {
                let half = rotate_y(state, 0.5 * omega * self.dt);
                let v = sample_fn(half.bloch().z);
                let s = match self.quadrature {
                    Quadrature::Q => measure::kraus_z(&half, v, self.inv_a2)?,
                    Quadrature::I => measure::rotate_z(&half, self.phi_sign * v * self.inv_a2),
                };
                let s = measure::damp(&s, self.damping);
                let s = rotate_y(&s, 0.5 * omega * self.dt);
                let s = QubitState::repaired(*s.rho()).map_err(|e| SmeError::Step { step: 0, source: e })?;
                Ok((s, v))
            }
            Scheme::EulerMaruyama => {
                let b = state.bloch();
                let v = sample_fn(b.z);
                let dt = self.dt;
                let g2 = 2.0 * self.k + self.gamma;
                let mut x = b.x + (omega * b.z - g2 * b.x) * dt;
                let mut y = b.y - g2 * b.y * dt;
                let mut z = b.z - omega * b.x * dt;
                match self.quadrature {
                    Quadrature::Q => {
                        let w = 4.0 * self.eta * self.k * (v - b.z) * dt;
                        x -= b.z * b.x * w;
                        y -= b.z * b.y * w;
                        z += (1.0 - b.z * b.z) * w;
                    }
                    Quadrature::I => {
                        let th = self.phi_sign * v * self.inv_a2;
                        let (sn, cs) = th.sin_cos();
                        let (xr, yr) = (x * cs + y * sn, y * cs - x * sn);
                        x = xr;
                        y = yr;
                    }
                }
                let s = QubitState::from_bloch_unchecked(BlochVector::new(x, y, z));
                let s = QubitState::repaired(*s.rho()).map_err(|e| SmeError::Step { step: 0, source: e })?;
                Ok((s, v))
            }
        }
    }
}

/// Rotation about y by `theta`: `x → x cos θ + z sin θ`, `z → z cos θ − x sin θ`.
pub(crate) fn rotate_y(state: &QubitState, theta: f64) -> QubitState {
    if theta == 0.0 {
        return *state;
    }
    let b = state.bloch();
    let (s, c) = theta.sin_cos();
    QubitState::from_bloch_unchecked(BlochVector::new(b.x * c + b.z * s, b.y, b.z * c - b.x * s))
}

/// Advance one bin at the configured Rabi frequency with noise draw `xi`.
pub fn step(state: &QubitState, cfg: &SmeConfig, xi: f64) -> Result<(QubitState, f64), SmeError> {
    step_driven(state, cfg, cfg.omega_r, xi)
}

/// As [`step`], with an explicit instantaneous Rabi frequency.
pub fn step_driven(state: &QubitState, cfg: &SmeConfig, omega: f64, xi: f64) -> Result<(QubitState, f64), SmeError> {
    let u = BinUpdate::new(cfg);
    u.advance(state, omega, |z| u.sample(z, xi))
}

/// Run one experiment, calling `observe(i, t, state, v)` after every bin
/// instead of storing the series. Returns the final state.
pub fn simulate_with<F>(cfg: &SmeConfig, mut observe: F) -> Result<QubitState, SmeError>
where
    F: FnMut(usize, f64, &QubitState, f64),
{
    cfg.validate()?;
    let u = BinUpdate::new(cfg);
    let mut rng = stream(cfg.seed);
    let mut s = cfg.initial;
    for i in 0..cfg.n_steps() {
        let xi = normal(&mut rng);
        let (next, v) = u.advance(&s, cfg.omega_r, |z| u.sample(z, xi)).map_err(|e| at_step(e, i))?;
        s = next;
        observe(i, cfg.t_end(i), &s, v);
    }
    Ok(s)
}

pub(crate) fn at_step(e: SmeError, i: usize) -> SmeError {
    match e {
        SmeError::Step { source, .. } => SmeError::Step { step: i, source },
        other => other,
    }
}

pub fn simulate(cfg: &SmeConfig) -> Result<Trajectory, SmeError> {
    let n = cfg.n_steps();
    let mut states = Vec::with_capacity(n + 1);
    let mut samples = Vec::with_capacity(n);
    states.push((0.0, cfg.initial));
    simulate_with(cfg, |_, t, s, v| {
        states.push((t, *s));
        samples.push((t, v));
    })?;
    Ok(Trajectory {
        states,
        record: MeasurementRecord { samples, dt: cfg.dt(), quadrature: cfg.quadrature, seed: cfg.seed },
        config: cfg.clone(),
    })
}

/// Unconditioned evolution on the simulation grid, integrated with RK4 on
/// the Bloch equations `ẋ = Ωz − (2k+γ)x`, `ẏ = −(2k+γ)y`, `ż = −Ωx`.
pub fn lindblad_solution(cfg: &SmeConfig) -> Vec<(f64, QubitState)> {
    const SUB: usize = 4;
    let g2 = 2.0 * cfg.params.k + cfg.params.gamma;
    let om = cfg.omega_r;
    let f = |b: [f64; 3]| [om * b[2] - g2 * b[0], -g2 * b[1], -om * b[0]];
    let h = cfg.dt() / SUB as f64;
    let mut b = cfg.initial.bloch().as_array();
    let mut out = Vec::with_capacity(cfg.n_steps() + 1);
    out.push((0.0, cfg.initial));
    let add = |a: [f64; 3], d: [f64; 3], s: f64| [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]];
    for i in 0..cfg.n_steps() {
        for _ in 0..SUB {
            let k1 = f(b);
            let k2 = f(add(b, k1, h / 2.0));
            let k3 = f(add(b, k2, h / 2.0));
            let k4 = f(add(b, k3, h));
            for j in 0..3 {
                b[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        let s = QubitState::from_bloch_unchecked(BlochVector::new(b[0], b[1], b[2]));
        out.push((cfg.t_end(i), s));
    }
    out
}

/// `n` trajectories with seeds `seed_base + index`, in index order.
pub fn ensemble(cfg: &SmeConfig, n: usize, seed_base: u64) -> Result<Vec<Trajectory>, SmeError> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate(&cfg.clone().with_seed(seed_base.wrapping_add(i))))
        .collect()
}

/// Pointwise ensemble statistics of the Bloch vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    /// Grid times, starting at 0.
    pub t: Vec<f64>,
    pub mean: Vec<BlochVector>,
    /// Standard error of the mean per component.
    pub stderr: Vec<BlochVector>,
    pub n: usize,
    /// Smallest purity seen anywhere in the ensemble.
    pub min_purity: f64,
}

const CHUNK: usize = 64;

#[derive(Clone)]
struct Sums {
    s1: Vec<[f64; 3]>,
    s2: Vec<[f64; 3]>,
    min_purity: f64,
}

impl Sums {
    fn zeros(len: usize) -> Self {
        Self { s1: vec![[0.0; 3]; len], s2: vec![[0.0; 3]; len], min_purity: 1.0 }
    }

    fn add_state(&mut self, i: usize, s: &QubitState) {
        let b = s.bloch().as_array();
        for j in 0..3 {
            self.s1[i][j] += b[j];
            self.s2[i][j] += b[j] * b[j];
        }
        self.min_purity = self.min_purity.min(s.purity());
    }

    fn merge(mut self, o: &Sums) -> Self {
        for (a, b) in self.s1.iter_mut().zip(&o.s1) {
            for j in 0..3 {
                a[j] += b[j];
            }
        }
        for (a, b) in self.s2.iter_mut().zip(&o.s2) {
            for j in 0..3 {
                a[j] += b[j];
            }
        }
        self.min_purity = self.min_purity.min(o.min_purity);
        self
    }
}

/// Stream `n` trajectories into pointwise means without storing them.
/// Trajectories are reduced in fixed chunks merged in index order, so the
/// result does not depend on the thread count.
pub fn ensemble_moments(cfg: &SmeConfig, n: usize, seed_base: u64) -> Result<EnsembleMoments, SmeError> {
    cfg.validate()?;
    let len = cfg.n_steps() + 1;
    let chunks: Vec<Result<Sums, SmeError>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Sums::zeros(len);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let run = cfg.clone().with_seed(seed_base.wrapping_add(i as u64));
                acc.add_state(0, &run.initial);
                simulate_with(&run, |j, _, s, _| acc.add_state(j + 1, s))?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Sums::zeros(len);
    for c in chunks {
        total = total.merge(&c?);
    }
    let nf = n as f64;
    let to_b = |a: [f64; 3]| BlochVector::new(a[0], a[1], a[2]);
    let mean: Vec<BlochVector> = total.s1.iter().map(|s| to_b([s[0] / nf, s[1] / nf, s[2] / nf])).collect();
    let stderr = total
        .s1
        .iter()
        .zip(&total.s2)
        .map(|(s1, s2)| {
            let se = |j: usize| {
                let m = s1[j] / nf;
                let var = ((s2[j] / nf - m * m) * nf / (nf - 1.0).max(1.0)).max(0.0);
                (var / nf).sqrt()
            };
            to_b([se(0), se(1), se(2)])
        })
        .collect();
    let t = (0..len).map(|i| i as f64 * cfg.dt()).collect();
    Ok(EnsembleMoments { t, mean, stderr, n, min_purity: total.min_purity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(k: f64, eta: f64, dt: f64, gamma: f64, omega: f64, duration: f64, init: QubitState) -> SmeConfig {
        SmeConfig::new(MeasurementParams::new(k, eta, dt, gamma).unwrap(), omega, duration, init, 1).unwrap()
    }

    #[test]
    fn rejects_coarse_steps() {
        let p = MeasurementParams::new(1.0, 1.0, 0.01, 0.0).unwrap();
        assert!(matches!(
            SmeConfig::new(p, 0.0, 1.0, QubitState::plus_x(), 0),
            Err(SmeError::StepTooCoarse { .. })
        ));
        let p = MeasurementParams::new(1.0, 1.0, 1e-4, 0.0).unwrap();
        assert!(matches!(SmeConfig::new(p, 0.0, 1e-5, QubitState::plus_x(), 0), Err(SmeError::TooShort { .. })));
    }

    #[test]
    fn step_count_survives_rounding() {
        let c = cfg(0.25, 1.0, 1e-3, 0.0, 0.0, 5.0, QubitState::plus_x());
        assert_eq!(c.n_steps(), 5000);
        let tr = simulate(&c).unwrap();
        assert_eq!(tr.states.len(), 5001);
        assert_eq!(tr.record.len(), 5000);
        assert!(tr.record.is_well_formed());
    }

    #[test]
    fn zero_noise_at_symmetric_point() {
        let c = cfg(0.25, 1.0, 1e-3, 0.0, 0.0, 1.0, QubitState::plus_x());
        let (s, v) = step(&QubitState::plus_x(), &c, 0.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(s.bloch().z, 0.0);
        assert!(1.0 - s.purity() < 1e-5);
    }

    #[test]
    fn euler_limit_without_noise_is_lindblad_euler() {
        let c = cfg(2.0, 0.7, 1e-4, 0.5, 3.0, 1.0, QubitState::plus_x()).with_scheme(Scheme::EulerMaruyama);
        let s0 = QubitState::from_bloch(BlochVector::new(0.4, 0.2, 0.5)).unwrap();
        let (s, _) = step(&s0, &c, 0.0).unwrap();
        let b = s.bloch();
        let g2 = 2.0 * 2.0 + 0.5;
        let dt = 1e-4;
        assert_abs_diff_eq!(b.x, 0.4 + (3.0 * 0.5 - g2 * 0.4) * dt, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y, 0.2 - g2 * 0.2 * dt, epsilon = 1e-15);
        assert_abs_diff_eq!(b.z, 0.5 - 3.0 * 0.4 * dt, epsilon = 1e-15);
    }

    #[test]
    fn unmonitored_dephasing_is_exact() {
        // With the detector off only environmental dephasing acts.
        let c = SmeConfig::new(MeasurementParams::new(0.0, 1.0, 1e-3, 0.3).unwrap(), 0.0, 2.0, QubitState::plus_x(), 3)
            .unwrap();
        let tr = simulate(&c).unwrap();
        for (t, s) in tr.states.iter().step_by(200) {
            assert_abs_diff_eq!(s.bloch().x, (-0.3 * t).exp(), epsilon = 1e-12);
        }
        assert!(tr.record.values().all(|v| v == 0.0));
    }

    #[test]
    fn lindblad_closed_forms() {
        let c = cfg(1.5, 0.5, 1e-3, 0.2, 0.0, 1.0, QubitState::plus_x());
        for (t, s) in lindblad_solution(&c).iter().step_by(100) {
            let b = s.bloch();
            assert_abs_diff_eq!(b.x, (-(2.0 * 1.5 + 0.2) * t).exp(), epsilon = 1e-12);
            assert_eq!(b.z, 0.0);
        }
        let c = SmeConfig::new(MeasurementParams::new(0.0, 1.0, 1e-3, 0.0).unwrap(), 7.0, 3.0, QubitState::ground(), 0)
            .unwrap();
        for (t, s) in lindblad_solution(&c).iter().step_by(250) {
            assert_abs_diff_eq!(s.bloch().z, (7.0 * t).cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn unmonitored_drive_matches_rabi() {
        let c = SmeConfig::new(MeasurementParams::new(0.0, 1.0, 1e-3, 0.0).unwrap(), 7.0, 3.0, QubitState::ground(), 0)
            .unwrap();
        let tr = simulate(&c).unwrap();
        for (t, s) in tr.states.iter().step_by(250) {
            assert_abs_diff_eq!(s.bloch().z, (7.0 * t).cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cfg(0.25, 0.6, 1e-3, 0.1, 2.0, 2.0, QubitState::plus_x());
        assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
        assert_ne!(simulate(&c).unwrap().record, simulate(&c.clone().with_seed(2)).unwrap().record);
    }

    #[test]
    fn ensemble_of_one_equals_simulate() {
        let c = cfg(0.25, 0.6, 1e-3, 0.1, 2.0, 0.5, QubitState::plus_x());
        let e = ensemble(&c, 1, 42).unwrap();
        assert_eq!(e[0], simulate(&c.clone().with_seed(42)).unwrap());
    }

    #[test]
    fn shared_chunks_are_thread_independent() {
        let c = cfg(0.25, 0.6, 1e-3, 0.1, 2.0, 0.3, QubitState::plus_x());
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| ensemble_moments(&c, 200, 9).unwrap());
        let b = three.install(|| ensemble_moments(&c, 200, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn unit_efficiency_purity_at_two_step_sizes() {
        let mut worst = Vec::new();
        for div in [1000.0, 4000.0] {
            let c = cfg(0.25, 1.0, 1.0 / div, 0.0, 0.0, 5.0, QubitState::plus_x());
            let m = ensemble_moments(&c, 50, 100).unwrap();
            worst.push(1.0 - m.min_purity);
        }
        // The Kraus step is exactly purity preserving; only rounding remains.
        assert!(worst[0] <= 1e-12, "{worst:?}");
        assert!(worst[1] <= 1e-12, "{worst:?}");
    }

    #[test]
    fn phi_quadrature_record_is_state_independent() {
        let c = cfg(0.25, 1.0, 1e-3, 0.0, 0.0, 2.0, QubitState::ground()).with_quadrature(Quadrature::I);
        let tr = simulate(&c).unwrap();
        for (_, s) in &tr.states {
            assert_eq!(s.bloch().z, 1.0);
        }
        let v: Vec<f64> = tr.record.values().collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let a = c.params.a2().sqrt();
        assert!(mean.abs() < 4.0 * a / (v.len() as f64).sqrt());
    }
}
