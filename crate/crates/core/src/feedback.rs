//! Phase-locking feedback on weakly monitored Rabi oscillations.
//!
//! The record is demodulated against `r(t) = sin(Ω_R t + φ_ref)` and low-pass
//! filtered to give the error signal `e`. The drive amplitude follows
//! `Ω(t) = Ω_R·(1 + F·e(t − delay))`. A qubit lagging the reference
//! (`z = cos(Ω_R t − φ)`, `φ > 0`) gives `e ≈ sin(φ)/2 > 0` and is sped up.

use rayon::prelude::*;

use crate::measure::MeasurementParams;
use crate::qstate::QubitState;
use crate::rng::{normal, stream};
use crate::sme::{at_step, BinUpdate, MeasurementRecord, SmeConfig, SmeError, Trajectory};
use crate::ParamError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedbackError {
    #[error("delay {delay:e} s is not an integer multiple of dt = {dt:e} s")]
    DelayOffGrid { delay: f64, dt: f64 },
    #[error("measurement-induced dephasing rate must be positive")]
    NoMeasurementDephasing,
    #[error("fit window [{0:e}, {1:e}] s holds too few samples")]
    WindowTooShort(f64, f64),
    #[error("a sweep needs at least {need} feedback strengths, got {got}")]
    TooFewGains { need: usize, got: usize },
    #[error(transparent)]
    Sme(#[from] SmeError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Single-pole IIR low-pass, `y += α(x − y)` with `α = 1 − exp(−ω_c·dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassFilter {
    alpha: f64,
    pub y: f64,
}

impl LowPassFilter {
    pub fn new(cutoff: f64, dt: f64) -> Self {
        Self { alpha: 1.0 - (-cutoff * dt).exp(), y: 0.0 }
    }

    #[inline]
    pub fn push(&mut self, x: f64) -> f64 {
        self.y += self.alpha * (x - self.y);
        self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    /// Monitored Rabi experiment; `base.omega_r` is the reference `Ω_R` and
    /// `base.params.gamma` the environmental dephasing `Γ_env`.
    pub base: SmeConfig,
    /// Loop gain `F`.
    pub gain: f64,
    /// Low-pass cutoff [rad/s].
    pub f_lp: f64,
    /// Loop delay [s], a multiple of `dt`.
    pub delay: f64,
    /// Demodulation phase offset [rad].
    pub reference_phase: f64,
    /// Time at which the loop closes [s].
    pub t_on: f64,
}

impl FeedbackConfig {
    /// Loop around `base` with gain `gain`, cutoff `Ω_R/10`, no delay.
    pub fn new(base: SmeConfig, gain: f64) -> Result<Self, FeedbackError> {
        let f_lp = base.omega_r.abs() / 10.0;
        let cfg = Self { base, gain, f_lp, delay: 0.0, reference_phase: 0.0, t_on: 0.0 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Standard operating point in units of the Rabi frequency: strength
    /// `k = Ω_R/20`, `η = 0.5`, `Γ_env = Γ_m/4` (so `η_t = 0.4`),
    /// `dt = 0.05/Ω_R`, ground-state start, and a duration of eight
    /// open-loop decay times.
    pub fn standard(omega_r: f64, gain: f64, seed: u64) -> Result<Self, FeedbackError> {
        ParamError::check_positive("omega_r", omega_r)?;
        let k = omega_r / 20.0;
        let gamma_env = 0.25 * 2.0 * k;
        let p = MeasurementParams::new(k, 0.5, 0.05 / omega_r, gamma_env)?;
        let decay = 2.0 / (2.0 * k + gamma_env);
        let base = SmeConfig::new(p, omega_r, 8.0 * decay, QubitState::ground(), seed)?;
        Self::new(base, gain)
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        self.base.validate()?;
        ParamError::check_nonneg("F", self.gain)?;
        ParamError::check_positive("f_lp", self.f_lp)?;
        ParamError::check_nonneg("delay", self.delay)?;
        ParamError::check_nonneg("t_on", self.t_on)?;
        ParamError::check_finite("reference_phase", self.reference_phase)?;
        let r = self.delay / self.base.dt();
        if (r - r.round()).abs() > 1e-6 {
            return Err(FeedbackError::DelayOffGrid { delay: self.delay, dt: self.base.dt() });
        }
        Ok(())
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_delay(mut self, delay: f64) -> Result<Self, FeedbackError> {
        self.delay = delay;
        self.validate()?;
        Ok(self)
    }

    /// Replace the environmental dephasing `Γ_env`.
    pub fn with_gamma_env(mut self, gamma_env: f64) -> Result<Self, FeedbackError> {
        self.base.params = MeasurementParams::new(self.base.params.k, self.base.params.eta, self.base.dt(), gamma_env)?;
        self.validate()?;
        Ok(self)
    }

    pub fn delay_steps(&self) -> usize {
        (self.delay / self.base.dt()).round() as usize
    }

    /// Measurement-induced dephasing rate `Γ_m = 2k`.
    pub fn gamma_m(&self) -> f64 {
        2.0 * self.base.params.k
    }

    /// 1/e time of the open-loop ensemble Rabi envelope, `2/(2k + Γ_env)`.
    pub fn decay_time(&self) -> f64 {
        2.0 / (2.0 * self.base.params.k + self.base.params.gamma)
    }

    /// Steady-state fit window: from five decay times to the end.
    pub fn default_window(&self) -> (f64, f64) {
        (5.0 * self.decay_time(), self.base.n_steps() as f64 * self.base.dt())
    }
}

/// One filter update for record sample `v` at time `t`.
pub fn error_signal(v: f64, t: f64, cfg: &FeedbackConfig, filter: LowPassFilter) -> (f64, LowPassFilter) {
    let mut f = filter;
    let e = f.push(v * (cfg.base.omega_r * t + cfg.reference_phase).sin());
    (e, f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackResult {
    pub trajectory: Trajectory,
    /// Error signal after each bin.
    pub error: Vec<f64>,
    /// Rabi frequency applied in each bin.
    pub drive: Vec<f64>,
}

/// The causal loop. `observe(i, t, state, v, e, Ω)` sees every bin.
fn run_loop<F>(cfg: &FeedbackConfig, mut observe: F) -> Result<(), FeedbackError>
where
    F: FnMut(usize, f64, &QubitState, f64, f64, f64),
{
    cfg.validate()?;
    let base = &cfg.base;
    let u = BinUpdate::new(base);
    let dt = base.dt();
    let mut rng = stream(base.seed);
    let mut filter = LowPassFilter::new(cfg.f_lp, dt);
    let d = cfg.delay_steps();
    let mut ring = vec![0.0; d + 1];
    let mut s = base.initial;
    for i in 0..base.n_steps() {
        let t0 = i as f64 * dt;
        let e_late = ring[i % (d + 1)];
        let omega = if t0 >= cfg.t_on { base.omega_r * (1.0 + cfg.gain * e_late) } else { base.omega_r };
        let xi = normal(&mut rng);
        let (next, v) = u.advance(&s, omega, |z| u.sample(z, xi)).map_err(|e| FeedbackError::Sme(at_step(e, i)))?;
        s = next;
        let (e, f) = error_signal(v, t0 + 0.5 * dt, cfg, filter);
        filter = f;
        ring[i % (d + 1)] = e;
        observe(i, base.t_end(i), &s, v, e, omega);
    }
    Ok(())
}

pub fn run_feedback(cfg: &FeedbackConfig) -> Result<FeedbackResult, FeedbackError> {
    let base = &cfg.base;
    let n = base.n_steps();
    let mut states = Vec::with_capacity(n + 1);
    let mut samples = Vec::with_capacity(n);
    let mut error = Vec::with_capacity(n);
    let mut drive = Vec::with_capacity(n);
    states.push((0.0, base.initial));
    run_loop(cfg, |_, t, s, v, e, om| {
        states.push((t, *s));
        samples.push((t, v));
        error.push(e);
        drive.push(om);
    })?;
    let record = MeasurementRecord { samples, dt: base.dt(), quadrature: base.quadrature, seed: base.seed };
    Ok(FeedbackResult { trajectory: Trajectory { states, record, config: base.clone() }, error, drive })
}

/// Ensemble means of `z` and `x` under feedback, with per-batch means
/// kept for error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEnsemble {
    /// Grid times from 0.
    pub t: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub mean_x: Vec<f64>,
    /// `batch_z[b][i]`: mean z of batch `b` at grid point `i`.
    pub batch_z: Vec<Vec<f64>>,
    pub n: usize,
    pub omega_r: f64,
}

/// Ten-point gain grid for the standard operating point, dense where the
/// optimum sits.
pub const DEFAULT_GAINS: [f64; 10] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0, 2.0, 4.0];

/// Number of batches used for the spread of `D`.
pub const BATCHES: usize = 10;

/// `n` runs with seeds `seed_base + index`, reduced in index order.
pub fn run_feedback_ensemble(cfg: &FeedbackConfig, n: usize, seed_base: u64) -> Result<FeedbackEnsemble, FeedbackError> {
    cfg.validate()?;
    let len = cfg.base.n_steps() + 1;
    let nb = BATCHES.min(n.max(1));
    let z0 = cfg.base.initial.bloch();
    let per_run: Vec<Result<(Vec<f64>, Vec<f64>), FeedbackError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut run = cfg.clone();
            run.base.seed = seed_base.wrapping_add(i as u64);
            let mut z = Vec::with_capacity(len);
            let mut x = Vec::with_capacity(len);
            z.push(z0.z);
            x.push(z0.x);
            run_loop(&run, |_, _, s, _, _, _| {
                let b = s.bloch();
                z.push(b.z);
                x.push(b.x);
            })?;
            Ok((z, x))
        })
        .collect();
    let mut sum_z = vec![0.0; len];
    let mut sum_x = vec![0.0; len];
    let mut batch_z = vec![vec![0.0; len]; nb];
    let mut batch_n = vec![0usize; nb];
    for (i, r) in per_run.into_iter().enumerate() {
        let (z, x) = r?;
        let b = i * nb / n.max(1);
        for j in 0..len {
            sum_z[j] += z[j];
            sum_x[j] += x[j];
            batch_z[b][j] += z[j];
        }
        batch_n[b] += 1;
    }
    let nf = n as f64;
    for (bz, &bn) in batch_z.iter_mut().zip(&batch_n) {
        bz.iter_mut().for_each(|v| *v /= bn.max(1) as f64);
    }
    Ok(FeedbackEnsemble {
        t: (0..len).map(|i| i as f64 * cfg.base.dt()).collect(),
        mean_z: sum_z.iter().map(|v| v / nf).collect(),
        mean_x: sum_x.iter().map(|v| v / nf).collect(),
        batch_z,
        n,
        omega_r: cfg.base.omega_r,
    })
}

/// Least-squares fit `z̄(t) ≈ c + a·cos(Ω_R t) + b·sin(Ω_R t)` over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyFit {
    /// `D = min(1, √(a² + b²))`.
    pub d: f64,
    pub phase: f64,
    pub offset: f64,
    pub residual_rms: f64,
    /// Spread of `D` over batches divided by `√(batches)`.
    pub d_stderr: f64,
}

impl EfficiencyFit {
    /// The fitted sinusoid explains the data better than noise does.
    pub fn is_clean(&self) -> bool {
        self.residual_rms <= self.d
    }
}

fn fit_sinusoid(t: &[f64], y: &[f64], omega: f64, window: (f64, f64)) -> Result<(f64, f64, f64, f64), FeedbackError> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    let mut rows = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < window.0 || ti > window.1 {
            continue;
        }
        let (s, c) = (omega * ti).sin_cos();
        let r = [1.0, c, s];
        for a in 0..3 {
            for b in 0..3 {
                ata[a][b] += r[a] * r[b];
            }
            aty[a] += r[a] * yi;
        }
        rows.push((r, yi));
    }
    if rows.len() < 8 {
        return Err(FeedbackError::WindowTooShort(window.0, window.1));
    }
    let m = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
    let rhs = nalgebra::Vector3::from_column_slice(&aty);
    let sol = m.cholesky().ok_or(FeedbackError::WindowTooShort(window.0, window.1))?.solve(&rhs);
    let res = rows
        .iter()
        .map(|(r, y)| (y - (sol[0] * r[0] + sol[1] * r[1] + sol[2] * r[2])).powi(2))
        .sum::<f64>()
        / rows.len() as f64;
    Ok((sol[1].hypot(sol[2]), sol[2].atan2(sol[1]), sol[0], res.sqrt()))
}

/// Feedback efficiency `D` of an ensemble over `window` (seconds).
pub fn feedback_efficiency(ens: &FeedbackEnsemble, window: (f64, f64)) -> Result<EfficiencyFit, FeedbackError> {
    let (amp, phase, offset, rms) = fit_sinusoid(&ens.t, &ens.mean_z, ens.omega_r, window)?;
    let ds: Vec<f64> = ens
        .batch_z
        .iter()
        .map(|bz| fit_sinusoid(&ens.t, bz, ens.omega_r, window).map(|f| f.0))
        .collect::<Result<_, _>>()?;
    let d_stderr = if ds.len() > 1 {
        let m = ds.iter().sum::<f64>() / ds.len() as f64;
        let var = ds.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (ds.len() - 1) as f64;
        (var / ds.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(EfficiencyFit { d: amp.min(1.0), phase, offset, residual_rms: rms, d_stderr })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub gain: f64,
    pub d: f64,
    pub d_stderr: f64,
}

/// `D(F)` over `gains`, each point from `n` runs seeded identically.
pub fn efficiency_sweep(
    template: &FeedbackConfig,
    gains: &[f64],
    n: usize,
    seed_base: u64,
) -> Result<Vec<SweepPoint>, FeedbackError> {
    if gains.len() < 5 {
        return Err(FeedbackError::TooFewGains { need: 5, got: gains.len() });
    }
    let window = template.default_window();
    gains
        .iter()
        .map(|&g| {
            let ens = run_feedback_ensemble(&template.clone().with_gain(g), n, seed_base)?;
            let fit = feedback_efficiency(&ens, window)?;
            Ok(SweepPoint { gain: g, d: fit.d, d_stderr: fit.d_stderr })
        })
        .collect()
}

/// `η_t = η / (1 + Γ_env/Γ_m)`.
pub fn total_efficiency(eta: f64, gamma_env: f64, gamma_m: f64) -> Result<f64, FeedbackError> {
    ParamError::check_efficiency("eta", eta)?;
    ParamError::check_nonneg("gamma_env", gamma_env)?;
    ParamError::check_nonneg("gamma_m", gamma_m)?;
    if gamma_m == 0.0 {
        return Err(FeedbackError::NoMeasurementDephasing);
    }
    Ok(eta / (1.0 + gamma_env / gamma_m))
}
