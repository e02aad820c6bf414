//! Driven, damped Duffing oscillator as a model of the parametric amplifier:
//!
//! `δ̈ + 2Γδ̇ + ω0²(δ − δ³/6) = Re(F_c e^{iω_d t})`
//!
//! Steady states are found by fixed-step RK4 integration until the ω_d
//! Fourier component of `δ(t)` stops moving. Writing
//! `δ ≈ Re(a e^{iω_d t})`, the reported phase is `arg(a/F_c)`, so a linear
//! resonator driven on resonance sits at `−π/2`. The reflected field of a
//! lossless one-port, `b = F_c − 4iΓω_d·a`, has `|b| = |F_c|` and is what
//! the small-signal gain is measured on.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ParamError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParampError {
    #[error("no steady state after {periods} drive periods (last envelope {last_amplitude:.6e} ∠ {last_phase:.6})")]
    NoConvergence { periods: usize, last_amplitude: f64, last_phase: f64 },
    #[error("oscillator escaped the potential well (|δ| > {0})")]
    Escaped(f64),
    #[error("bias is bistable: solutions from rest and from the upper branch differ ({low:.6e} vs {high:.6e})")]
    BistableBias { low: f64, high: f64 },
    #[error("signal amplitude {signal:e} exceeds 1% of the pump {pump:e}")]
    SignalTooLarge { signal: f64, pump: f64 },
    #[error("drive sweep must be ascending")]
    UnorderedSweep,
    #[error("transfer function needs omega_d below omega0 (softening side)")]
    AboveResonance,
    #[error("phase diagram grid must be at least 20x20, got {0}x{1}")]
    GridTooCoarse(usize, usize),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DuffingParams {
    /// Linear resonance [rad/s].
    pub omega0: f64,
    /// Amplitude damping Γ [1/s].
    pub gamma: f64,
    /// Drive frequency [rad/s].
    pub omega_d: f64,
    /// Drive amplitude [rad²/s²].
    pub drive: f64,
}

impl DuffingParams {
    pub fn new(omega0: f64, gamma: f64, omega_d: f64, drive: f64) -> Result<Self, ParamError> {
        let p = Self { omega0, gamma, omega_d, drive };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ParamError::check_positive("omega0", self.omega0)?;
        ParamError::check_positive("Gamma", self.gamma)?;
        ParamError::check_positive("omega_d", self.omega_d)?;
        ParamError::check_nonneg("F_d", self.drive)?;
        if self.gamma > self.omega0 / 10.0 {
            return Err(ParamError::new("Gamma", self.gamma, "Gamma <= omega0/10"));
        }
        Ok(())
    }

    pub fn with_drive(mut self, drive: f64) -> Self {
        self.drive = drive;
        self
    }

    pub fn with_omega_d(mut self, omega_d: f64) -> Self {
        self.omega_d = omega_d;
        self
    }

    /// `(ω0² − ω_d², 2Γω_d, ω0²/8)`: coefficients of the rotating-wave
    /// amplitude equation `(c + iD)a − b|a|²a = F`.
    fn rwa(&self) -> (f64, f64, f64) {
        (
            self.omega0 * self.omega0 - self.omega_d * self.omega_d,
            2.0 * self.gamma * self.omega_d,
            self.omega0 * self.omega0 / 8.0,
        )
    }

    /// Real amplitudes `|a|` allowed by the rotating-wave amplitude
    /// equation, ascending. One value when monostable, three when bistable.
    pub fn rwa_amplitudes(&self) -> Vec<f64> {
        let (c, d, b) = self.rwa();
        let f2 = self.drive * self.drive;
        let g = |u: f64| u * ((c - b * u).powi(2) + d * d) - f2;
        let mut edges = vec![0.0];
        let disc = c * c - 3.0 * d * d;
        if c > 0.0 && disc > 0.0 {
            edges.push((2.0 * c - disc.sqrt()) / (3.0 * b));
            edges.push((2.0 * c + disc.sqrt()) / (3.0 * b));
        }
        let mut hi = edges.last().copied().unwrap_or(0.0).max(1e-300);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        edges.push(hi);
        let mut roots = Vec::new();
        for w in edges.windows(2) {
            let (mut lo, mut up) = (w[0], w[1]);
            if g(lo).signum() == g(up).signum() {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                if g(mid).signum() == g(lo).signum() {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            roots.push((0.5 * (lo + up)).sqrt());
        }
        roots
    }

    /// Drive on the steepest point of the response at this detuning, where
    /// `d|a|/dF` peaks in the rotating-wave picture.
    pub fn steepest_drive(&self) -> f64 {
        let (c, d, b) = self.rwa();
        if c <= 0.0 {
            return 0.0;
        }
        let u = 2.0 * c / (3.0 * b);
        (u * ((c - b * u).powi(2) + d * d)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Branch {
    Low,
    High,
    Monostable,
    /// Bistable parameters with an amplitude near the unstable middle root.
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub amplitude: f64,
    /// `arg(a/F_c)` in `(−π, π]`.
    pub phase: f64,
    pub branch: Branch,
    /// Complex envelope `a`.
    pub envelope: Complex64,
    /// Reflected field `b = F_c − 4iΓω_d·a`.
    pub reflected: Complex64,
    /// `(δ, δ̇)` at the end of the last period (drive phase 0).
    pub end: (f64, f64),
    pub periods: usize,
}

/// Integration and stopping controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative envelope tolerance.
    pub tol: f64,
    /// Give up after `horizon/Γ` seconds.
    pub horizon: f64,
    /// RK4 steps per drive period (raised if needed for `dt ≤ 2π/(40ω0)`).
    pub steps_per_period: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-6, horizon: 4000.0, steps_per_period: 64 }
    }
}

fn wrap(phase: f64) -> f64 {
    let mut p = phase % (2.0 * PI);
    if p <= -PI {
        p += 2.0 * PI;
    } else if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Steady state under complex drive `f_c` from `init = (δ, δ̇)` at phase 0.
pub fn solve_with_drive(
    p: &DuffingParams,
    f_c: Complex64,
    init: (f64, f64),
    opts: &SolveOptions,
) -> Result<SteadyState, ParampError> {
    p.validate()?;
    let n = opts.steps_per_period.max((40.0 * p.omega0 / p.omega_d).ceil() as usize);
    let period = 2.0 * PI / p.omega_d;
    let h = period / n as f64;
    let (g2, w02) = (2.0 * p.gamma, p.omega0 * p.omega0);
    let (famp, fph) = (f_c.norm(), f_c.arg());
    let accel = |t: f64, x: f64, v: f64| famp * (p.omega_d * t + fph).cos() - g2 * v - w02 * (x - x * x * x / 6.0);
    // Fourier kernel e^{−iω t_j}, shared by every period.
    let kernel: Vec<Complex64> = (0..n).map(|j| Complex64::from_polar(2.0 / n as f64, -p.omega_d * j as f64 * h)).collect();
    let max_periods = ((opts.horizon / p.gamma) / period).ceil() as usize + 2;
    let (mut x, mut v) = init;
    // Block length of one damping time, in periods.
    let block = ((1.0 / (p.gamma * period)).ceil() as usize).max(8);
    let mut prev: Option<Complex64> = None;
    let mut dists: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(2 * block + 1);
    let mut a = Complex64::new(0.0, 0.0);
    for k in 1..=max_periods {
        a = Complex64::new(0.0, 0.0);
        for (j, kj) in kernel.iter().enumerate() {
            a += kj * x;
            let t = j as f64 * h;
            let k1x = v;
            let k1v = accel(t, x, v);
            let k2x = v + 0.5 * h * k1v;
            let k2v = accel(t + 0.5 * h, x + 0.5 * h * k1x, k2x);
            let k3x = v + 0.5 * h * k2v;
            let k3v = accel(t + 0.5 * h, x + 0.5 * h * k2x, k3x);
            let k4x = v + h * k3v;
            let k4v = accel(t + h, x + h * k3x, k4x);
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        if !x.is_finite() || x.abs() > 10.0 {
            return Err(ParampError::Escaped(10.0));
        }
        if let Some(pa) = prev {
            let d = (a - pa).norm();
            dists.push_back(d);
            if dists.len() > 2 * block {
                dists.pop_front();
            }
            let limit = opts.tol * a.norm().max(1e-300);
            if d <= 1e-4 * limit {
                return Ok(finish(p, f_c, a, (x, v), k));
            }
            if dists.len() == 2 * block && d <= limit {
                // Contraction per period from block maxima, which is robust
                // to the slow spiral of the envelope around its fixed point.
                let older = dists.iter().take(block).fold(0.0f64, |m, &x| m.max(x));
                let recent = dists.iter().skip(block).fold(0.0f64, |m, &x| m.max(x));
                let lam = (recent / older).powf(1.0 / block as f64);
                if lam < 1.0 && recent * lam / (1.0 - lam) <= limit {
                    return Ok(finish(p, f_c, a, (x, v), k));
                }
            }
        }
        prev = Some(a);
    }
    Err(ParampError::NoConvergence { periods: max_periods, last_amplitude: a.norm(), last_phase: wrap((a / f_c).arg()) })
}

fn finish(p: &DuffingParams, f_c: Complex64, a: Complex64, end: (f64, f64), periods: usize) -> SteadyState {
    let reflected = f_c - Complex64::new(0.0, 4.0 * p.gamma * p.omega_d) * a;
    let amp = a.norm();
    let roots = p.with_drive(f_c.norm()).rwa_amplitudes();
    let branch = if roots.len() < 3 {
        Branch::Monostable
    } else {
        let (lo, mid, hi) = (roots[0], roots[1], roots[2]);
        if amp < 0.5 * (lo + mid) {
            Branch::Low
        } else if amp > 0.5 * (mid + hi) {
            Branch::High
        } else {
            Branch::Unclassified
        }
    };
    SteadyState { amplitude: amp, phase: wrap((a / f_c).arg()), branch, envelope: a, reflected, end, periods }
}

/// Steady state under the real drive `F_d cos(ω_d t)`.
pub fn duffing_steady_state(p: &DuffingParams, init: (f64, f64)) -> Result<SteadyState, ParampError> {
    duffing_steady_state_opts(p, init, &SolveOptions::default())
}

pub fn duffing_steady_state_opts(p: &DuffingParams, init: (f64, f64), opts: &SolveOptions) -> Result<SteadyState, ParampError> {
    solve_with_drive(p, Complex64::new(p.drive, 0.0), init, opts)
}

/// Adiabatic sweep of ascending drives, each solve warm-started from the
/// previous end state.
pub fn transfer_function(p: &DuffingParams, drives: &[f64]) -> Result<Vec<(f64, SteadyState)>, ParampError> {
    if p.omega_d >= p.omega0 {
        return Err(ParampError::AboveResonance);
    }
    if drives.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ParampError::UnorderedSweep);
    }
    sweep(p, drives, (0.0, 0.0), &SolveOptions::default())
}

fn sweep(p: &DuffingParams, drives: &[f64], init: (f64, f64), opts: &SolveOptions) -> Result<Vec<(f64, SteadyState)>, ParampError> {
    let mut state = init;
    let mut out = Vec::with_capacity(drives.len());
    for &f in drives {
        let s = duffing_steady_state_opts(&p.with_drive(f), state, opts)?;
        state = s.end;
        out.push((f, s));
    }
    Ok(out)
}

/// Bistable drive window at one drive frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistableWindow {
    pub omega_d: f64,
    /// Where the down sweep falls to the lower branch.
    pub f_low: f64,
    /// Where the up sweep jumps to the upper branch.
    pub f_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub windows: Vec<BistableWindow>,
    /// `(ω_c, P_c)` where the window closes, with `P = F_d²`. `None` if
    /// the bistable region does not close inside the grid or is empty.
    pub cusp: Option<(f64, f64)>,
    /// Drive frequencies with no bistability.
    pub monostable: Vec<f64>,
}

/// Map the bistable region over a grid of drive frequencies and drives.
pub fn bistability_region(
    omega0: f64,
    gamma: f64,
    omega_d: &[f64],
    drives: &[f64],
) -> Result<PhaseDiagram, ParampError> {
    if omega_d.len() < 20 || drives.len() < 20 {
        return Err(ParampError::GridTooCoarse(omega_d.len(), drives.len()));
    }
    if drives.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ParampError::UnorderedSweep);
    }
    let opts = SolveOptions::default();
    let rows: Vec<Result<Option<BistableWindow>, ParampError>> = omega_d
        .par_iter()
        .map(|&wd| {
            let p = DuffingParams::new(omega0, gamma, wd, drives[0])?;
            bistable_window(&p, drives, &opts)
        })
        .collect();
    let mut windows = Vec::new();
    let mut monostable = Vec::new();
    let mut flags = Vec::new();
    for (r, &wd) in rows.into_iter().zip(omega_d) {
        match r? {
            Some(w) => {
                windows.push(w);
                flags.push(true);
            }
            None => {
                monostable.push(wd);
                flags.push(false);
            }
        }
    }
    // The cusp sits between the bistable frequency nearest resonance and its
    // monostable neighbour on the resonance side.
    let mut order: Vec<usize> = (0..omega_d.len()).collect();
    order.sort_by(|&a, &b| omega_d[a].total_cmp(&omega_d[b]));
    let mut cusp = None;
    for w in order.windows(2) {
        let (i, j) = (w[0], w[1]);
        if flags[i] && !flags[j] && omega_d[j] < omega0 {
            let win = windows.iter().find(|x| x.omega_d == omega_d[i]).copied().expect("window");
            let wc = 0.5 * (omega_d[i] + omega_d[j]);
            let fc = 0.5 * (win.f_low + win.f_high);
            cusp = Some((wc, fc * fc));
        }
    }
    Ok(PhaseDiagram { windows, cusp, monostable })
}

fn bistable_window(p: &DuffingParams, drives: &[f64], opts: &SolveOptions) -> Result<Option<BistableWindow>, ParampError> {
    let up = sweep(p, drives, (0.0, 0.0), opts)?;
    let top = up.last().expect("nonempty").1.end;
    let rev: Vec<f64> = drives.iter().rev().copied().collect();
    let mut down = Vec::with_capacity(rev.len());
    let mut state = top;
    for &f in &rev {
        let s = duffing_steady_state_opts(&p.with_drive(f), state, opts)?;
        state = s.end;
        down.push((f, s));
    }
    down.reverse();
    let differs = |a: &SteadyState, b: &SteadyState| (a.amplitude - b.amplitude).abs() > 5.0 * opts.tol * a.amplitude.max(b.amplitude);
    let split: Vec<bool> = up.iter().zip(&down).map(|((_, u), (_, d))| differs(u, d)).collect();
    let (Some(first), Some(last)) = (split.iter().position(|&b| b), split.iter().rposition(|&b| b)) else {
        return Ok(None);
    };
    // Refine the up-jump between `last` and `last + 1` and the down-jump
    // between `first − 1` and `first`.
    let f_high = match up.get(last + 1) {
        Some((f_jump, jumped)) => bisect_jump(p, drives[last], *f_jump, &up[last].1, jumped.amplitude, opts),
        None => drives[last],
    };
    let f_low = match first.checked_sub(1) {
        Some(j) => bisect_jump(p, drives[first], drives[j], &down[first].1, down[j].1.amplitude, opts),
        None => drives[first],
    };
    Ok(Some(BistableWindow { omega_d: p.omega_d, f_low, f_high }))
}

const BISECTIONS: usize = 8;

/// Locate the drive between `stay` (branch of `start` survives) and `jump`
/// (solution has moved to the other branch, amplitude `jumped`).
fn bisect_jump(p: &DuffingParams, stay: f64, jump: f64, start: &SteadyState, jumped: f64, opts: &SolveOptions) -> f64 {
    let (mut s_f, mut j_f) = (stay, jump);
    let half_gap = 0.5 * (jumped - start.amplitude).abs();
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (s_f + j_f);
        match duffing_steady_state_opts(&p.with_drive(mid), start.end, opts) {
            Ok(s) if (s.amplitude - start.amplitude).abs() < half_gap => s_f = mid,
            Ok(_) => j_f = mid,
            // Critical slowing: the drive sits on the fold.
            Err(_) => return mid,
        }
    }
    0.5 * (s_f + j_f)
}

/// Phase-sensitive response of the reflected field to a weak signal at the
/// pump frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainResult {
    pub gain_db: f64,
    /// Angle of the amplified signal axis relative to the pump [rad].
    pub amplified_axis: f64,
    /// Largest and smallest gains over signal phase [dB].
    pub max_db: f64,
    pub min_db: f64,
}

fn reflected_change(p: &DuffingParams, init: (f64, f64), s: f64, theta: f64, opts: &SolveOptions) -> Result<Complex64, ParampError> {
    let f = Complex64::new(p.drive, 0.0);
    let sig = Complex64::from_polar(s, theta);
    let plus = solve_with_drive(p, f + sig, init, opts)?;
    let minus = solve_with_drive(p, f - sig, init, opts)?;
    Ok((plus.reflected - minus.reflected) / 2.0)
}

/// Small-signal gain `20·log10(|Δb|/s)` for a signal of amplitude `s` at
/// `signal_phase` from the amplified axis. Far from the bifurcation
/// `|Δb| = s` at every phase (0 dB); at a steep bias the amplified axis
/// gains and the orthogonal one loses.
pub fn small_signal_gain(bias: &DuffingParams, signal_amp: f64, signal_phase: f64) -> Result<GainResult, ParampError> {
    ParamError::check_positive("signal_amp", signal_amp)?;
    ParamError::check_finite("signal_phase", signal_phase)?;
    if signal_amp > 0.01 * bias.drive * (1.0 + 1e-12) {
        return Err(ParampError::SignalTooLarge { signal: signal_amp, pump: bias.drive });
    }
    let opts = SolveOptions { tol: 1e-10, ..SolveOptions::default() };
    let rest = duffing_steady_state_opts(bias, (0.0, 0.0), &opts)?;
    let roots = bias.rwa_amplitudes();
    if roots.len() == 3 {
        let a_hi = roots[2];
        let phase = rest.envelope.arg();
        let env = Complex64::from_polar(a_hi, phase);
        let init = (env.re, (Complex64::new(0.0, bias.omega_d) * env).re);
        let high = duffing_steady_state_opts(bias, init, &opts)?;
        if (high.amplitude - rest.amplitude).abs() > 1e-3 * rest.amplitude.max(high.amplitude) {
            return Err(ParampError::BistableBias { low: rest.amplitude, high: high.amplitude });
        }
    }
    let s = signal_amp;
    let d0 = reflected_change(bias, rest.end, s, 0.0, &opts)?;
    let d90 = reflected_change(bias, rest.end, s, PI / 2.0, &opts)?;
    let i = Complex64::new(0.0, 1.0);
    let mu = (d0 - i * d90) / (2.0 * s);
    let nu = (d0 + i * d90) / (2.0 * s);
    let axis = wrap(0.5 * (nu.arg() - mu.arg()));
    let db = |r: f64| 20.0 * r.log10();
    let d = reflected_change(bias, rest.end, s, axis + signal_phase, &opts)?;
    Ok(GainResult {
        gain_db: db(d.norm() / s),
        amplified_axis: axis,
        max_db: db(mu.norm() + nu.norm()),
        min_db: db((mu.norm() - nu.norm()).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base(delta_over_gamma: f64, drive: f64) -> DuffingParams {
        let g = 0.005;
        DuffingParams::new(1.0, g, 1.0 - delta_over_gamma * g, drive).unwrap()
    }

    #[test]
    fn linear_resonance() {
        let p = DuffingParams::new(1.0, 0.01, 1.0, 1e-6).unwrap();
        let s = duffing_steady_state(&p, (0.0, 0.0)).unwrap();
        let lin = 1e-6 / (2.0 * 0.01);
        assert!((s.amplitude / lin - 1.0).abs() < 1e-3, "{}", s.amplitude / lin);
        assert_abs_diff_eq!(s.phase, -PI / 2.0, epsilon = 1e-3);
        assert_eq!(s.branch, Branch::Monostable);
    }

    #[test]
    fn off_resonance_lorentzian() {
        let p = DuffingParams::new(1.0, 0.002, 0.8, 1e-5).unwrap();
        let s = duffing_steady_state(&p, (0.0, 0.0)).unwrap();
        let lin = 1e-5 / (1.0f64 - 0.64).abs();
        assert!((s.amplitude / lin - 1.0).abs() < 0.05);
    }

    #[test]
    fn reflection_is_lossless() {
        let p = base(2.0, 4e-3);
        let s = duffing_steady_state(&p, (0.0, 0.0)).unwrap();
        assert!((s.reflected.norm() / p.drive - 1.0).abs() < 1e-3);
    }

    #[test]
    fn softening_pulls_resonance_down() {
        // Strong drive: response peaks below ω0.
        let amp = |wd: f64| duffing_steady_state(&DuffingParams::new(1.0, 0.01, wd, 2e-3).unwrap(), (0.0, 0.0)).unwrap().amplitude;
        assert!(amp(0.995) > amp(1.005));
    }

    #[test]
    fn rwa_roots() {
        // Below critical detuning: one root whatever the drive.
        for f in [1e-3, 5e-3, 1e-2] {
            assert_eq!(base(1.5, f).rwa_amplitudes().len(), 1);
        }
        assert_eq!(base(2.0 * 3f64.sqrt(), 6.5e-3).rwa_amplitudes().len(), 3);
        let p = base(2.0, 3e-3);
        let (c, d, b) = p.rwa();
        for a in p.rwa_amplitudes() {
            let u = a * a;
            assert!((u * ((c - b * u).powi(2) + d * d) / (p.drive * p.drive) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn steepest_drive_is_monostable_and_steep() {
        let p = base(1.6, 0.0);
        let f = p.steepest_drive();
        assert!(f > 0.0);
        assert_eq!(p.with_drive(f).rwa_amplitudes().len(), 1);
    }

    #[test]
    fn transfer_checks_inputs() {
        let p = base(1.0, 1e-4);
        assert!(matches!(transfer_function(&p, &[2e-3, 1e-3]), Err(ParampError::UnorderedSweep)));
        let above = DuffingParams::new(1.0, 0.005, 1.01, 1e-4).unwrap();
        assert!(matches!(transfer_function(&above, &[1e-3]), Err(ParampError::AboveResonance)));
    }

    #[test]
    fn gain_rejects_large_signal() {
        let p = base(1.0, 1e-3);
        assert!(matches!(small_signal_gain(&p, 2e-5, 0.0), Err(ParampError::SignalTooLarge { .. })));
    }

    #[test]
    fn gain_is_flat_in_linear_regime() {
        let p = base(1.0, 1e-6);
        for ph in [0.0, 0.7, PI / 2.0] {
            let g = small_signal_gain(&p, 1e-8, ph).unwrap();
            assert!(g.gain_db.abs() < 0.05, "{ph}: {}", g.gain_db);
        }
    }

    #[test]
    fn params_validation() {
        assert!(DuffingParams::new(1.0, 0.2, 1.0, 0.0).is_err());
        assert!(DuffingParams::new(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(DuffingParams::new(1.0, 0.01, 1.0, -1.0).is_err());
    }
}
