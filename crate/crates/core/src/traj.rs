//! Analytics on measurement records and conditioned trajectories.
//!
//! Alongside the observer's trajectory, [`simulate_resolved`] tracks a
//! "true" state that also conditions on the part of the signal the detector
//! loses. With `η < 1` the observer's state is the expectation of the true
//! state given the observed record, and tomography experiments draw their
//! projective outcomes from the true state.

use rand::Rng;
use rayon::prelude::*;

use crate::measure::{self, Quadrature};
use crate::qstate::{c, projector_excited, projector_ground, trace_product, BlochVector, Mat2, QubitState, StateError};
use crate::rng::{normal, side_stream, stream};
use crate::sme::{at_step, grid_index, rotate_y, BinUpdate, MeasurementRecord, SmeConfig, SmeError, Trajectory};

/// Default per-component half width of a tomography target window.
pub const DEFAULT_EPS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajError {
    #[error("record grid ({n_record} bins of {dt_record:e} s, {q_record}) does not match config ({n_cfg} bins of {dt_cfg:e} s, {q_cfg})")]
    GridMismatch {
        n_record: usize,
        dt_record: f64,
        q_record: Quadrature,
        n_cfg: usize,
        dt_cfg: f64,
        q_cfg: Quadrature,
    },
    #[error("time {0:e} s is not on the simulation grid")]
    OffGrid(f64),
    #[error("no run matched the target window at t = {t:e} s out of {n_runs}")]
    InsufficientStatistics { t: f64, n_runs: usize },
    #[error("empty sub-ensemble")]
    EmptySubEnsemble,
    #[error("histogram needs at least 8 bins per axis, got {0}")]
    TooFewBins(usize),
    #[error("POVM is not complete: max |ΣΩ†Ω − I| = {0:e}")]
    IncompletePovm(f64),
    #[error("normalization underflow ({0:e})")]
    Degenerate(f64),
    #[error("window half widths must be positive")]
    BadWindow,
    #[error(transparent)]
    Sme(#[from] SmeError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Param(#[from] crate::ParamError),
}

fn check_grid(record: &MeasurementRecord, cfg: &SmeConfig) -> Result<(), TrajError> {
    let ok = record.len() == cfg.n_steps()
        && (record.dt - cfg.dt()).abs() <= 1e-12 * cfg.dt()
        && record.quadrature == cfg.quadrature
        && record.is_well_formed();
    if ok {
        Ok(())
    } else {
        Err(TrajError::GridMismatch {
            n_record: record.len(),
            dt_record: record.dt,
            q_record: record.quadrature,
            n_cfg: cfg.n_steps(),
            dt_cfg: cfg.dt(),
            q_cfg: cfg.quadrature,
        })
    }
}

/// Rebuild the conditioned trajectory from a record, using the same bin
/// update as the simulator.
pub fn reconstruct(record: &MeasurementRecord, initial: QubitState, cfg: &SmeConfig) -> Result<Trajectory, TrajError> {
    cfg.validate()?;
    check_grid(record, cfg)?;
    let u = BinUpdate::new(cfg);
    let mut s = initial;
    let mut states = Vec::with_capacity(record.len() + 1);
    states.push((0.0, s));
    for (i, &(t, v)) in record.samples.iter().enumerate() {
        s = u.advance(&s, cfg.omega_r, |_| v).map_err(|e| at_step(e, i))?.0;
        states.push((t, s));
    }
    Ok(Trajectory { states, record: record.clone(), config: cfg.clone().with_initial(initial) })
}

/// Observer trajectory together with the fully resolved state.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub observed: Trajectory,
    /// True state on the same grid, `truth[0]` at `t = 0`.
    pub truth: Vec<QubitState>,
}

/// One bin of the resolved model: the read channel (strength `kη`)
/// produces `V`, an unread channel (strength `k(1−η)`) conditions the
/// true state too, and environmental dephasing damps it.
struct ResolvedStep {
    cfg_half: f64,
    read: f64,
    unread: f64,
    env: f64,
    quadrature: Quadrature,
    phi_sign: f64,
}

impl ResolvedStep {
    fn new(cfg: &SmeConfig) -> Self {
        let p = &cfg.params;
        Self {
            cfg_half: 0.5 * cfg.omega_r * p.dt,
            read: 4.0 * p.k * p.eta * p.dt,
            unread: 4.0 * p.k * (1.0 - p.eta) * p.dt,
            env: p.environment_damping(),
            quadrature: cfg.quadrature,
            phi_sign: match cfg.phi_sign {
                measure::PhiSign::Standard => 1.0,
                measure::PhiSign::Reversed => -1.0,
            },
        }
    }

    fn advance<R: Rng + ?Sized>(&self, truth: &QubitState, rng: &mut R) -> Result<(QubitState, f64), TrajError> {
        let half = rotate_y(truth, self.cfg_half);
        let z = half.bloch().z;
        let (xi1, xi2) = (normal(rng), normal(rng));
        let sample = |inv: f64, xi: f64| -> f64 {
            if inv == 0.0 {
                return 0.0;
            }
            let base = if self.quadrature == Quadrature::Q { z } else { 0.0 };
            base + xi / inv.sqrt()
        };
        let v = sample(self.read, xi1);
        let w = sample(self.unread, xi2);
        let s = match self.quadrature {
            Quadrature::Q => {
                let s = measure::kraus_z(&half, v, self.read).map_err(SmeError::from)?;
                measure::kraus_z(&s, w, self.unread).map_err(SmeError::from)?
            }
            Quadrature::I => measure::rotate_z(&half, self.phi_sign * (v * self.read + w * self.unread)),
        };
        let s = measure::damp(&s, self.env);
        let s = rotate_y(&s, self.cfg_half);
        Ok((QubitState::repaired(*s.rho())?, v))
    }
}

/// Simulate the observer's trajectory and the fully resolved state. At
/// `η = 1` the two coincide.
pub fn simulate_resolved(cfg: &SmeConfig) -> Result<ResolvedRun, TrajError> {
    simulate_resolved_with(cfg, |_, _| None)
}

/// As [`simulate_resolved`]; `intervene(i, truth)` may replace the true
/// state at grid point `i` before bin `i` is measured (used for hidden
/// projective measurements). The observer is not told.
pub fn simulate_resolved_with(
    cfg: &SmeConfig,
    mut intervene: impl FnMut(usize, &QubitState) -> Option<QubitState>,
) -> Result<ResolvedRun, TrajError> {
    cfg.validate()?;
    let n = cfg.n_steps();
    let obs = BinUpdate::new(cfg);
    let step = ResolvedStep::new(cfg);
    let mut rng = stream(cfg.seed);
    let mut truth = cfg.initial;
    let mut seen = cfg.initial;
    let mut truths = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut samples = Vec::with_capacity(n);
    states.push((0.0, seen));
    for i in 0..n {
        if let Some(s) = intervene(i, &truth) {
            truth = s;
        }
        truths.push(truth);
        let (t_next, v) = step.advance(&truth, &mut rng)?;
        truth = t_next;
        seen = obs.advance(&seen, cfg.omega_r, |_| v).map_err(|e| at_step(e, i))?.0;
        let t = cfg.t_end(i);
        states.push((t, seen));
        samples.push((t, v));
    }
    truths.push(truth);
    let record = MeasurementRecord { samples, dt: cfg.dt(), quadrature: cfg.quadrature, seed: cfg.seed };
    Ok(ResolvedRun { observed: Trajectory { states, record, config: cfg.clone() }, truth: truths })
}

/// Single-shot weak measurement of duration `tau` and total strength
/// `S = 16kητ` starting from `|+x⟩`, followed by ideal tomography of the
/// true state, sorted by the time-averaged outcome `V_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackactionConfig {
    pub strength: f64,
    pub eta: f64,
    pub tau: f64,
    /// Environmental dephasing [1/s].
    pub gamma: f64,
    pub quadrature: Quadrature,
    /// Record bins per shot.
    pub steps: usize,
    pub shots: usize,
    pub seed: u64,
    pub bin_width: f64,
    pub v_max: f64,
}

impl BackactionConfig {
    pub fn new(strength: f64, eta: f64, tau: f64, shots: usize, seed: u64) -> Self {
        Self {
            strength,
            eta,
            tau,
            gamma: 0.0,
            quadrature: Quadrature::Q,
            steps: 200,
            shots,
            seed,
            bin_width: 0.1,
            v_max: 2.0,
        }
    }

    pub fn with_quadrature(mut self, q: Quadrature) -> Self {
        self.quadrature = q;
        self
    }

    /// Per-shot experiment.
    pub fn sme_config(&self) -> Result<SmeConfig, TrajError> {
        crate::ParamError::check_positive("S", self.strength)?;
        crate::ParamError::check_positive("tau", self.tau)?;
        crate::ParamError::check_positive("bin_width", self.bin_width)?;
        crate::ParamError::check_positive("v_max", self.v_max)?;
        crate::ParamError::check_efficiency("eta", self.eta)?;
        let k = self.strength / (16.0 * self.eta * self.tau);
        let steps = self.steps.max(1);
        let p = measure::MeasurementParams::new(k, self.eta, self.tau / steps as f64, self.gamma)?;
        Ok(SmeConfig::new(p, 0.0, self.tau, QubitState::plus_x(), self.seed)?.with_quadrature(self.quadrature))
    }

    /// Conditional Bloch vector given `V_m`: the Bayesian update of `|+x⟩`
    /// damped by the unread and environmental channels.
    pub fn prediction(&self, v_m: f64) -> BlochVector {
        let k = self.strength / (16.0 * self.eta * self.tau);
        let damp = (-(self.gamma + 2.0 * k * (1.0 - self.eta)) * self.tau).exp();
        let th = v_m * self.strength / 4.0;
        match self.quadrature {
            Quadrature::Q => {
                let z = th.tanh();
                BlochVector::new((1.0 - z * z).sqrt() * damp, 0.0, z)
            }
            Quadrature::I => BlochVector::new(th.cos() * damp, -th.sin() * damp, 0.0),
        }
    }
}

/// Born averages of the true state over shots with `V_m` in one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackactionBin {
    pub v_m: f64,
    pub n: usize,
    pub mean: BlochVector,
    pub stderr: BlochVector,
}

/// Shots use seeds `seed + index`; bins are centered on multiples of
/// `bin_width` with `|V_m| ≤ v_max`. Empty bins are dropped.
pub fn backaction_tomography(cfg: &BackactionConfig) -> Result<Vec<BackactionBin>, TrajError> {
    let base = cfg.sme_config()?;
    let half = (cfg.v_max / cfg.bin_width + 1e-9).floor() as i64;
    let nbins = (2 * half + 1) as usize;
    // Per bin: count, sums and sums of squares of (x, y, z).
    type Acc = Vec<(usize, [f64; 3], [f64; 3])>;
    let empty: Acc = vec![(0, [0.0; 3], [0.0; 3]); nbins];
    const CHUNK: usize = 256;
    let parts: Vec<Result<Acc, TrajError>> = (0..cfg.shots.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ch| {
            let mut acc = empty.clone();
            for r in ch * CHUNK..((ch + 1) * CHUNK).min(cfg.shots) {
                let run = simulate_resolved(&base.clone().with_seed(cfg.seed.wrapping_add(r as u64)))?;
                let rec = &run.observed.record;
                let v_m = rec.values().sum::<f64>() / rec.len() as f64;
                let j = (v_m / cfg.bin_width).round() as i64;
                if j.abs() > half {
                    continue;
                }
                let b = run.truth.last().expect("nonempty").bloch().as_array();
                let slot = &mut acc[(j + half) as usize];
                slot.0 += 1;
                for c in 0..3 {
                    slot.1[c] += b[c];
                    slot.2[c] += b[c] * b[c];
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = empty;
    for p in parts {
        for (t, a) in total.iter_mut().zip(p?) {
            t.0 += a.0;
            for c in 0..3 {
                t.1[c] += a.1[c];
                t.2[c] += a.2[c];
            }
        }
    }
    Ok(total
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(i, (n, s, q))| {
            let nf = n as f64;
            let m: [f64; 3] = std::array::from_fn(|c| s[c] / nf);
            let e: [f64; 3] = std::array::from_fn(|c| {
                if n < 2 {
                    f64::INFINITY
                } else {
                    ((q[c] / nf - m[c] * m[c]).max(0.0) / (nf - 1.0)).sqrt()
                }
            });
            BackactionBin {
                v_m: (i as i64 - half) as f64 * cfg.bin_width,
                n,
                mean: BlochVector::new(m[0], m[1], m[2]),
                stderr: BlochVector::new(e[0], e[1], e[2]),
            }
        })
        .collect())
}

/// Axis-aligned box around a Bloch vector. An infinite half width leaves
/// that component unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetWindow {
    pub center: BlochVector,
    pub eps: [f64; 3],
}

impl TargetWindow {
    /// Constrain x and z by `eps`, leave y free.
    pub fn xz(center: BlochVector, eps: f64) -> Result<Self, TrajError> {
        Self::new(center, [eps, f64::INFINITY, eps])
    }

    pub fn new(center: BlochVector, eps: [f64; 3]) -> Result<Self, TrajError> {
        if eps.iter().any(|e| e.is_nan() || *e <= 0.0) {
            return Err(TrajError::BadWindow);
        }
        Ok(Self { center, eps })
    }

    pub fn everything() -> Self {
        Self { center: BlochVector::new(0., 0., 0.), eps: [f64::INFINITY; 3] }
    }

    pub fn contains(&self, b: &BlochVector) -> bool {
        let c = self.center.as_array();
        b.as_array().iter().zip(c).zip(self.eps).all(|((v, m), e)| (v - m).abs() <= e)
    }
}

/// Tomographic averages over runs that match a target at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TomographyPoint {
    pub t: f64,
    pub target: BlochVector,
    pub x_mean: f64,
    pub z_mean: f64,
    pub x_stderr: f64,
    pub z_stderr: f64,
    /// Matched runs.
    pub n_matched: usize,
    /// Matched runs that drew a σx (resp. σz) outcome.
    pub n_x: usize,
    pub n_z: usize,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    matched: usize,
    nx: usize,
    nz: usize,
    sx: f64,
    sz: f64,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.matched += o.matched;
        self.nx += o.nx;
        self.nz += o.nz;
        self.sx += o.sx;
        self.sz += o.sz;
        self
    }
}

/// Conditional tomography at a single time. See
/// [`conditional_tomography_multi`].
pub fn conditional_tomography(
    target: &Trajectory,
    eps: f64,
    t_i: f64,
    n_runs: usize,
    seed: u64,
) -> Result<TomographyPoint, TrajError> {
    Ok(conditional_tomography_multi(target, eps, &[t_i], n_runs, seed)?.remove(0))
}

/// Run `n_runs` fresh experiments (seeds `seed..seed + n_runs`) with the
/// target's configuration. Where a run's reconstructed `(x, z)` lies within
/// `eps` of the target at a requested time, one projective σx or σz
/// outcome (chosen 50/50) is drawn with Born probabilities from the run's
/// true state and added to that time's averages.
pub fn conditional_tomography_multi(
    target: &Trajectory,
    eps: f64,
    times: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<TomographyPoint>, TrajError> {
    let cfg = &target.config;
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| target.index_of(t).ok_or(TrajError::OffGrid(t)))
        .collect::<Result<_, _>>()?;
    let windows: Vec<TargetWindow> =
        idx.iter().map(|&i| TargetWindow::xz(target.states[i].1.bloch(), eps)).collect::<Result<_, _>>()?;
    let last = idx.iter().copied().max().unwrap_or(0);
    let mut short = cfg.clone();
    short.duration = (last.max(1)) as f64 * cfg.dt();
    const CHUNK: usize = 256;
    let per_chunk: Vec<Result<Vec<Tally>, TrajError>> = (0..n_runs.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ch| {
            let mut tallies = vec![Tally::default(); idx.len()];
            for r in ch * CHUNK..((ch + 1) * CHUNK).min(n_runs) {
                let run_seed = seed.wrapping_add(r as u64);
                let run = simulate_resolved(&short.clone().with_seed(run_seed))?;
                let mut coins = side_stream(run_seed, 1);
                for (j, &i) in idx.iter().enumerate() {
                    let draw_x: bool = coins.random_bool(0.5);
                    let u: f64 = coins.random();
                    if !windows[j].contains(&run.observed.states[i].1.bloch()) {
                        continue;
                    }
                    let truth = run.truth[i].bloch();
                    let t = &mut tallies[j];
                    t.matched += 1;
                    if draw_x {
                        t.nx += 1;
                        t.sx += if u < 0.5 * (1.0 + truth.x) { 1.0 } else { -1.0 };
                    } else {
                        t.nz += 1;
                        t.sz += if u < 0.5 * (1.0 + truth.z) { 1.0 } else { -1.0 };
                    }
                }
            }
            Ok(tallies)
        })
        .collect();
    let mut total = vec![Tally::default(); idx.len()];
    for ch in per_chunk {
        for (a, b) in total.iter_mut().zip(ch?) {
            *a = a.merge(b);
        }
    }
    idx.iter()
        .zip(times)
        .zip(total)
        .map(|((&i, &t), tl)| {
            if tl.nx == 0 || tl.nz == 0 {
                return Err(TrajError::InsufficientStatistics { t, n_runs });
            }
            let (mx, mz) = (tl.sx / tl.nx as f64, tl.sz / tl.nz as f64);
            Ok(TomographyPoint {
                t,
                target: target.states[i].1.bloch(),
                x_mean: mx,
                z_mean: mz,
                x_stderr: ((1.0 - mx * mx).max(0.0) / tl.nx as f64).sqrt(),
                z_stderr: ((1.0 - mz * mz).max(0.0) / tl.nz as f64).sqrt(),
                n_matched: tl.matched,
                n_x: tl.nx,
                n_z: tl.nz,
            })
        })
        .collect()
}

/// Trajectories whose state at `t_f` lies in `window`, in input order.
pub fn postselect<'a>(ensemble: &'a [Trajectory], window: &TargetWindow, t_f: f64) -> Result<Vec<&'a Trajectory>, TrajError> {
    let mut out = Vec::new();
    for tr in ensemble {
        let s = tr.state_at(t_f).ok_or(TrajError::OffGrid(t_f))?;
        if window.contains(&s.bloch()) {
            out.push(tr);
        }
    }
    Ok(out)
}

/// Per-time 2-D histograms of `(x, z)` over `[−1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathHistogram {
    pub times: Vec<f64>,
    pub bins: usize,
    /// `counts[t][ix * bins + iz]`.
    pub counts: Vec<Vec<u32>>,
}

impl PathHistogram {
    pub fn width(&self) -> f64 {
        2.0 / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -1.0 + (i as f64 + 0.5) * self.width()
    }

    fn bin_of(&self, v: f64) -> usize {
        (((v + 1.0) / self.width()).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn build(sub: &[&Trajectory], bins: usize) -> Result<Self, TrajError> {
        if bins < 8 {
            return Err(TrajError::TooFewBins(bins));
        }
        let first = sub.first().ok_or(TrajError::EmptySubEnsemble)?;
        let times: Vec<f64> = first.states.iter().map(|(t, _)| *t).collect();
        let mut h = PathHistogram { times, bins, counts: vec![vec![0; bins * bins]; first.states.len()] };
        for tr in sub {
            for (j, (_, s)) in tr.states.iter().enumerate().take(h.counts.len()) {
                let b = s.bloch();
                let (ix, iz) = (h.bin_of(b.x), h.bin_of(b.z));
                h.counts[j][ix * bins + iz] += 1;
            }
        }
        Ok(h)
    }

    /// Box-smoothed 3×3 counts at slice `j`, zero padded at the edges.
    fn smoothed(&self, j: usize) -> Vec<u32> {
        let n = self.bins as isize;
        let c = &self.counts[j];
        let mut out = vec![0u32; c.len()];
        for ix in 0..n {
            for iz in 0..n {
                let mut acc = 0;
                for dx in -1..=1 {
                    for dz in -1..=1 {
                        let (a, b) = (ix + dx, iz + dz);
                        if (0..n).contains(&a) && (0..n).contains(&b) {
                            acc += c[(a * n + b) as usize];
                        }
                    }
                }
                out[(ix * n + iz) as usize] = acc;
            }
        }
        out
    }
}

/// Smoothed per-slice histogram mode. Ties go to the larger raw count,
/// then to the bin nearest the previous slice's choice. Returns `(t, x, z)` bin centres.
pub fn most_likely_path(sub: &[&Trajectory], bins: usize) -> Result<Vec<(f64, f64, f64)>, TrajError> {
    let h = PathHistogram::build(sub, bins)?;
    let mut prev: Option<(usize, usize)> = None;
    let mut out = Vec::with_capacity(h.times.len());
    for (j, &t) in h.times.iter().enumerate() {
        let sm = h.smoothed(j);
        let raw = &h.counts[j];
        let best = sm.iter().zip(raw).map(|(&a, &b)| (a, b)).max().unwrap_or((0, 0));
        let mut choice = None;
        let mut choice_d = f64::INFINITY;
        for (k, (&v, &r)) in sm.iter().zip(raw).enumerate() {
            if (v, r) != best {
                continue;
            }
            let (ix, iz) = (k / bins, k % bins);
            let d = prev.map_or(0.0, |(px, pz)| {
                let (a, b) = (ix as f64 - px as f64, iz as f64 - pz as f64);
                a * a + b * b
            });
            if d < choice_d {
                choice_d = d;
                choice = Some((ix, iz));
            }
        }
        let (ix, iz) = choice.expect("nonempty histogram");
        out.push((t, h.center(ix), h.center(iz)));
        prev = Some((ix, iz));
    }
    Ok(out)
}

/// Backward-propagated effect matrix, kept at unit trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectMatrix {
    pub e: Mat2,
}

impl EffectMatrix {
    /// `I/2`, the uninformative effect.
    pub fn uniform() -> Self {
        Self { e: Mat2::identity() * c(0.5, 0.0) }
    }

    pub fn new(e: Mat2) -> Result<Self, TrajError> {
        Ok(Self { e: normalize(e)? })
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.e
    }
}

fn normalize(e: Mat2) -> Result<Mat2, TrajError> {
    let tr = (e[(0, 0)] + e[(1, 1)]).re;
    if !(tr >= 1e-300) {
        return Err(TrajError::Degenerate(tr));
    }
    let mut m = e / c(tr, 0.0);
    // Hold Hermiticity exactly.
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    m[(0, 1)] = off;
    m[(1, 0)] = off.conj();
    m[(0, 0)].im = 0.0;
    m[(1, 1)].im = 0.0;
    Ok(m)
}

fn y_rotation(theta: f64) -> Mat2 {
    let (s, co) = (theta / 2.0).sin_cos();
    Mat2::new(c(co, 0.), c(-s, 0.), c(s, 0.), c(co, 0.))
}

/// Adjoint of one forward bin applied to `e`.
fn adjoint_bin(e: &Mat2, v: f64, u_half: &Mat2, cfg: &SmeConfig) -> Mat2 {
    let p = &cfg.params;
    let inv = p.inv_a2();
    let ud = u_half.adjoint();
    let mut m = ud * e * u_half;
    let f = p.unread_damping() * p.environment_damping();
    m[(0, 1)] *= f;
    m[(1, 0)] *= f;
    if inv > 0.0 {
        match cfg.quadrature {
            Quadrature::Q => {
                let l0 = -(v - 1.0) * (v - 1.0) * inv / 2.0;
                let l1 = -(v + 1.0) * (v + 1.0) * inv / 2.0;
                let mx = l0.max(l1);
                m[(0, 0)] *= (l0 - mx).exp();
                m[(1, 1)] *= (l1 - mx).exp();
                let g = ((l0 + l1) / 2.0 - mx).exp();
                m[(0, 1)] *= g;
                m[(1, 0)] *= g;
            }
            Quadrature::I => {
                let sign = match cfg.phi_sign {
                    measure::PhiSign::Standard => 1.0,
                    measure::PhiSign::Reversed => -1.0,
                };
                let ph = num_complex::Complex64::from_polar(1.0, sign * v * inv);
                m[(0, 1)] *= ph.conj();
                m[(1, 0)] *= ph;
            }
        }
    }
    ud * m * u_half
}

/// `E(t_i)` for every grid time, from `E(T) = I/2` backwards through the
/// adjoint of each bin update. `out[i]` pairs with `states[i]` of the
/// forward trajectory and summarizes record samples `i..`.
pub fn backward_effect(record: &MeasurementRecord, cfg: &SmeConfig) -> Result<Vec<(f64, EffectMatrix)>, TrajError> {
    check_grid(record, cfg)?;
    let u_half = y_rotation(0.5 * cfg.omega_r * cfg.dt());
    let n = record.len();
    let mut out = vec![(0.0, EffectMatrix::uniform()); n + 1];
    out[n].0 = n as f64 * cfg.dt();
    let mut e = *EffectMatrix::uniform().matrix();
    for i in (0..n).rev() {
        e = normalize(adjoint_bin(&e, record.samples[i].1, &u_half, cfg))?;
        out[i] = (i as f64 * cfg.dt(), EffectMatrix { e });
    }
    Ok(out)
}

/// `P_p(m) = Tr(Ω_m ρ Ω_m† E) / Σ_m Tr(Ω_m ρ Ω_m† E)`.
pub fn hindsight_probability(rho: &QubitState, e: &EffectMatrix, povm: &[Mat2]) -> Result<Vec<f64>, TrajError> {
    let sum = povm.iter().fold(Mat2::zeros(), |acc, o| acc + o.adjoint() * o);
    let dev = (sum - Mat2::identity()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if dev > 1e-9 {
        return Err(TrajError::IncompletePovm(dev));
    }
    let w: Vec<f64> = povm
        .iter()
        .map(|o| trace_product(&(o * rho.rho() * o.adjoint()), e.matrix()).re.max(0.0))
        .collect();
    let total: f64 = w.iter().sum();
    if !(total >= 1e-300) {
        return Err(TrajError::Degenerate(total));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Born probabilities, the forward-only prediction.
pub fn forward_probability(rho: &QubitState, povm: &[Mat2]) -> Result<Vec<f64>, TrajError> {
    hindsight_probability(rho, &EffectMatrix::uniform(), povm)
}

pub fn sigma_z_projectors() -> [Mat2; 2] {
    [projector_ground(), projector_excited()]
}

/// A run with a concealed projective σz measurement at grid time `t_mid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenTrial {
    /// Actual outcome: 0 for `|0⟩`, 1 for `|1⟩`.
    pub outcome: usize,
    pub forward: [f64; 2],
    pub hindsight: [f64; 2],
}

impl HiddenTrial {
    pub fn forward_confidence(&self) -> f64 {
        self.forward[0].max(self.forward[1])
    }

    pub fn hindsight_confidence(&self) -> f64 {
        self.hindsight[0].max(self.hindsight[1])
    }

    pub fn forward_correct(&self) -> bool {
        (self.forward[1] > self.forward[0]) as usize == self.outcome
    }

    pub fn hindsight_correct(&self) -> bool {
        (self.hindsight[1] > self.hindsight[0]) as usize == self.outcome
    }
}

/// Simulate with a hidden σz measurement on the true state at `t_mid`,
/// then predict its result from the record before `t_mid` alone and from
/// the whole record.
pub fn hidden_measurement_trial(cfg: &SmeConfig, t_mid: f64) -> Result<HiddenTrial, TrajError> {
    let mid = grid_index(t_mid, cfg.dt(), cfg.n_steps()).ok_or(TrajError::OffGrid(t_mid))?;
    let mut coin = side_stream(cfg.seed, 2);
    let mut outcome = 0;
    let run = simulate_resolved_with(cfg, |i, truth| {
        if i != mid {
            return None;
        }
        let u: f64 = coin.random();
        outcome = if u < truth.p0() { 0 } else { 1 };
        Some(if outcome == 0 { QubitState::ground() } else { QubitState::excited() })
    })?;
    let rho = run.observed.states[mid].1;
    let effects = backward_effect(&run.observed.record, cfg)?;
    let proj = sigma_z_projectors();
    let f = forward_probability(&rho, &proj)?;
    let h = hindsight_probability(&rho, &effects[mid].1, &proj)?;
    Ok(HiddenTrial { outcome, forward: [f[0], f[1]], hindsight: [h[0], h[1]] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasurementParams;
    use crate::qstate::state_of;
    use crate::sme::simulate;
    use approx::assert_abs_diff_eq;

    fn cfg(k: f64, eta: f64, gamma: f64, omega: f64, duration: f64) -> SmeConfig {
        let tau_c = 1.0 / (4.0 * k * eta);
        let p = MeasurementParams::new(k, eta, tau_c / 200.0, gamma).unwrap();
        SmeConfig::new(p, omega, duration, QubitState::plus_x(), 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = cfg(0.25, 0.6, 0.1, 2.0, 3.0);
        let tr = simulate(&c).unwrap();
        let back = reconstruct(&tr.record, c.initial, &c).unwrap();
        assert_eq!(back.states, tr.states);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let c = cfg(0.25, 0.6, 0.1, 2.0, 3.0);
        let tr = simulate(&c).unwrap();
        let mut other = c.clone();
        other.duration = 2.0;
        assert!(matches!(reconstruct(&tr.record, c.initial, &other), Err(TrajError::GridMismatch { .. })));
        let other = c.clone().with_quadrature(Quadrature::I);
        assert!(matches!(reconstruct(&tr.record, c.initial, &other), Err(TrajError::GridMismatch { .. })));
    }

    #[test]
    fn zero_record_only_damps() {
        let c = cfg(0.25, 0.6, 0.1, 0.0, 2.0);
        let mut rec = simulate(&c).unwrap().record;
        rec.samples.iter_mut().for_each(|s| s.1 = 0.0);
        let tr = reconstruct(&rec, c.initial, &c).unwrap();
        let rate = 2.0 * 0.25 * 0.4 + 0.1;
        for (t, s) in &tr.states {
            assert_eq!(s.bloch().z, 0.0);
            assert_abs_diff_eq!(s.bloch().x, (-rate * t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn positive_record_collapses_monotonically() {
        let c = cfg(0.25, 1.0, 0.0, 0.0, 2.0);
        let mut rec = simulate(&c).unwrap().record;
        rec.samples.iter_mut().for_each(|s| s.1 = 1.5);
        let tr = reconstruct(&rec, c.initial, &c).unwrap();
        let z: Vec<f64> = tr.states.iter().map(|(_, s)| s.bloch().z).collect();
        assert!(z.windows(2).all(|w| w[1] > w[0]));
        let (t, last) = tr.states.last().unwrap();
        let s = c.params.strength(*t);
        assert_abs_diff_eq!(last.bloch().z, (1.5 * s / 4.0).tanh(), epsilon = 1e-10);
    }

    #[test]
    fn resolved_equals_observed_at_unit_efficiency() {
        let c = cfg(0.25, 1.0, 0.0, 1.0, 1.0);
        let r = simulate_resolved(&c).unwrap();
        for ((_, o), t) in r.observed.states.iter().zip(&r.truth) {
            assert!(o.bloch().distance(&t.bloch()) < 1e-12);
        }
    }

    #[test]
    fn window_logic() {
        let w = TargetWindow::xz(BlochVector::new(0.5, 0.0, 0.2), 0.05).unwrap();
        assert!(w.contains(&BlochVector::new(0.54, 0.9, 0.16)));
        assert!(!w.contains(&BlochVector::new(0.56, 0.0, 0.2)));
        assert!(TargetWindow::xz(BlochVector::new(0., 0., 0.), 0.0).is_err());
        assert!(TargetWindow::everything().contains(&BlochVector::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn postselect_filters_in_order() {
        let c = cfg(0.25, 1.0, 0.0, 0.0, 1.0);
        let e: Vec<Trajectory> = (0..40).map(|i| simulate(&c.clone().with_seed(i)).unwrap()).collect();
        let all = postselect(&e, &TargetWindow::everything(), 1.0).unwrap();
        assert_eq!(all.len(), 40);
        let up = TargetWindow::new(BlochVector::new(0., 0., 0.5), [f64::INFINITY, f64::INFINITY, 0.5]).unwrap();
        let down = TargetWindow::new(BlochVector::new(0., 0., -0.5), [f64::INFINITY, f64::INFINITY, 0.49]).unwrap();
        let a = postselect(&e, &up, 1.0).unwrap();
        let b = postselect(&e, &down, 1.0).unwrap();
        assert!(a.iter().all(|x| !b.iter().any(|y| std::ptr::eq(*x, *y))));
        let seeds: Vec<u64> = a.iter().map(|t| t.record.seed).collect();
        assert!(seeds.windows(2).all(|w| w[0] < w[1]));
        assert!(postselect(&e, &up, 0.1234567).is_err());
    }

    #[test]
    fn identical_paths_give_that_path() {
        let c = cfg(0.25, 1.0, 0.0, 1.0, 1.0);
        let tr = simulate(&c).unwrap();
        let sub = vec![&tr; 5];
        let path = most_likely_path(&sub, 20).unwrap();
        for ((_, x, z), (_, s)) in path.iter().zip(&tr.states) {
            let b = s.bloch();
            assert!((x - b.x).abs() <= 0.1 && (z - b.z).abs() <= 0.1);
        }
        assert!(matches!(most_likely_path(&[], 20), Err(TrajError::EmptySubEnsemble)));
        assert!(matches!(most_likely_path(&sub, 4), Err(TrajError::TooFewBins(4))));
    }

    #[test]
    fn effect_without_information_stays_uniform() {
        for omega in [0.0, 3.0] {
            let p = MeasurementParams::new(0.0, 1.0, 1e-3, 0.0).unwrap();
            let c = SmeConfig::new(p, omega, 0.5, QubitState::plus_x(), 0).unwrap();
            let tr = simulate(&c).unwrap();
            for (_, e) in backward_effect(&tr.record, &c).unwrap() {
                assert!((e.e - EffectMatrix::uniform().e).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn late_positive_record_points_effect_to_ground() {
        let c = cfg(0.25, 1.0, 0.0, 0.0, 0.05);
        assert_eq!(c.n_steps(), 10);
        let mut rec = simulate(&c).unwrap().record;
        rec.samples.iter_mut().for_each(|s| s.1 = 0.0);
        for s in rec.samples.iter_mut().skip(7) {
            s.1 = 40.0;
        }
        let eff = backward_effect(&rec, &c).unwrap();
        // Independent recursion: E ∝ Π exp(V σz/a²) for diagonal Kraus maps.
        let inv = c.params.inv_a2();
        let w0: f64 = (3.0 * 40.0 * inv).exp();
        let p0 = w0 / (w0 + 1.0 / w0);
        assert_abs_diff_eq!(eff[0].1.e[(0, 0)].re, p0, epsilon = 1e-12);
        assert!(eff[0].1.e[(0, 0)].re > eff[0].1.e[(1, 1)].re);
        assert_eq!(eff[10].1, EffectMatrix::uniform());
    }

    #[test]
    fn effect_recursion_matches_explicit_matrices() {
        let c = cfg(0.25, 0.5, 0.2, 1.3, 0.2);
        let mut rec = simulate(&c).unwrap().record;
        rec.samples.iter_mut().enumerate().for_each(|(i, s)| s.1 = (i as f64 * 0.37).sin());
        let eff = backward_effect(&rec, &c).unwrap();
        let u = y_rotation(0.5 * c.omega_r * c.dt());
        let mut e = Mat2::identity() * c64(0.5);
        for i in (0..rec.len()).rev() {
            let op = crate::measure::povm_operator(rec.samples[i].1, &c.params).matrix();
            let f = c.params.unread_damping() * c.params.environment_damping();
            let mut m = u.adjoint() * e * u;
            m[(0, 1)] *= f;
            m[(1, 0)] *= f;
            let m = u.adjoint() * (op * m * op) * u;
            e = m / m.trace();
        }
        assert!((eff[0].1.e - e).norm() < 1e-12);
    }

    fn c64(v: f64) -> num_complex::Complex64 {
        c(v, 0.0)
    }

    #[test]
    fn hindsight_examples() {
        let rho = state_of(BlochVector::new(0.3, 0.1, -0.4)).unwrap();
        let p = hindsight_probability(&rho, &EffectMatrix::uniform(), &sigma_z_projectors()).unwrap();
        assert_abs_diff_eq!(p[0], rho.p0(), epsilon = 1e-15);
        let e = EffectMatrix::new(projector_ground()).unwrap();
        let p = hindsight_probability(&QubitState::maximally_mixed(), &e, &sigma_z_projectors()).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let bad = [projector_ground()];
        assert!(matches!(
            hindsight_probability(&rho, &e, &bad),
            Err(TrajError::IncompletePovm(_))
        ));
    }

    #[test]
    fn hindsight_trial_runs() {
        let c = cfg(0.25, 0.5, 0.0, 1.0, 2.0);
        let t = hidden_measurement_trial(&c, 1.0).unwrap();
        assert_abs_diff_eq!(t.forward[0] + t.forward[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.hindsight[0] + t.hindsight[1], 1.0, epsilon = 1e-12);
        assert!(t.outcome < 2);
        assert!(hidden_measurement_trial(&c, 1.00001).is_err());
    }
}
