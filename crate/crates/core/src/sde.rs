//! Driven diffusion on the state space, integrated in the ambient Hilbert
//! space.
//!
//! One step of the scheme is
//!
//! ```text
//! ψ' = normalize( ψ + v(ψ) dt + (κ/√2) (I − ψψ†) dB ),
//! v(ψ) = i(H − ⟨H⟩)ψ − (κ²β/4)(H − ⟨H⟩)ψ,
//! ```
//!
//! with `dB` a complex Gaussian vector, `E[dB_k conj(dB_l)] = δ_kl dt`.
//!
//! The coefficients are fixed by the energy process. The gradient lift moves
//! `⟨H⟩` at rate `2 Re⟨ψ|H|v⟩ = −2c·V`, so `c = κ²β/4` gives the drift
//! `−(κ²β/2)V`. For the noise, `E[ξ†Aξ] − ⟨A⟩E[ξ†ξ] = σ²(tr A − N⟨A⟩)dt`
//! with `σ = κ/√2`, which is `(κ²/2)(n+1)(Ā − ⟨A⟩)dt`: the Laplacian of an
//! expectation function. The quadratic variation of `⟨A⟩` is then
//! `4σ²·‖(A−⟨A⟩)ψ‖²/2 · dt = κ²V dt`. Renormalisation supplies the curvature
//! term at O(dt), so no separate Itô correction is added.
//!
//! The symplectic lift carries the sign `+i`, which makes the ensemble
//! density matrix obey `dρ/dt = +i[H, ρ] + …`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_uniform, uniform_average, HermitianOperator, PureState, C64};
use crate::moments::{pure_rhs_into, CentralDifference, MomentAccumulator, MomentSnapshot};
use crate::rng::{stream, Stream};
use crate::stats::{Estimate, RunningStats};

/// Upper bound on `dt·κ²·(n+1)`.
pub const RESOLUTION_GUARD: f64 = 0.1;

const CHUNK: usize = 16;
const BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SdeParams {
    /// Inverse temperature.
    pub beta: f64,
    /// Noise strength; sets the thermalisation time scale `1/κ²`.
    pub kappa: f64,
    pub dt: f64,
    pub steps: usize,
    pub ensemble_size: usize,
    pub master_seed: u64,
    pub record_stride: usize,
}

impl SdeParams {
    /// Single-step parameters with a one-trajectory, one-step run shape.
    pub fn new(beta: f64, kappa: f64, dt: f64) -> Self {
        Self {
            beta,
            kappa,
            dt,
            steps: 1,
            ensemble_size: 1,
            master_seed: 0,
            record_stride: 1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be finite and nonnegative"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::param("kappa", "must be finite and nonnegative"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "must be positive"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::param("ensemble_size", "must be positive"));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride", "must be positive"));
        }
        let load = self.dt * self.kappa * self.kappa * dim as f64;
        if load >= RESOLUTION_GUARD {
            return Err(Error::Guard {
                name: "dt",
                value: self.dt,
                bound: RESOLUTION_GUARD / (self.kappa * self.kappa * dim as f64),
            });
        }
        Ok(())
    }

    /// Time between recorded samples.
    pub fn record_interval(&self) -> f64 {
        self.dt * self.record_stride as f64
    }

    fn record_count(&self) -> usize {
        self.steps / self.record_stride + 1
    }
}

/// Which parts of the dynamics a step applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dynamics {
    Full,
    /// Brownian motion only, for checking the Laplacian of expectation functions.
    NoiseOnly,
}

/// Allocation-free stepping kernel over raw amplitude slices.
pub(crate) struct Kernel {
    n: usize,
    h: Vec<C64>,
    grad: f64,
    noise: f64,
    dt: f64,
    sqrt_dt: f64,
    drift: bool,
    hpsi: Vec<C64>,
    db: Vec<C64>,
    dw: Vec<f64>,
}

impl Kernel {
    pub(crate) fn new(h: &HermitianOperator, beta: f64, kappa: f64, dt: f64, dynamics: Dynamics) -> Self {
        let n = h.dim();
        let m = h.matrix();
        Self {
            n,
            h: (0..n * n).map(|k| m[(k / n, k % n)]).collect(),
            grad: kappa * kappa * beta / 4.0,
            noise: kappa * FRAC_1_SQRT_2,
            dt,
            sqrt_dt: dt.sqrt(),
            drift: dynamics == Dynamics::Full,
            hpsi: vec![C64::new(0.0, 0.0); n],
            db: vec![C64::new(0.0, 0.0); n],
            dw: vec![0.0; 2 * n],
        }
    }

    /// Fills `hpsi` and returns `(⟨H⟩, V)`.
    pub(crate) fn observe(&mut self, psi: &[C64]) -> (f64, f64) {
        let n = self.n;
        let mut e = 0.0;
        let mut h2 = 0.0;
        for a in 0..n {
            let row = &self.h[a * n..(a + 1) * n];
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..n {
                acc += row[b] * psi[b];
            }
            self.hpsi[a] = acc;
            e += (psi[a].conj() * acc).re;
            h2 += acc.norm_sqr();
        }
        (e, (h2 - e * e).max(0.0))
    }

    pub(crate) fn hpsi(&self) -> &[C64] {
        &self.hpsi
    }

    /// Advances `psi` in place with increments `dw` (each `N(0, dt)`).
    pub(crate) fn advance(&mut self, psi: &mut [C64], dw: &[f64]) {
        let n = self.n;
        let (e, _) = self.observe(psi);
        let mut overlap = C64::new(0.0, 0.0);
        for k in 0..n {
            let b = C64::new(dw[2 * k], dw[2 * k + 1]) * FRAC_1_SQRT_2;
            self.db[k] = b;
            overlap += psi[k].conj() * b;
        }
        let coef = if self.drift {
            C64::new(-self.grad, 1.0) * self.dt
        } else {
            C64::new(0.0, 0.0)
        };
        let mut norm = 0.0;
        for k in 0..n {
            let centred = self.hpsi[k] - psi[k] * e;
            let v = psi[k] + coef * centred + (self.db[k] - psi[k] * overlap) * self.noise;
            psi[k] = v;
            norm += v.norm_sqr();
        }
        let inv = norm.sqrt().recip();
        for z in psi.iter_mut() {
            *z *= inv;
        }
    }

    /// Draws the increments from `rng` and advances.
    pub(crate) fn advance_with<R: Rng + ?Sized>(&mut self, psi: &mut [C64], rng: &mut R) {
        let mut dw = std::mem::take(&mut self.dw);
        for x in dw.iter_mut() {
            *x = self.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        }
        self.advance(psi, &dw);
        self.dw = dw;
    }
}

/// The deterministic part of the step, `v = i(H − ⟨H⟩)ψ − (κ²β/4)(H − ⟨H⟩)ψ`.
/// It is orthogonal to `ψ`.
pub fn drift_vector(psi: &PureState, h: &HermitianOperator, beta: f64, kappa: f64) -> Result<Vec<C64>> {
    h.check_dim(psi.dim())?;
    let mut kernel = Kernel::new(h, beta, kappa, 1.0, Dynamics::Full);
    let amps = psi.amplitudes().as_slice();
    let (e, _) = kernel.observe(amps);
    let coef = C64::new(-kappa * kappa * beta / 4.0, 1.0);
    Ok(amps.iter().zip(kernel.hpsi()).map(|(p, hp)| coef * (hp - p * e)).collect())
}

/// One Euler–Maruyama step with projected noise and renormalisation. `dw`
/// holds `2N` independent `N(0, dt)` draws: real and imaginary parts of each
/// component in turn.
pub fn step(psi: &PureState, h: &HermitianOperator, params: &SdeParams, dw: &[f64]) -> Result<PureState> {
    step_with(psi, h, params, dw, Dynamics::Full)
}

pub fn step_with(
    psi: &PureState,
    h: &HermitianOperator,
    params: &SdeParams,
    dw: &[f64],
    dynamics: Dynamics,
) -> Result<PureState> {
    h.check_dim(psi.dim())?;
    if dw.len() != 2 * psi.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * psi.dim(),
            found: dw.len(),
        });
    }
    let mut kernel = Kernel::new(h, params.beta, params.kappa, params.dt, dynamics);
    let mut amps = psi.amplitudes().clone();
    kernel.advance(amps.as_mut_slice(), dw);
    Ok(PureState::from_normalized_unchecked(amps))
}

/// Recorded observables along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Option<Vec<PureState>>,
    pub energy: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Integrates one trajectory, recording every `record_stride` steps (the
/// initial state included).
pub fn simulate_trajectory<R: Rng + ?Sized>(
    psi0: &PureState,
    h: &HermitianOperator,
    params: &SdeParams,
    rng: &mut R,
    keep_states: bool,
) -> Result<TrajectoryRecord> {
    h.check_dim(psi0.dim())?;
    params.validate(psi0.dim())?;
    let mut kernel = Kernel::new(h, params.beta, params.kappa, params.dt, Dynamics::Full);
    let mut psi = psi0.amplitudes().clone();
    let count = params.record_count();
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(count),
        states: keep_states.then(|| Vec::with_capacity(count)),
        energy: Vec::with_capacity(count),
        variance: Vec::with_capacity(count),
    };
    for s in 0..=params.steps {
        if s % params.record_stride == 0 {
            let (e, v) = kernel.observe(psi.as_slice());
            rec.times.push(s as f64 * params.dt);
            rec.energy.push(e);
            rec.variance.push(v);
            if let Some(states) = rec.states.as_mut() {
                states.push(PureState::from_normalized_unchecked(psi.clone()));
            }
        }
        if s < params.steps {
            kernel.advance_with(psi.as_mut_slice(), rng);
        }
    }
    Ok(rec)
}

/// Initial condition of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Fixed(PureState),
    /// Unitarily invariant (Fubini–Study) measure.
    Uniform,
    /// Trajectory `i` starts from entry `i mod len`.
    List(Vec<PureState>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleOptions {
    /// Estimate `ρ`, `R` and the paired derivative of `ρ` at every record.
    pub track_moments: bool,
    /// Report the mean over trajectories of each trajectory's time-averaged
    /// energy over records with `t ≥` this value.
    pub time_average_from: Option<f64>,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub workers: Option<usize>,
}

/// Paired finite-difference check of the energy balance at one record:
/// `dU/dt` against `(κ²/2)((n+1)(H̄ − U) − β E[V])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBalance {
    pub time: f64,
    pub du_dt: f64,
    pub rhs: f64,
    /// Standard error of the per-trajectory residual.
    pub residual_se: f64,
}

impl EnergyBalance {
    pub fn normalized_residual(&self) -> f64 {
        (self.du_dt - self.rhs) / self.residual_se
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub energy_se: Vec<f64>,
    pub mean_variance: Vec<f64>,
    pub variance_se: Vec<f64>,
    /// Interior records only.
    pub energy_balance: Vec<EnergyBalance>,
    /// `⟨H⟩` at the last record, in trajectory order.
    pub final_energies: Vec<f64>,
    pub time_averaged_energy: Option<Estimate>,
    pub moments: Option<Vec<MomentSnapshot>>,
}

struct DerivativeStats {
    value: Vec<[RunningStats; 2]>,
    residual: Vec<[RunningStats; 2]>,
    wide: Vec<[RunningStats; 2]>,
}

struct Accumulator {
    energy: Vec<RunningStats>,
    variance: Vec<RunningStats>,
    fd: Vec<RunningStats>,
    rhs: Vec<RunningStats>,
    residual: Vec<RunningStats>,
    late: RunningStats,
    finals: Vec<f64>,
    moments: Option<Vec<MomentAccumulator>>,
    derivatives: Option<Vec<DerivativeStats>>,
}

impl Accumulator {
    fn new(records: usize, dim: usize, moments: bool) -> Self {
        let stats = |k: usize| vec![RunningStats::new(); k];
        let pairs = |k: usize| vec![[RunningStats::new(); 2]; k];
        Self {
            energy: stats(records),
            variance: stats(records),
            fd: stats(records),
            rhs: stats(records),
            residual: stats(records),
            late: RunningStats::new(),
            finals: Vec::new(),
            moments: moments.then(|| (0..records).map(|_| MomentAccumulator::new(dim)).collect()),
            derivatives: moments.then(|| {
                (0..records)
                    .map(|_| DerivativeStats {
                        value: pairs(dim * dim),
                        residual: pairs(dim * dim),
                        wide: pairs(dim * dim),
                    })
                    .collect()
            }),
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        let zip = |a: &mut Vec<RunningStats>, b: &Vec<RunningStats>| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        zip(&mut self.energy, &other.energy);
        zip(&mut self.variance, &other.variance);
        zip(&mut self.fd, &other.fd);
        zip(&mut self.rhs, &other.rhs);
        zip(&mut self.residual, &other.residual);
        self.late.merge(&other.late);
        self.finals.extend_from_slice(&other.finals);
        if let (Some(a), Some(b)) = (self.moments.as_mut(), other.moments.as_ref()) {
            a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        }
        if let (Some(a), Some(b)) = (self.derivatives.as_mut(), other.derivatives.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                for (p, q) in [(&mut x.value, &y.value), (&mut x.residual, &y.residual), (&mut x.wide, &y.wide)] {
                    p.iter_mut().zip(q).for_each(|(s, t)| {
                        s[0].merge(&t[0]);
                        s[1].merge(&t[1]);
                    });
                }
            }
        }
    }
}

struct Setup<'a> {
    h: &'a HermitianOperator,
    params: &'a SdeParams,
    law: &'a InitialLaw,
    options: &'a EnsembleOptions,
    dim: usize,
    records: usize,
    mean_level: f64,
}

fn push_complex(slot: &mut [RunningStats; 2], z: C64) {
    slot[0].push(z.re);
    slot[1].push(z.im);
}

fn run_trajectory(setup: &Setup<'_>, index: usize, acc: &mut Accumulator) -> Result<()> {
    let Setup {
        h,
        params,
        law,
        options,
        dim: n,
        records,
        mean_level,
    } = *setup;
    let mut rng: Stream = stream(params.master_seed, index as u64);
    let psi0 = match law {
        InitialLaw::Fixed(psi) => psi.clone(),
        InitialLaw::Uniform => sample_uniform(n, &mut rng)?,
        InitialLaw::List(states) => states[index % states.len()].clone(),
    };
    h.check_dim(psi0.dim())?;
    let mut kernel = Kernel::new(h, params.beta, params.kappa, params.dt, Dynamics::Full);
    let mut psi = psi0.amplitudes().as_slice().to_vec();
    let mut energy = Vec::with_capacity(records);
    let mut var = Vec::with_capacity(records);
    let mut kept: Vec<C64> = Vec::new();
    let mut pure_rhs: Vec<C64> = Vec::new();
    let mut buf = vec![C64::new(0.0, 0.0); n * n];
    for s in 0..=params.steps {
        if s % params.record_stride == 0 {
            let (e, v) = kernel.observe(&psi);
            energy.push(e);
            var.push(v);
            if options.track_moments {
                kept.extend_from_slice(&psi);
                pure_rhs_into(&psi, kernel.hpsi(), e, params.beta, params.kappa, &mut buf);
                pure_rhs.extend_from_slice(&buf);
            }
        }
        if s < params.steps {
            kernel.advance_with(&mut psi, &mut rng);
        }
    }

    let interval = params.record_interval();
    let k2 = params.kappa * params.kappa;
    let t_start = options.time_average_from;
    let mut late = RunningStats::new();
    for k in 0..records {
        acc.energy[k].push(energy[k]);
        acc.variance[k].push(var[k]);
        if k > 0 && k + 1 < records {
            let fd = (energy[k + 1] - energy[k - 1]) / (2.0 * interval);
            let rhs = k2 / 2.0 * (n as f64 * (mean_level - energy[k]) - params.beta * var[k]);
            acc.fd[k].push(fd);
            acc.rhs[k].push(rhs);
            acc.residual[k].push(fd - rhs);
        }
        if t_start.is_some_and(|t0| k as f64 * interval >= t0) {
            late.push(energy[k]);
        }
    }
    if late.count() > 0 {
        acc.late.push(late.mean());
    }
    acc.finals.push(energy[records - 1]);

    if let (Some(mom), Some(der)) = (acc.moments.as_mut(), acc.derivatives.as_mut()) {
        let state = |k: usize| &kept[k * n..(k + 1) * n];
        let proj = |k: usize, a: usize, b: usize| state(k)[a] * state(k)[b].conj();
        for k in 0..records {
            mom[k].push_amplitudes(state(k));
            if k == 0 || k + 1 >= records {
                continue;
            }
            let d = &mut der[k];
            for a in 0..n {
                for b in 0..n {
                    let fd = (proj(k + 1, a, b) - proj(k - 1, a, b)) / (2.0 * interval);
                    push_complex(&mut d.value[a * n + b], fd);
                    push_complex(&mut d.residual[a * n + b], fd - pure_rhs[k * n * n + a * n + b]);
                    if k >= 2 && k + 2 < records {
                        let wide = (proj(k + 2, a, b) - proj(k - 2, a, b)) / (4.0 * interval);
                        push_complex(&mut d.wide[a * n + b], wide);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Runs `ensemble_size` independent trajectories. Trajectory `i` draws from
/// `stream(master_seed, i)`; chunks of trajectories are reduced in index
/// order, so the output is bit-identical for any worker count.
pub fn simulate_ensemble(
    law: &InitialLaw,
    h: &HermitianOperator,
    params: &SdeParams,
    options: &EnsembleOptions,
) -> Result<EnsembleSeries> {
    let dim = h.dim();
    params.validate(dim)?;
    if params.ensemble_size < 2 {
        return Err(Error::param("ensemble_size", "an ensemble needs at least 2 trajectories"));
    }
    match law {
        InitialLaw::Fixed(psi) => h.check_dim(psi.dim())?,
        InitialLaw::List(states) => {
            if states.is_empty() {
                return Err(Error::EmptyEnsemble);
            }
            for s in states {
                h.check_dim(s.dim())?;
            }
        }
        InitialLaw::Uniform => {
            if dim < 2 {
                return Err(Error::param("initial", "uniform law needs N >= 2"));
            }
        }
    }
    let records = params.record_count();
    let setup = Setup {
        h,
        params,
        law,
        options,
        dim,
        records,
        mean_level: uniform_average(h),
    };
    let chunks = params.ensemble_size.div_ceil(CHUNK);
    let run_chunk = |c: usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(records, dim, options.track_moments);
        let end = ((c + 1) * CHUNK).min(params.ensemble_size);
        for i in c * CHUNK..end {
            run_trajectory(&setup, i, &mut acc)?;
        }
        Ok(acc)
    };
    let body = || -> Result<Accumulator> {
        let mut total = Accumulator::new(records, dim, options.track_moments);
        let mut start = 0;
        while start < chunks {
            let end = (start + BATCH).min(chunks);
            let parts: Vec<Result<Accumulator>> = (start..end).into_par_iter().map(run_chunk).collect();
            for part in parts {
                total.merge(&part?);
            }
            start = end;
        }
        Ok(total)
    };
    let acc = match options.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::param("workers", e.to_string()))?
            .install(body)?,
        None => body()?,
    };

    let interval = params.record_interval();
    let times: Vec<f64> = (0..records).map(|k| k as f64 * interval).collect();
    let energy_balance = (1..records.saturating_sub(1))
        .map(|k| EnergyBalance {
            time: times[k],
            du_dt: acc.fd[k].mean(),
            rhs: acc.rhs[k].mean(),
            residual_se: acc.residual[k].std_error(),
        })
        .collect();
    let moments = match (&acc.moments, &acc.derivatives) {
        (Some(mom), Some(der)) => {
            let n = dim;
            let mean = |v: &[[RunningStats; 2]]| {
                nalgebra::DMatrix::from_fn(n, n, |a, b| C64::new(v[a * n + b][0].mean(), v[a * n + b][1].mean()))
            };
            let se = |v: &[[RunningStats; 2]]| {
                nalgebra::DMatrix::from_fn(n, n, |a, b| C64::new(v[a * n + b][0].std_error(), v[a * n + b][1].std_error()))
            };
            let mut snaps = Vec::with_capacity(records);
            for k in 0..records {
                let mut snap = mom[k].snapshot(times[k])?;
                if k > 0 && k + 1 < records {
                    let d = &der[k];
                    snap.derivative = Some(CentralDifference {
                        value: mean(&d.value),
                        residual_se: se(&d.residual),
                        wide: (k >= 2 && k + 2 < records).then(|| mean(&d.wide)),
                    });
                }
                snaps.push(snap);
            }
            Some(snaps)
        }
        _ => None,
    };
    Ok(EnsembleSeries {
        mean_energy: acc.energy.iter().map(|s| s.mean()).collect(),
        energy_se: acc.energy.iter().map(|s| s.std_error()).collect(),
        mean_variance: acc.variance.iter().map(|s| s.mean()).collect(),
        variance_se: acc.variance.iter().map(|s| s.std_error()).collect(),
        times,
        energy_balance,
        final_energies: acc.finals,
        time_averaged_energy: (acc.late.count() > 0).then(|| Estimate::from(&acc.late)),
        moments,
    })
}

/// One step of the polar-angle process of a spin-1/2 system with levels `±h`
/// (upper level at `θ = 0`):
/// `dθ = [(κ²/2)cot θ + (κ²βh/2) sin θ] dt + κ dW`.
/// Overshoots past a pole are reflected back into `(0, π)`.
pub fn spin_half_theta_step(theta: f64, h: f64, beta: f64, kappa: f64, dt: f64, dw: f64) -> f64 {
    let k2 = kappa * kappa;
    let drift = 0.5 * k2 / theta.tan() + 0.5 * k2 * beta * h * theta.sin();
    let mut next = theta + drift * dt + kappa * dw;
    // A huge overshoot can need more than one fold.
    for _ in 0..4 {
        if next < 0.0 {
            next = -next;
        } else if next > PI {
            next = 2.0 * PI - next;
        } else {
            break;
        }
    }
    next.clamp(f64::EPSILON, PI - f64::EPSILON)
}

/// Runs the polar-angle process from each initial angle for `steps` steps and
/// returns the final angles. Path `i` draws from `stream(master_seed, i)`.
pub fn simulate_theta(
    initial: &[f64],
    h: f64,
    beta: f64,
    kappa: f64,
    dt: f64,
    steps: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Vec<f64> {
    let sqrt_dt = dt.sqrt();
    crate::rng::ordered_map(initial.len(), workers, |i| {
        let mut rng = stream(master_seed, i as u64);
        let mut theta = initial[i].clamp(f64::EPSILON, PI - f64::EPSILON);
        for _ in 0..steps {
            let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            theta = spin_half_theta_step(theta, h, beta, kappa, dt, dw);
        }
        theta
    })
}
