//! The canonical phase-space ensemble `∝ exp(−β⟨H⟩)` on CP^n.
//!
//! In the energy eigenbasis a uniformly distributed state has populations
//! `p_k = |c_k|²` that are flat-Dirichlet on the n-simplex and phases that are
//! independent and uniform. Every quantity here is therefore an integral of
//! `exp(−β Σ p_k E_k)` against polynomials in `p` over the simplex, which is a
//! divided difference of `exp` at the nodes `x_k = −βE_k`:
//!
//! ```text
//! z_rel(β) = n! · exp[x_0, …, x_n],
//! E[p_k w] = n! · exp[x_0, …, x_n, x_k],
//! E[p_k p_l w] = n! · exp[x_0, …, x_n, x_k, x_l]   (k ≠ l),
//! E[p_k² w] = 2 · n! · exp[x_0, …, x_n, x_k, x_k].
//! ```
//!
//! `z_rel` is the partition function divided by the total phase-space volume,
//! so `z_rel(0) = 1`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{DensityMatrix, HermitianOperator, SecondMoment, Spectrum, C64};
use crate::rng::{ordered_map, stream};
use crate::stats::{Estimate, RunningStats};

/// Beyond this ratio of `Σ|t_k|` to `|Σ t_k|` the closed form is abandoned.
const CANCELLATION_LIMIT: f64 = 1e3;
const MC_CHUNK: usize = 4096;

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() {
        Ok(())
    } else {
        Err(Error::param("beta", "must be finite"))
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Divided difference `exp[y_0, …, y_m]` of nodes that are all `≤ 0`, read off
/// the corner of the exponential of the bidiagonal matrix with the nodes on
/// its diagonal and ones above it. Repeated nodes are allowed. The matrix is
/// Metzler, so every entry of every squaring is nonnegative and the result is
/// accurate to a few ulps relative.
fn exp_divided_difference_shifted(y: &[f64]) -> f64 {
    let m = y.len();
    if m == 1 {
        return y[0].exp();
    }
    let radius = y.iter().fold(0.0f64, |r, v| r.max(v.abs())) + 1.0;
    let squarings = (radius / 0.25).log2().ceil().max(0.0) as u32;
    let scale = 0.5f64.powi(squarings as i32);
    let at = |i: usize, j: usize| i * m + j;
    let mut b = vec![0.0; m * m];
    for i in 0..m {
        b[at(i, i)] = y[i] * scale;
        if i + 1 < m {
            b[at(i, i + 1)] = scale;
        }
    }
    let mul = |x: &[f64], z: &[f64]| {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for k in i..m {
                let xik = x[at(i, k)];
                if xik == 0.0 {
                    continue;
                }
                for j in k..m {
                    out[at(i, j)] += xik * z[at(k, j)];
                }
            }
        }
        out
    };
    // Horner form of the Taylor series: I + B(I + B/2(I + B/3(…))).
    let mut e = vec![0.0; m * m];
    for i in 0..m {
        e[at(i, i)] = 1.0;
    }
    for k in (1..=20).rev() {
        let mut next = mul(&b, &e);
        for v in next.iter_mut() {
            *v /= k as f64;
        }
        for i in 0..m {
            next[at(i, i)] += 1.0;
        }
        e = next;
    }
    for _ in 0..squarings {
        e = mul(&e, &e);
    }
    e[at(0, m - 1)]
}

/// `ln exp[x_0, …, x_m]` for arbitrary finite nodes.
fn ln_exp_divided_difference(x: &[f64]) -> f64 {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = x.iter().map(|v| v - top).collect();
    top + exp_divided_difference_shifted(&y).ln()
}

/// Closed-form terms `e^{y_k} / ∏_{j≠k}(y_k − y_j)` with `y = x − max x`, or
/// `None` when two nodes coincide.
fn closed_form_terms(y: &[f64]) -> Option<Vec<f64>> {
    let mut terms = Vec::with_capacity(y.len());
    for (k, &yk) in y.iter().enumerate() {
        let mut denom = 1.0;
        for (j, &yj) in y.iter().enumerate() {
            if j != k {
                denom *= yk - yj;
            }
        }
        if denom == 0.0 {
            return None;
        }
        terms.push(yk.exp() / denom);
    }
    Some(terms)
}

fn nodes(spec: &Spectrum, beta: f64) -> Vec<f64> {
    spec.levels().iter().map(|e| -beta * e).collect()
}

/// `ln z_rel(β)`; the route is chosen as in [`partition_function`].
pub fn ln_partition_function(spec: &Spectrum, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let n = spec.dim() - 1;
    if n == 0 {
        return Ok(-beta * spec.levels()[0]);
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let x = nodes(spec, beta);
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = x.iter().map(|v| v - top).collect();
    let ln_fact = factorial(n).ln();
    if !spec.is_degenerate() {
        if let Some(terms) = closed_form_terms(&y) {
            let sum: f64 = terms.iter().sum();
            let abs: f64 = terms.iter().map(|t| t.abs()).sum();
            if sum > 0.0 && abs <= CANCELLATION_LIMIT * sum {
                return Ok(top + ln_fact + sum.ln());
            }
        }
    }
    Ok(top + ln_fact + exp_divided_difference_shifted(&y).ln())
}

/// Partition function per unit phase-space volume,
/// `z_rel = E_{p ~ flat Dirichlet}[exp(−β Σ p_k E_k)]`.
///
/// Well-separated spectra use `n! Σ_k e^{−βE_k} / ∏_{j≠k} β(E_j − E_k)`.
/// Degenerate spectra, and spectra where that sum cancels badly, go through
/// the matrix-exponential evaluation of the divided difference.
pub fn partition_function(spec: &Spectrum, beta: f64) -> Result<f64> {
    Ok(ln_partition_function(spec, beta)?.exp())
}

/// Monte Carlo estimate of `z_rel` from flat-Dirichlet populations.
pub fn partition_function_mc(
    spec: &Spectrum,
    beta: f64,
    samples: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Estimate> {
    check_beta(beta)?;
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let levels = spec.levels();
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts = ordered_map(chunks, workers, |c| {
        let mut rng = stream(seed, c as u64);
        let mut stats = RunningStats::new();
        let count = MC_CHUNK.min(samples - c * MC_CHUNK);
        let mut p = vec![0.0; levels.len()];
        for _ in 0..count {
            dirichlet(&mut rng, &mut p);
            let e: f64 = p.iter().zip(levels).map(|(a, b)| a * b).sum();
            stats.push((-beta * e).exp());
        }
        stats
    });
    let mut total = RunningStats::new();
    for part in &parts {
        total.merge(part);
    }
    Ok(Estimate::from(&total))
}

fn dirichlet<R: Rng + ?Sized>(rng: &mut R, p: &mut [f64]) {
    let mut sum = 0.0;
    for v in p.iter_mut() {
        *v = rng.sample::<f64, _>(Exp1);
        sum += *v;
    }
    for v in p.iter_mut() {
        *v /= sum;
    }
}

/// Canonical averages of the populations in the energy eigenbasis:
/// `first[k] = E_β[p_k]` and `pair[k][l] = E_β[p_k p_l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Populations {
    pub first: Vec<f64>,
    pub pair: DMatrix<f64>,
}

/// Exact population moments by divided differences with repeated nodes.
pub fn populations(spec: &Spectrum, beta: f64) -> Result<Populations> {
    check_beta(beta)?;
    let m = spec.dim();
    let x = nodes(spec, beta);
    let ln_z = ln_exp_divided_difference(&x);
    let ratio = |extra: &[f64]| {
        let mut all = x.clone();
        all.extend_from_slice(extra);
        (ln_exp_divided_difference(&all) - ln_z).exp()
    };
    let first: Vec<f64> = (0..m).map(|k| ratio(&[x[k]])).collect();
    let mut pair = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in k..m {
            let v = ratio(&[x[k], x[l]]) * if k == l { 2.0 } else { 1.0 };
            pair[(k, l)] = v;
            pair[(l, k)] = v;
        }
    }
    Ok(Populations { first, pair })
}

/// Exact thermodynamic summary at one inverse temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalResult {
    pub beta: f64,
    pub z_rel: f64,
    /// `U = −∂ ln z_rel / ∂β`.
    pub u: f64,
    /// Unconditional variance `Σ_k E[p_k] E_k² − U²`.
    pub var_total: f64,
    /// Variance of `⟨H⟩` over the ensemble.
    pub var_classical: f64,
    /// `C = β² ∂² ln z_rel / ∂β²`.
    pub c: f64,
}

/// A finite-difference value with the gap to its Richardson extrapolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDifference {
    pub value: f64,
    pub richardson_gap: f64,
}

fn fd_step(beta: f64) -> f64 {
    1e-4 * beta.abs().max(1.0)
}

/// `U = −∂ ln z_rel / ∂β` by central differences.
pub fn energy_fd(spec: &Spectrum, beta: f64) -> Result<FiniteDifference> {
    let d = fd_step(beta);
    let lz = |b: f64| ln_partition_function(spec, b);
    let first = |h: f64| -> Result<f64> { Ok(-(lz(beta + h)? - lz(beta - h)?) / (2.0 * h)) };
    let (a, b) = (first(d)?, first(2.0 * d)?);
    Ok(FiniteDifference {
        value: a,
        richardson_gap: (a - b).abs() / 3.0,
    })
}

/// `C = β² ∂² ln z_rel / ∂β²` by central differences.
pub fn capacity_fd(spec: &Spectrum, beta: f64) -> Result<FiniteDifference> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", "heat capacity needs beta > 0"));
    }
    let d = fd_step(beta);
    let lz0 = ln_partition_function(spec, beta)?;
    let second = |h: f64| -> Result<f64> {
        let up = ln_partition_function(spec, beta + h)?;
        let down = ln_partition_function(spec, beta - h)?;
        Ok(beta * beta * (up - 2.0 * lz0 + down) / (h * h))
    };
    let (a, b) = (second(d)?, second(2.0 * d)?);
    Ok(FiniteDifference {
        value: a,
        richardson_gap: (a - b).abs() / 3.0,
    })
}

pub fn equilibrium_energy(spec: &Spectrum, beta: f64) -> Result<f64> {
    Ok(energy_fd(spec, beta)?.value)
}

pub fn heat_capacity(spec: &Spectrum, beta: f64) -> Result<f64> {
    Ok(capacity_fd(spec, beta)?.value)
}

/// Energy of the conventional thermal state `e^{−βH}/tr e^{−βH}`.
pub fn von_neumann_energy(spec: &Spectrum, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let e0 = spec.min();
    let (mut num, mut den) = (0.0, 0.0);
    for &e in spec.levels() {
        let w = (-beta * (e - e0)).exp();
        num += w * e;
        den += w;
    }
    Ok(num / den)
}

pub fn canonical(spec: &Spectrum, beta: f64) -> Result<CanonicalResult> {
    let z_rel = partition_function(spec, beta)?;
    let u = equilibrium_energy(spec, beta)?;
    let pops = populations(spec, beta)?;
    let levels = spec.levels();
    let mean: f64 = pops.first.iter().zip(levels).map(|(p, e)| p * e).sum();
    let second: f64 = pops.first.iter().zip(levels).map(|(p, e)| p * e * e).sum();
    let mut cross = 0.0;
    for k in 0..levels.len() {
        for l in 0..levels.len() {
            cross += levels[k] * levels[l] * pops.pair[(k, l)];
        }
    }
    let c = if beta > 0.0 { heat_capacity(spec, beta)? } else { 0.0 };
    Ok(CanonicalResult {
        beta,
        z_rel,
        u,
        var_total: (second - mean * mean).max(0.0),
        var_classical: (cross - mean * mean).max(0.0),
        c,
    })
}

/// Both sides of the capacity identity `T²C = Var[H] + (n+1) T (U − H̄)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

impl CapacityIdentity {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn capacity_identity(spec: &Spectrum, beta: f64) -> Result<CapacityIdentity> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", "the capacity identity needs beta > 0"));
    }
    let r = canonical(spec, beta)?;
    let t = 1.0 / beta;
    Ok(CapacityIdentity {
        lhs: t * t * r.c,
        rhs: r.var_total + spec.dim() as f64 * t * (r.u - spec.mean()),
    })
}

/// `|T²C − Var[H] − (n+1)T(U − H̄)|`.
pub fn verify_capacity_identity(spec: &Spectrum, beta: f64) -> Result<f64> {
    Ok(capacity_identity(spec, beta)?.residual())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DosMethod {
    ExactPiecewise,
    MonteCarlo,
}

/// Density of states of `⟨H⟩` under the uniform measure, normalised to unit
/// integral over `[E_min, E_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DosEstimate {
    pub energies: Vec<f64>,
    pub density: Vec<f64>,
    /// Per-bin standard errors of the Monte Carlo histogram.
    pub std_error: Option<Vec<f64>>,
    pub method: DosMethod,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            workers: None,
        }
    }
}

/// Exact piecewise-polynomial density for `n ≤ 2`, histogram otherwise. The
/// histogram bins are centred on the grid points with edges at midpoints,
/// clipped to the spectral hull; the grid must then be increasing.
pub fn dos(spec: &Spectrum, grid: &[f64], options: &McOptions) -> Result<DosEstimate> {
    let (lo, hi) = (spec.min(), spec.max());
    if grid.is_empty() {
        return Err(Error::param("grid", "must not be empty"));
    }
    for &e in grid {
        if !(e >= lo && e <= hi) {
            return Err(Error::OutsideHull { energy: e, min: lo, max: hi });
        }
    }
    if hi - lo < spec.tolerance() {
        return Err(Error::param("spectrum", "density of states is a point mass for a flat spectrum"));
    }
    let levels = spec.levels();
    match spec.dim() {
        2 => Ok(DosEstimate {
            energies: grid.to_vec(),
            density: vec![1.0 / (hi - lo); grid.len()],
            std_error: None,
            method: DosMethod::ExactPiecewise,
        }),
        3 => {
            let (e0, e1, e2) = (levels[0], levels[1], levels[2]);
            let density = grid
                .iter()
                .map(|&e| {
                    if e >= e1 && e2 > e1 {
                        2.0 * (e2 - e) / ((e2 - e0) * (e2 - e1))
                    } else {
                        2.0 * (e - e0) / ((e2 - e0) * (e1 - e0))
                    }
                })
                .collect();
            Ok(DosEstimate {
                energies: grid.to_vec(),
                density,
                std_error: None,
                method: DosMethod::ExactPiecewise,
            })
        }
        _ => dos_histogram(spec, grid, options),
    }
}

/// Histogram estimate regardless of dimension.
pub fn dos_histogram(spec: &Spectrum, grid: &[f64], options: &McOptions) -> Result<DosEstimate> {
    let (lo, hi) = (spec.min(), spec.max());
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "histogram needs at least two increasing points"));
    }
    if options.samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let m = grid.len();
    let mut edges = Vec::with_capacity(m + 1);
    edges.push((grid[0] - (grid[1] - grid[0]) / 2.0).max(lo));
    for w in grid.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push((grid[m - 1] + (grid[m - 1] - grid[m - 2]) / 2.0).min(hi));
    let levels = spec.levels();
    let chunks = options.samples.div_ceil(MC_CHUNK);
    let parts = ordered_map(chunks, options.workers, |c| {
        let mut rng = stream(options.seed, c as u64);
        let mut counts = vec![0u64; m];
        let count = MC_CHUNK.min(options.samples - c * MC_CHUNK);
        let mut p = vec![0.0; levels.len()];
        for _ in 0..count {
            dirichlet(&mut rng, &mut p);
            let e: f64 = p.iter().zip(levels).map(|(a, b)| a * b).sum();
            if e < edges[0] || e >= edges[m] {
                continue;
            }
            let bin = edges.partition_point(|&x| x <= e) - 1;
            counts[bin.min(m - 1)] += 1;
        }
        counts
    });
    let mut counts = vec![0u64; m];
    for part in &parts {
        for (c, p) in counts.iter_mut().zip(part) {
            *c += p;
        }
    }
    let total = options.samples as f64;
    let mut density = Vec::with_capacity(m);
    let mut se = Vec::with_capacity(m);
    for b in 0..m {
        let width = edges[b + 1] - edges[b];
        let frac = counts[b] as f64 / total;
        density.push(frac / width);
        se.push((frac * (1.0 - frac) / total).sqrt() / width);
    }
    Ok(DosEstimate {
        energies: grid.to_vec(),
        density,
        std_error: Some(se),
        method: DosMethod::MonteCarlo,
    })
}

fn eigen_rotation(h: &HermitianOperator) -> (Spectrum, DMatrix<C64>) {
    let spec = h.spectrum();
    let u = spec.vectors().clone();
    (spec, u)
}

/// Exact canonical density matrix `E_β[Π]`: diagonal in the eigenbasis with
/// entries `E_β[p_k]`.
pub fn equilibrium_density_matrix(h: &HermitianOperator, beta: f64) -> Result<DensityMatrix> {
    let (spec, u) = eigen_rotation(h);
    let pops = populations(&spec, beta)?;
    let diag = DMatrix::from_fn(spec.dim(), spec.dim(), |i, j| {
        if i == j {
            C64::new(pops.first[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(DensityMatrix::from_unchecked(&u * diag * u.adjoint()))
}

/// Exact canonical second moment `E_β[Π ⊗ Π]`. Phase averaging leaves only
/// the pairings `(a=b, c=d)` and `(a=d, c=b)`, each carrying `E_β[p_a p_c]`.
pub fn equilibrium_second_moment(h: &HermitianOperator, beta: f64) -> Result<SecondMoment> {
    let (spec, u) = eigen_rotation(h);
    let pops = populations(&spec, beta)?;
    let n = spec.dim();
    let mut data = vec![C64::new(0.0, 0.0); n.pow(4)];
    let at = crate::geometry::idx4;
    for a in 0..n {
        for c in 0..n {
            let m = C64::new(pops.pair[(a, c)], 0.0);
            data[at(n, a, a, c, c)] += m;
            if a != c {
                data[at(n, a, c, c, a)] += m;
            }
        }
    }
    Ok(SecondMoment::from_raw(n, data).rotated(&u))
}

/// Importance-weighted Monte Carlo estimate of the canonical moments.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumMoments {
    pub rho: DMatrix<C64>,
    /// Per-entry standard errors, real and imaginary parts separately.
    pub rho_se: DMatrix<C64>,
    pub r2: SecondMoment,
    pub r2_se: Vec<C64>,
    /// Weighted estimate of `E_β[V]`, the mean quantum variance.
    pub mean_variance: Estimate,
    pub energy: Estimate,
    pub samples: usize,
}

#[derive(Clone)]
struct WeightedSums {
    w: f64,
    w2: f64,
    // Per observable: Σw x, Σw² x, Σw² x².
    sums: Vec<[f64; 3]>,
}

impl WeightedSums {
    fn new(k: usize) -> Self {
        Self {
            w: 0.0,
            w2: 0.0,
            sums: vec![[0.0; 3]; k],
        }
    }

    fn push(&mut self, w: f64, values: &[f64]) {
        self.w += w;
        self.w2 += w * w;
        for (s, &x) in self.sums.iter_mut().zip(values) {
            s[0] += w * x;
            s[1] += w * w * x;
            s[2] += w * w * x * x;
        }
    }

    fn merge(&mut self, other: &WeightedSums) {
        self.w += other.w;
        self.w2 += other.w2;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            for i in 0..3 {
                s[i] += o[i];
            }
        }
    }

    /// Ratio estimate and its delta-method standard error.
    fn estimate(&self, k: usize) -> Estimate {
        let [wx, w2x, w2x2] = self.sums[k];
        let r = wx / self.w;
        let var = (w2x2 - 2.0 * r * w2x + r * r * self.w2).max(0.0);
        Estimate {
            value: r,
            std_error: var.sqrt() / self.w,
        }
    }
}

/// Samples uniform states, weights them by `exp(−β(⟨H⟩ − E_min))` and forms
/// weighted averages of `Π`, `Π⊗Π`, `⟨H⟩` and `V`.
pub fn equilibrium_moments_mc(h: &HermitianOperator, beta: f64, options: &McOptions) -> Result<EquilibriumMoments> {
    check_beta(beta)?;
    if options.samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let (spec, u) = eigen_rotation(h);
    let n = spec.dim();
    let levels = spec.levels().to_vec();
    let e_min = spec.min();
    let n2 = n * n;
    let n4 = n2 * n2;
    // Observables: 2n² for ρ, 2n⁴ for R, then energy and variance.
    let width = 2 * n2 + 2 * n4 + 2;
    let chunks = options.samples.div_ceil(MC_CHUNK);
    let parts = ordered_map(chunks, options.workers, |c| {
        let mut rng = stream(options.seed, c as u64);
        let mut sums = WeightedSums::new(width);
        let count = MC_CHUNK.min(options.samples - c * MC_CHUNK);
        let mut values = vec![0.0; width];
        let mut coef = vec![C64::new(0.0, 0.0); n];
        let mut psi = vec![C64::new(0.0, 0.0); n];
        let mut proj = vec![C64::new(0.0, 0.0); n2];
        for _ in 0..count {
            let mut norm = 0.0;
            for z in coef.iter_mut() {
                *z = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                norm += z.norm_sqr();
            }
            let inv = norm.sqrt().recip();
            let mut e = 0.0;
            let mut e2 = 0.0;
            for (z, &lev) in coef.iter_mut().zip(&levels) {
                *z *= inv;
                e += z.norm_sqr() * lev;
                e2 += z.norm_sqr() * lev * lev;
            }
            for a in 0..n {
                psi[a] = (0..n).map(|k| u[(a, k)] * coef[k]).sum();
            }
            for a in 0..n {
                for b in 0..n {
                    proj[a * n + b] = psi[a] * psi[b].conj();
                }
            }
            for (i, p) in proj.iter().enumerate() {
                values[2 * i] = p.re;
                values[2 * i + 1] = p.im;
            }
            for i in 0..n2 {
                for j in 0..n2 {
                    let q = proj[i] * proj[j];
                    let slot = 2 * n2 + 2 * (i * n2 + j);
                    values[slot] = q.re;
                    values[slot + 1] = q.im;
                }
            }
            values[width - 2] = e;
            values[width - 1] = (e2 - e * e).max(0.0);
            sums.push((-beta * (e - e_min)).exp(), &values);
        }
        sums
    });
    let mut total = WeightedSums::new(width);
    for part in &parts {
        total.merge(part);
    }
    let pair = |slot: usize| {
        let (re, im) = (total.estimate(slot), total.estimate(slot + 1));
        (C64::new(re.value, im.value), C64::new(re.std_error, im.std_error))
    };
    let mut rho = DMatrix::zeros(n, n);
    let mut rho_se = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let (v, s) = pair(2 * (a * n + b));
            rho[(a, b)] = v;
            rho_se[(a, b)] = s;
        }
    }
    let mut r2 = vec![C64::new(0.0, 0.0); n4];
    let mut r2_se = vec![C64::new(0.0, 0.0); n4];
    // Flat index (i, j) with i = a·n + b and j = c·n + d is exactly idx4.
    for k in 0..n4 {
        let (v, s) = pair(2 * n2 + 2 * k);
        r2[k] = v;
        r2_se[k] = s;
    }
    Ok(EquilibriumMoments {
        rho,
        rho_se,
        r2: SecondMoment::from_raw(n, r2),
        r2_se,
        energy: total.estimate(width - 2),
        mean_variance: total.estimate(width - 1),
        samples: options.samples,
    })
}
