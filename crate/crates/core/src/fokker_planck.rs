//! Fokker–Planck equation on CP¹ for densities that do not depend on the
//! azimuth.
//!
//! In `u = cos θ` the uniform measure is `du` on `[−1, 1]` and, for
//! `H = diag(h, −h)` with `⟨H⟩ = h u`, the equation reads
//!
//! ```text
//! ∂_t ρ = ∂_u [ (κ²/2)(1 − u²)(∂_u ρ + βh ρ) ].
//! ```
//!
//! The symplectic part of the drift only moves the azimuth, so it drops out.
//! Space is discretised with cell-centred finite volumes and Chang–Cooper
//! (Scharfetter–Gummel) exponential fitting of the face fluxes, which makes
//! `e^{−βh u_j}` an exact discrete stationary state. Time stepping is explicit
//! Euler under a positivity bound.

use crate::error::{Error, Result};

/// Fraction of the positivity limit used as the hard step bound.
pub const STABILITY_FACTOR: f64 = 0.4;

/// Relative weight of the uniform floor mixed into Gaussian initial data.
const GAUSSIAN_FLOOR: f64 = 1e-12;

/// Bernoulli function `x / (e^x − 1)`, with value 1 at 0.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Cell-centred density on `[−1, 1]` with respect to `du`.
#[derive(Clone, Debug, PartialEq)]
pub struct Density1D {
    values: Vec<f64>,
    pub time: f64,
}

impl Density1D {
    /// Validates nonnegativity and unit mass (within 1e-10).
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param("grid", "need at least two cells"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("density", "values must be finite and nonnegative"));
        }
        let d = Self { values, time };
        let mass = d.mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::param("density", format!("mass is {mass}, expected 1")));
        }
        Ok(d)
    }

    /// Samples `f` at the cell centres and normalises.
    pub fn from_fn(cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if cells < 2 {
            return Err(Error::param("grid", "need at least two cells"));
        }
        let du = 2.0 / cells as f64;
        let raw: Vec<f64> = (0..cells).map(|j| f(cell_center(j, du))).collect();
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("density", "values must be finite and nonnegative"));
        }
        let mass: f64 = raw.iter().sum::<f64>() * du;
        if !(mass > 0.0) {
            return Err(Error::param("density", "zero mass"));
        }
        Ok(Self {
            values: raw.into_iter().map(|v| v / mass).collect(),
            time: 0.0,
        })
    }

    pub fn uniform(cells: usize) -> Result<Self> {
        Self::from_fn(cells, |_| 1.0)
    }

    /// Discrete equilibrium `∝ e^{−βh u_j}`.
    pub fn stationary(cells: usize, h: f64, beta: f64) -> Result<Self> {
        // Shift the exponent so its largest value is zero.
        let top = (beta * h).abs();
        Self::from_fn(cells, |u| (-beta * h * u - top).exp())
    }

    /// Gaussian bump in `u`, standing in for a pure initial state on a
    /// latitude. The width must span at least three cells. A uniform floor of
    /// relative weight 1e-12 keeps every cell positive, so the η-field and
    /// the entropy production stay defined.
    pub fn gaussian(cells: usize, center: f64, width: f64) -> Result<Self> {
        let du = 2.0 / cells as f64;
        if !(width >= 3.0 * du) {
            return Err(Error::param("width", format!("must be at least 3 cells ({})", 3.0 * du)));
        }
        if !(-1.0..=1.0).contains(&center) {
            return Err(Error::param("center", "must lie in [-1, 1]"));
        }
        let bump = Self::from_fn(cells, |u| (-0.5 * ((u - center) / width).powi(2)).exp())?;
        let floor = 0.5 * GAUSSIAN_FLOOR;
        Ok(Self {
            values: bump.values.iter().map(|v| (1.0 - GAUSSIAN_FLOOR) * v + floor).collect(),
            time: 0.0,
        })
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn du(&self) -> f64 {
        2.0 / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> Vec<f64> {
        let du = self.du();
        (0..self.cells()).map(|j| cell_center(j, du)).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.du()
    }

    /// `Σ |ρ − σ| du`.
    pub fn l1_distance(&self, other: &Density1D) -> Result<f64> {
        if other.cells() != self.cells() {
            return Err(Error::DimensionMismatch {
                expected: self.cells(),
                found: other.cells(),
            });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.du())
    }

    /// Mass in `[a, b]`, counting partial cells proportionally.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let du = self.du();
        let mut total = 0.0;
        for (j, v) in self.values.iter().enumerate() {
            let lo = -1.0 + j as f64 * du;
            let overlap = ((lo + du).min(b) - lo.max(a)).max(0.0);
            total += v * overlap;
        }
        total
    }
}

fn cell_center(j: usize, du: f64) -> f64 {
    -1.0 + (j as f64 + 0.5) * du
}

/// `S = −Σ ρ ln ρ du`, with `0 ln 0 = 0`.
pub fn entropy(rho: &Density1D) -> f64 {
    -rho.values.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>() * rho.du()
}

/// `U = Σ h u ρ du`.
pub fn energy(rho: &Density1D, h: f64) -> f64 {
    let du = rho.du();
    rho.values.iter().enumerate().map(|(j, v)| h * cell_center(j, du) * v).sum::<f64>() * du
}

/// `∫ h²(1 − u²) ρ du`, the ensemble mean of the quantum variance.
pub fn mean_variance(rho: &Density1D, h: f64) -> f64 {
    let du = rho.du();
    rho.values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let u = cell_center(j, du);
            h * h * (1.0 - u * u) * v
        })
        .sum::<f64>()
        * du
}

/// `η = −(1/β) ln ρ − h u`, shifted to zero mean under `ρ`.
pub fn eta_field(rho: &Density1D, h: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", "the eta field needs beta > 0"));
    }
    if let Some(cell) = rho.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveDensity { cell });
    }
    let du = rho.du();
    let mut eta: Vec<f64> = rho
        .values
        .iter()
        .enumerate()
        .map(|(j, v)| -v.ln() / beta - h * cell_center(j, du))
        .collect();
    let mean: f64 = eta.iter().zip(&rho.values).map(|(e, v)| e * v).sum::<f64>() * du;
    for e in eta.iter_mut() {
        *e -= mean;
    }
    Ok(eta)
}

/// Face coefficients of the Chang–Cooper discretisation.
#[derive(Clone, Debug)]
pub struct FpOperator {
    cells: usize,
    du: f64,
    h: f64,
    beta: f64,
    kappa: f64,
    w: f64,
    bw: f64,
    /// `D_f / du` at the interior faces.
    diff: Vec<f64>,
}

impl FpOperator {
    pub fn new(cells: usize, h: f64, beta: f64, kappa: f64) -> Result<Self> {
        if cells < 2 {
            return Err(Error::param("grid", "need at least two cells"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::param("beta", "must be finite and nonnegative"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param("kappa", "must be positive"));
        }
        if !h.is_finite() {
            return Err(Error::param("h", "must be finite"));
        }
        let du = 2.0 / cells as f64;
        let diff = (1..cells)
            .map(|f| {
                let u = -1.0 + f as f64 * du;
                0.5 * kappa * kappa * (1.0 - u * u) / du
            })
            .collect();
        let w = beta * h * du;
        Ok(Self {
            cells,
            du,
            h,
            beta,
            kappa,
            w,
            bw: bernoulli(w),
            diff,
        })
    }

    /// Largest step allowed by the guard, `0.4 du² / (κ² c_max)` with
    /// `c_max = max_f ½(1 − u_f²) max(B(w), B(−w))`.
    pub fn max_dt(&self) -> f64 {
        let b = self.bw.max(bernoulli(-self.w));
        let c_max = (1..self.cells)
            .map(|f| {
                let u = -1.0 + f as f64 * self.du;
                0.5 * (1.0 - u * u) * b
            })
            .fold(0.0, f64::max);
        STABILITY_FACTOR * self.du * self.du / (self.kappa * self.kappa * c_max)
    }

    fn check(&self, rho: &Density1D) -> Result<()> {
        if rho.cells() != self.cells {
            return Err(Error::DimensionMismatch {
                expected: self.cells,
                found: rho.cells(),
            });
        }
        Ok(())
    }

    /// Flux through interior face `f` (between cells `f` and `f+1`):
    /// `F = −(D/du) B(w) (e^w ρ_{f+1} − ρ_f)`.
    fn flux(&self, v: &[f64], f: usize) -> f64 {
        -self.diff[f] * self.bw * (self.w.exp() * v[f + 1] - v[f])
    }

    /// Writes `dρ/dt` into `out`.
    fn rate_into(&self, v: &[f64], out: &mut [f64]) {
        let ew = self.w.exp();
        let mut left = 0.0;
        for j in 0..self.cells {
            let right = if j + 1 < self.cells {
                -self.diff[j] * self.bw * (ew * v[j + 1] - v[j])
            } else {
                0.0
            };
            out[j] = -(right - left) / self.du;
            left = right;
        }
    }

    /// One explicit step; errors if `dt` exceeds [`FpOperator::max_dt`].
    pub fn step(&self, rho: &Density1D, dt: f64) -> Result<Density1D> {
        self.check(rho)?;
        self.check_dt(dt)?;
        let mut rate = vec![0.0; self.cells];
        self.rate_into(&rho.values, &mut rate);
        Ok(Density1D {
            values: rho.values.iter().zip(&rate).map(|(v, r)| v + dt * r).collect(),
            time: rho.time + dt,
        })
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        let bound = self.max_dt();
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        if dt > bound {
            return Err(Error::Guard {
                name: "dt",
                value: dt,
                bound,
            });
        }
        Ok(())
    }

    /// Semi-discrete `dS/dt − β dU/dt`, written as a sum of nonnegative face
    /// terms `(D/du) B(w) (e^w ρ_{f+1} − ρ_f)(ln ρ_{f+1} − ln ρ_f + w)`.
    pub fn production(&self, rho: &Density1D) -> Result<f64> {
        self.check(rho)?;
        let v = &rho.values;
        if let Some(cell) = v.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::NonPositiveDensity { cell });
        }
        let ew = self.w.exp();
        Ok((0..self.cells - 1)
            .map(|f| {
                let x = (v[f + 1] / v[f]).ln() + self.w;
                self.diff[f] * self.bw * (ew * v[f + 1] - v[f]) * x
            })
            .sum())
    }

    /// The same quantity through the η-field,
    /// `(κ²β²/2) Σ_f (1 − u_f²)(Δη/du)² m_f du`, where the face density is
    /// `m_f = B(w) ρ_f (e^x − 1)/x` with `x = −βΔη`.
    pub fn eta_production(&self, rho: &Density1D) -> Result<f64> {
        self.check(rho)?;
        let eta = eta_field(rho, self.h, self.beta)?;
        let v = &rho.values;
        let k2 = self.kappa * self.kappa;
        let du = self.du;
        Ok((0..self.cells - 1)
            .map(|f| {
                let u = -1.0 + (f + 1) as f64 * du;
                let d_eta = eta[f + 1] - eta[f];
                let x = -self.beta * d_eta;
                let m = self.bw * v[f] / bernoulli(x);
                0.5 * k2 * self.beta * self.beta * (1.0 - u * u) * (d_eta / du).powi(2) * m * du
            })
            .sum())
    }

    /// Right-hand side of the energy equation,
    /// `(κ²/2)(−2U − β ∫ h²(1 − u²) ρ du)`.
    pub fn energy_rhs(&self, rho: &Density1D) -> f64 {
        0.5 * self.kappa * self.kappa * (-2.0 * energy(rho, self.h) - self.beta * mean_variance(rho, self.h))
    }

    /// Semi-discrete `dU/dt = Σ_f F_f h du`.
    pub fn energy_rate(&self, rho: &Density1D) -> f64 {
        (0..self.cells - 1).map(|f| self.flux(&rho.values, f)).sum::<f64>() * self.h * self.du
    }
}

/// One explicit Chang–Cooper step.
pub fn fp_step(rho: &Density1D, h: f64, beta: f64, kappa: f64, dt: f64) -> Result<Density1D> {
    FpOperator::new(rho.cells(), h, beta, kappa)?.step(rho, dt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpParams {
    pub h: f64,
    pub beta: f64,
    pub kappa: f64,
    /// `None` takes 90% of the guard bound.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Steps between records.
    pub record_stride: usize,
}

/// Thermodynamic record of a solver run. Rates are central differences over
/// one time step around each record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThermoSeries {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub energy: Vec<f64>,
    pub entropy_rate: Vec<f64>,
    pub energy_rate: Vec<f64>,
    /// Semi-discrete `dS/dt − β dU/dt` evaluated on the recorded density.
    pub production: Vec<f64>,
    /// `dS/dt − β dU/dt − production`.
    pub residual: Vec<f64>,
    /// Right-hand side of the energy equation.
    pub energy_rhs: Vec<f64>,
    /// L¹ distance to the discrete equilibrium.
    pub l1_distance: Vec<f64>,
}

impl ThermoSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpRun {
    pub series: ThermoSeries,
    pub dt: f64,
    pub final_density: Density1D,
}

/// Integrates from `initial` to `t_max`, recording every `record_stride`
/// steps (never at step 0, where no central difference exists).
pub fn solve(initial: &Density1D, params: &FpParams) -> Result<FpRun> {
    let op = FpOperator::new(initial.cells(), params.h, params.beta, params.kappa)?;
    let dt = match params.dt {
        Some(dt) => dt,
        None => 0.9 * op.max_dt(),
    };
    op.check_dt(dt)?;
    if !(params.t_max > 0.0 && params.t_max.is_finite()) {
        return Err(Error::param("t_max", "must be positive"));
    }
    if params.record_stride == 0 {
        return Err(Error::param("record_stride", "must be positive"));
    }
    let steps = (params.t_max / dt).round().max(1.0) as usize;
    let equilibrium = Density1D::stationary(initial.cells(), params.h, params.beta)?;
    let mut series = ThermoSeries::default();
    let mut cur = initial.clone();
    let mut rate = vec![0.0; op.cells];
    let mut before: Option<(f64, f64)> = None;
    for s in 0..steps {
        op.rate_into(&cur.values, &mut rate);
        let next = Density1D {
            values: cur.values.iter().zip(&rate).map(|(v, r)| v + dt * r).collect(),
            time: (s + 1) as f64 * dt,
        };
        if s > 0 && s % params.record_stride == 0 {
            if let Some((s_prev, u_prev)) = before {
                let ds = (entropy(&next) - s_prev) / (2.0 * dt);
                let du = (energy(&next, params.h) - u_prev) / (2.0 * dt);
                let prod = op.production(&cur)?;
                series.times.push(cur.time);
                series.entropy.push(entropy(&cur));
                series.energy.push(energy(&cur, params.h));
                series.entropy_rate.push(ds);
                series.energy_rate.push(du);
                series.production.push(prod);
                series.residual.push(ds - params.beta * du - prod);
                series.energy_rhs.push(op.energy_rhs(&cur));
                series.l1_distance.push(cur.l1_distance(&equilibrium)?);
            }
        }
        before = ((s + 1) % params.record_stride == 0).then(|| (entropy(&cur), energy(&cur, params.h)));
        cur = next;
    }
    Ok(FpRun {
        series,
        dt,
        final_density: cur,
    })
}
