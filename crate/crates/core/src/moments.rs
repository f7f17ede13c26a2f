//! Ensemble moments of the projector and the density-operator evolution law.
//!
//! The density matrix evolves as
//!
//! ```text
//! dρ/dt = i[H, ρ] − (κ²β/4){H, ρ} + (κ²/2)(I − (n+1)ρ + β·contract(H, R))
//! ```
//!
//! with `contract(H, R)^α_β = H_γ^δ R^{αγ}_{βδ}`. The equation is not closed:
//! the second moment `R = E[Π⊗Π]` enters through the gradient term.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{idx4, DensityMatrix, HermitianOperator, PureState, SecondMoment, C64};
use crate::stats::RunningStats;

/// Estimated moments at one time, with per-entry standard errors (real and
/// imaginary parts stored in the matching parts of the error entries).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSnapshot {
    pub time: f64,
    pub rho: DensityMatrix,
    pub rho_se: DMatrix<C64>,
    pub r2: SecondMoment,
    pub r2_se: Vec<C64>,
    pub samples: u64,
    /// Trajectory-paired central difference of the projector, when the
    /// snapshot came from an ensemble run that kept neighbouring records.
    pub derivative: Option<CentralDifference>,
}

/// `(Π(t+Δ) − Π(t−Δ)) / 2Δ` averaged over trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralDifference {
    pub value: DMatrix<C64>,
    /// Standard error of the per-trajectory residual `difference − rhs(Π(t))`
    /// for the law the ensemble was generated with. Pairing inside each
    /// trajectory removes the strong correlation between neighbouring
    /// snapshots.
    pub residual_se: DMatrix<C64>,
    /// The same difference over `±2Δ`, for the Richardson bias estimate.
    pub wide: Option<DMatrix<C64>>,
}

/// The three contributions to the density-operator law.
#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleTerms {
    /// `i(Hρ − ρH)`
    pub symplectic: DMatrix<C64>,
    /// `(κ²/2)(I − (n+1)ρ)`
    pub laplacian: DMatrix<C64>,
    /// `−(κ²β/4)(Hρ + ρH) + (κ²β/2) contract(H, R)`
    pub gradient: DMatrix<C64>,
}

impl LiouvilleTerms {
    pub fn total(&self) -> DMatrix<C64> {
        &self.symplectic + &self.laplacian + &self.gradient
    }
}

/// `contract(H, R)^α_β = Σ_{γδ} H_{δγ} R^{αγ}_{βδ}`.
pub fn contract(h: &HermitianOperator, r2: &SecondMoment) -> Result<DMatrix<C64>> {
    let n = r2.dim();
    h.check_dim(n)?;
    let hm = h.matrix();
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..n {
            for d in 0..n {
                acc += hm[(d, c)] * r2.get(a, b, c, d);
            }
        }
        acc
    }))
}

pub fn liouville_terms(
    rho: &DensityMatrix,
    r2: &SecondMoment,
    h: &HermitianOperator,
    beta: f64,
    kappa: f64,
) -> Result<LiouvilleTerms> {
    let n = rho.dim();
    h.check_dim(n)?;
    if r2.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: r2.dim(),
        });
    }
    let i = C64::new(0.0, 1.0);
    let k2 = kappa * kappa;
    let hr = h.matrix() * rho.matrix();
    let rh = rho.matrix() * h.matrix();
    let symplectic = (&hr - &rh) * i;
    let laplacian = (DMatrix::<C64>::identity(n, n) - rho.matrix() * C64::new(n as f64, 0.0)) * C64::new(k2 / 2.0, 0.0);
    let gradient = (&hr + &rh) * C64::new(-k2 * beta / 4.0, 0.0) + contract(h, r2)? * C64::new(k2 * beta / 2.0, 0.0);
    Ok(LiouvilleTerms {
        symplectic,
        laplacian,
        gradient,
    })
}

/// Right-hand side of the density-operator law.
pub fn liouville_rhs(
    rho: &DensityMatrix,
    r2: &SecondMoment,
    h: &HermitianOperator,
    beta: f64,
    kappa: f64,
) -> Result<DMatrix<C64>> {
    Ok(liouville_terms(rho, r2, h, beta, kappa)?.total())
}

/// The right-hand side for a single pure state, where `R = Π⊗Π` and the
/// contraction reduces to `⟨H⟩Π`. Writes into `out` (row-major, N²).
pub(crate) fn pure_rhs_into(
    psi: &[C64],
    hpsi: &[C64],
    energy: f64,
    beta: f64,
    kappa: f64,
    out: &mut [C64],
) {
    let n = psi.len();
    let i = C64::new(0.0, 1.0);
    let k2 = kappa * kappa;
    let g = k2 * beta / 4.0;
    let diag_coef = k2 / 2.0;
    let pi_coef = k2 / 2.0 * (beta * energy - n as f64);
    for a in 0..n {
        for b in 0..n {
            let hp = hpsi[a] * psi[b].conj();
            let ph = psi[a] * hpsi[b].conj();
            let pi = psi[a] * psi[b].conj();
            let mut v = i * (hp - ph) - (hp + ph) * g + pi * pi_coef;
            if a == b {
                v += diag_coef;
            }
            out[a * n + b] = v;
        }
    }
}

/// Streaming accumulator for projector moments.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    dim: usize,
    rho: Vec<[RunningStats; 2]>,
    r2: Vec<[RunningStats; 2]>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rho: vec![[RunningStats::new(); 2]; dim * dim],
            r2: vec![[RunningStats::new(); 2]; dim.pow(4)],
        }
    }

    pub fn push(&mut self, psi: &PureState) {
        self.push_amplitudes(psi.amplitudes().as_slice());
    }

    pub(crate) fn push_amplitudes(&mut self, amps: &[C64]) {
        let n = self.dim;
        for a in 0..n {
            for b in 0..n {
                let p = amps[a] * amps[b].conj();
                let slot = &mut self.rho[a * n + b];
                slot[0].push(p.re);
                slot[1].push(p.im);
                for c in 0..n {
                    for d in 0..n {
                        let q = p * amps[c] * amps[d].conj();
                        let slot = &mut self.r2[idx4(n, a, b, c, d)];
                        slot[0].push(q.re);
                        slot[1].push(q.im);
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        for (x, y) in self.rho.iter_mut().zip(&other.rho).chain(self.r2.iter_mut().zip(&other.r2)) {
            x[0].merge(&y[0]);
            x[1].merge(&y[1]);
        }
    }

    pub fn count(&self) -> u64 {
        self.rho[0][0].count()
    }

    pub fn snapshot(&self, time: f64) -> Result<MomentSnapshot> {
        if self.count() == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let n = self.dim;
        let mean = |s: &[RunningStats; 2]| C64::new(s[0].mean(), s[1].mean());
        let se = |s: &[RunningStats; 2]| C64::new(s[0].std_error(), s[1].std_error());
        Ok(MomentSnapshot {
            time,
            rho: DensityMatrix::from_unchecked(DMatrix::from_fn(n, n, |a, b| mean(&self.rho[a * n + b]))),
            rho_se: DMatrix::from_fn(n, n, |a, b| se(&self.rho[a * n + b])),
            r2: SecondMoment::from_raw(n, self.r2.iter().map(mean).collect()),
            r2_se: self.r2.iter().map(se).collect(),
            samples: self.count(),
            derivative: None,
        })
    }
}

/// Sample means of `Π` and `Π⊗Π` over the given states.
///
/// The standard errors are the delete-one jackknife errors of the means, which
/// for a sample mean coincide with `s/√m`.
pub fn estimate_moments(states: &[PureState]) -> Result<MomentSnapshot> {
    let first = states.first().ok_or(Error::EmptyEnsemble)?;
    let mut acc = MomentAccumulator::new(first.dim());
    for psi in states {
        if psi.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: psi.dim(),
            });
        }
        acc.push(psi);
    }
    acc.snapshot(0.0)
}

/// One real component of one residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentResidual {
    pub row: usize,
    pub col: usize,
    pub imaginary: bool,
    pub derivative: f64,
    pub rhs: f64,
    pub residual: f64,
    pub error: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPoint {
    pub time: f64,
    pub components: Vec<ComponentResidual>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleReport {
    pub points: Vec<ResidualPoint>,
    /// Fraction of normalised residuals with magnitude at most 3.
    pub fraction_within_3: f64,
    pub max_abs_normalized: f64,
    /// Largest `|tr rhs|` over the interior snapshots.
    pub max_trace: f64,
    /// Largest entry of `rhs − rhs†`.
    pub max_hermiticity: f64,
}

/// Compares the central finite difference of the density matrix with the
/// law's right-hand side at every interior snapshot.
///
/// Each real component (upper triangle, real and imaginary parts) is judged
/// against `sqrt(se² + bias²)`: `se` is the paired statistical error when the
/// snapshots carry one, otherwise the (conservative) combination of the two
/// neighbours' errors; `bias` is a third of the gap between the `±Δ` and
/// `±2Δ` differences.
pub fn verify_liouville(
    snapshots: &[MomentSnapshot],
    h: &HermitianOperator,
    beta: f64,
    kappa: f64,
) -> Result<LiouvilleReport> {
    if snapshots.len() < 3 {
        return Err(Error::TooFewSnapshots {
            needed: 3,
            found: snapshots.len(),
        });
    }
    let spacing = snapshots[1].time - snapshots[0].time;
    if !(spacing > 0.0) {
        return Err(Error::NonUniformSpacing);
    }
    for w in snapshots.windows(2) {
        if ((w[1].time - w[0].time) - spacing).abs() > 1e-9 * spacing.max(1.0) {
            return Err(Error::NonUniformSpacing);
        }
    }
    let n = snapshots[0].rho.dim();
    h.check_dim(n)?;

    let mut points = Vec::new();
    let (mut within, mut total) = (0usize, 0usize);
    let mut max_abs = 0.0f64;
    let mut max_trace = 0.0f64;
    let mut max_herm = 0.0f64;
    for k in 1..snapshots.len() - 1 {
        let snap = &snapshots[k];
        let rhs = liouville_rhs(&snap.rho, &snap.r2, h, beta, kappa)?;
        max_trace = max_trace.max(rhs.trace().norm());
        max_herm = max_herm.max((&rhs - rhs.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max));

        let (fd, se, wide) = match &snap.derivative {
            Some(d) => (d.value.clone(), d.residual_se.clone(), d.wide.clone()),
            None => {
                let (prev, next) = (&snapshots[k - 1], &snapshots[k + 1]);
                let fd = (next.rho.matrix() - prev.rho.matrix()).unscale(2.0 * spacing);
                let se = DMatrix::from_fn(n, n, |a, b| {
                    let (p, q) = (prev.rho_se[(a, b)], next.rho_se[(a, b)]);
                    C64::new(p.re.hypot(q.re), p.im.hypot(q.im)).unscale(2.0 * spacing)
                });
                let wide = (k >= 2 && k + 2 < snapshots.len()).then(|| {
                    (snapshots[k + 2].rho.matrix() - snapshots[k - 2].rho.matrix()).unscale(4.0 * spacing)
                });
                (fd, se, wide)
            }
        };

        let mut components = Vec::new();
        for a in 0..n {
            for b in a..n {
                for imaginary in [false, true] {
                    if imaginary && a == b {
                        continue;
                    }
                    let part = |z: C64| if imaginary { z.im } else { z.re };
                    let derivative = part(fd[(a, b)]);
                    let r = part(rhs[(a, b)]);
                    let residual = derivative - r;
                    let bias = wide.as_ref().map_or(0.0, |w| (part(w[(a, b)]) - derivative).abs() / 3.0);
                    let error = part(se[(a, b)]).hypot(bias);
                    let normalized = if error > 0.0 {
                        residual / error
                    } else if residual.abs() <= 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    total += 1;
                    if normalized.abs() <= 3.0 {
                        within += 1;
                    }
                    max_abs = max_abs.max(normalized.abs());
                    components.push(ComponentResidual {
                        row: a,
                        col: b,
                        imaginary,
                        derivative,
                        rhs: r,
                        residual,
                        error,
                        normalized,
                    });
                }
            }
        }
        points.push(ResidualPoint {
            time: snap.time,
            components,
        });
    }
    Ok(LiouvilleReport {
        points,
        fraction_within_3: within as f64 / total as f64,
        max_abs_normalized: max_abs,
        max_trace,
        max_hermiticity: max_herm,
    })
}
