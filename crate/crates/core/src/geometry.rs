//! Complex linear algebra on the state space and the Fubini–Study quantities
//! built from it.
//!
//! The metric is normalised so that the variance of a pure state equals the
//! squared gradient of its expectation function, and so that expectation
//! functions satisfy `∇²A = (n+1)(Ā − A)`. On CP¹ this makes phase space the
//! unit 2-sphere.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const HERMITIAN_TOL: f64 = 1e-12;
const DENSITY_TOL: f64 = 1e-10;
const DEGENERACY_TOL: f64 = 1e-9;

/// Self-adjoint operator on the `N = n+1` dimensional Hilbert space: the
/// Hamiltonian, or any linear observable.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: DMatrix<C64>,
}

impl HermitianOperator {
    /// Accepts a matrix whose deviation from its adjoint is below `1e-12`
    /// relative to the largest entry. The stored matrix is the Hermitian part,
    /// so downstream identities hold to rounding.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::param("matrix", "must be non-empty"));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::param("matrix", "entries must be finite"));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let adjoint = matrix.adjoint();
        let deviation = (&matrix - &adjoint).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let matrix = (&matrix + &adjoint).scale(0.5);
        Ok(Self { matrix })
    }

    pub fn from_diagonal(levels: &[f64]) -> Self {
        let n = levels.len();
        let mut matrix = DMatrix::zeros(n, n);
        for (k, &e) in levels.iter().enumerate() {
            matrix[(k, k)] = C64::new(e, 0.0);
        }
        Self { matrix }
    }

    /// Row-major complex entries.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    /// Eigenvalues ascending, paired with the unitary whose columns are the
    /// eigenvectors.
    pub fn spectrum(&self) -> Spectrum {
        let eig = self.matrix.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let levels: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |i, j| eig.eigenvectors[(i, order[j])]);
        Spectrum { levels, vectors }
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }
}

/// Sorted energy levels with the diagonalising unitary.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    levels: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl Spectrum {
    /// Spectrum of a diagonal Hamiltonian; the levels are sorted and the
    /// eigenvector matrix is the matching permutation.
    pub fn from_levels(levels: &[f64]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::param("spectrum", "must contain at least one level"));
        }
        if levels.iter().any(|e| !e.is_finite()) {
            return Err(Error::param("spectrum", "levels must be finite"));
        }
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        let n = levels.len();
        let vectors = DMatrix::from_fn(n, n, |i, j| {
            if order[j] == i {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Ok(Self {
            levels: order.iter().map(|&k| levels[k]).collect(),
            vectors,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn vectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.levels.iter().sum::<f64>() / self.dim() as f64
    }

    /// Two levels count as degenerate when they differ by less than
    /// `1e-9 · max(1, max|E|)`.
    pub fn tolerance(&self) -> f64 {
        let scale = self.levels.iter().map(|e| e.abs()).fold(1.0, f64::max);
        DEGENERACY_TOL * scale
    }

    pub fn is_degenerate(&self) -> bool {
        let tol = self.tolerance();
        self.levels.windows(2).any(|w| w[1] - w[0] < tol)
    }

    /// Rebuilds `U diag(E) U†`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.levels.iter().map(|&e| C64::new(e, 0.0)),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }
}

/// Unit vector representing a point of CP^n.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: DVector<C64>,
}

impl PureState {
    /// Normalises the given amplitudes.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(amps))
    }

    pub fn from_vector(amps: DVector<C64>) -> Result<Self> {
        let norm = amps.norm();
        if amps.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self { amps: amps.unscale(norm) })
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Computational basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: k + 1,
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[k] = C64::new(1.0, 0.0);
        Self::new(amps)
    }

    /// Spin-1/2 state at polar angle `theta` from the upper level and azimuth `phi`.
    pub fn spin_half(theta: f64, phi: f64) -> Self {
        let amps = vec![
            C64::new((theta / 2.0).cos(), 0.0),
            C64::from_polar((theta / 2.0).sin(), phi),
        ];
        Self::new(amps).expect("unit vector")
    }

    pub(crate) fn from_normalized_unchecked(amps: DVector<C64>) -> Self {
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// `e^{iα} ψ`.
    pub fn with_phase(&self, alpha: f64) -> Self {
        Self {
            amps: self.amps.map(|z| z * C64::from_polar(1.0, alpha)),
        }
    }

    /// Display gauge: first nonzero amplitude real and nonnegative.
    pub fn canonical_gauge(&self) -> Self {
        match self.amps.iter().find(|z| z.norm() > 0.0) {
            Some(z) => {
                let phase = z.conj() / z.norm();
                Self {
                    amps: self.amps.map(|a| a * phase),
                }
            }
            None => self.clone(),
        }
    }

    /// Writes `U† ψ`: amplitudes in the eigenbasis of a spectrum.
    pub fn in_basis(&self, vectors: &DMatrix<C64>) -> DVector<C64> {
        vectors.adjoint() * &self.amps
    }
}

/// First moment of the projector over an ensemble of pure states.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity, each to `1e-10`.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        let herm = (&matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian ({herm:e})")));
        }
        let trace: C64 = matrix.diagonal().iter().sum();
        if (trace - C64::new(1.0, 0.0)).norm() > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("trace {trace} differs from 1")));
        }
        let herm_part = (&matrix + matrix.adjoint()).scale(0.5);
        let min_eig = herm_part
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_unchecked(matrix: DMatrix<C64>) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim).unscale(dim as f64),
        }
    }

    /// Conventional thermal state `e^{−βH} / tr e^{−βH}`, kept as a reference
    /// next to the phase-space ensemble.
    pub fn von_neumann(h: &HermitianOperator, beta: f64) -> Self {
        let spec = h.spectrum();
        let e0 = spec.min();
        let weights: Vec<f64> = spec.levels().iter().map(|e| (-beta * (e - e0)).exp()).collect();
        let total: f64 = weights.iter().sum();
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(
            spec.dim(),
            weights.iter().map(|w| C64::new(w / total, 0.0)),
        ));
        Self {
            matrix: spec.vectors() * diag * spec.vectors().adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diagonal().iter().sum()
    }

    /// `tr(Aρ)`.
    pub fn expectation(&self, a: &HermitianOperator) -> Result<f64> {
        a.check_dim(self.dim())?;
        Ok((a.matrix() * &self.matrix).trace().re)
    }
}

/// Second moment `R^{αγ}_{βδ} = E[Π^α_β Π^γ_δ]` stored as `[α][β][γ][δ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondMoment {
    dim: usize,
    data: Vec<C64>,
}

impl SecondMoment {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim.pow(4)],
        }
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), dim.pow(4));
        Self { dim, data }
    }

    /// `Π ⊗ Π` for a single pure state.
    pub fn from_state(psi: &PureState) -> Self {
        let p = projector(psi);
        let n = psi.dim();
        let mut out = Self::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        out.data[idx4(n, a, b, c, d)] = p.matrix[(a, b)] * p.matrix[(c, d)];
                    }
                }
            }
        }
        out
    }

    /// Second moment of the uniform (Fubini–Study) ensemble:
    /// `(δ^α_β δ^γ_δ + δ^α_δ δ^γ_β) / (N(N+1))`.
    pub fn uniform(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        let norm = 1.0 / (dim * (dim + 1)) as f64;
        for a in 0..dim {
            for c in 0..dim {
                out.data[idx4(dim, a, a, c, c)] += norm;
                out.data[idx4(dim, a, c, c, a)] += norm;
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> C64 {
        self.data[idx4(self.dim, a, b, c, d)]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// `Σ_γ R^{αγ}_{βγ}`.
    pub fn partial_trace(&self) -> DMatrix<C64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |a, b| (0..n).map(|c| self.get(a, b, c, c)).sum())
    }

    /// Largest violation of `R^{αγ}_{βδ} = R^{γα}_{δβ}`.
    pub fn pair_swap_deviation(&self) -> f64 {
        self.max_over(|s, a, b, c, d| (s.get(a, b, c, d) - s.get(c, d, a, b)).norm())
    }

    /// Largest violation of `R^{αγ}_{βδ} = conj(R^{βδ}_{αγ})`.
    pub fn pairing_hermiticity_deviation(&self) -> f64 {
        self.max_over(|s, a, b, c, d| (s.get(a, b, c, d) - s.get(b, a, d, c).conj()).norm())
    }

    /// Entrywise maximum modulus of the difference.
    pub fn max_abs_diff(&self, other: &SecondMoment) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Change of basis: `R ↦ (U⊗U) R (U⊗U)†` applied pairwise.
    pub fn rotated(&self, u: &DMatrix<C64>) -> Self {
        let n = self.dim;
        // Contract one index at a time to keep this O(N^5).
        let mut cur = self.data.clone();
        let mut next = vec![C64::new(0.0, 0.0); cur.len()];
        for slot in 0..4 {
            let conj = slot % 2 == 1;
            for (flat, out) in next.iter_mut().enumerate() {
                let mut ix = unflatten(n, flat);
                let target = ix[slot];
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    ix[slot] = k;
                    let coef = if conj { u[(target, k)].conj() } else { u[(target, k)] };
                    acc += coef * cur[idx4(n, ix[0], ix[1], ix[2], ix[3])];
                }
                *out = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Self { dim: n, data: cur }
    }

    fn max_over(&self, f: impl Fn(&Self, usize, usize, usize, usize) -> f64) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        worst = worst.max(f(self, a, b, c, d));
                    }
                }
            }
        }
        worst
    }
}

#[inline]
pub(crate) fn idx4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

fn unflatten(n: usize, flat: usize) -> [usize; 4] {
    [flat / (n * n * n), (flat / (n * n)) % n, (flat / n) % n, flat % n]
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(a: &HermitianOperator, psi: &PureState) -> Result<f64> {
    a.check_dim(psi.dim())?;
    Ok(psi.amps.dotc(&(a.matrix() * &psi.amps)).re)
}

/// `⟨A²⟩ − ⟨A⟩²`, clamped at zero.
pub fn variance(a: &HermitianOperator, psi: &PureState) -> Result<f64> {
    a.check_dim(psi.dim())?;
    let apsi = a.matrix() * &psi.amps;
    let mean = psi.amps.dotc(&apsi).re;
    Ok((apsi.norm_squared() - mean * mean).max(0.0))
}

/// `tr A / N`, the mean of the eigenvalues.
pub fn uniform_average(a: &HermitianOperator) -> f64 {
    a.trace() / a.dim() as f64
}

/// `Π = ψψ†`.
pub fn projector(psi: &PureState) -> DensityMatrix {
    DensityMatrix::from_unchecked(&psi.amps * psi.amps.adjoint())
}

/// Draws a state from the unitarily invariant measure: independent standard
/// complex Gaussian amplitudes, normalised.
pub fn sample_uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<PureState> {
    if dim < 2 {
        return Err(Error::param("dim", "uniform sampling needs N >= 2"));
    }
    loop {
        let amps: Vec<C64> = (0..dim)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        if let Ok(state) = PureState::new(amps) {
            return Ok(state);
        }
    }
}

/// Terms of the conditional variance formula for a two-stage law: pick a
/// state uniformly from the ensemble, then measure `A` in it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceDecomposition {
    pub total: f64,
    pub mean_conditional: f64,
    pub variance_of_conditional: f64,
}

pub fn variance_decomposition(ensemble: &[PureState], a: &HermitianOperator) -> Result<VarianceDecomposition> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let m = ensemble.len() as f64;
    let mut mean = 0.0;
    let mut mean_sq = 0.0;
    let mut mean_var = 0.0;
    for psi in ensemble {
        a.check_dim(psi.dim())?;
        let apsi = a.matrix() * &psi.amps;
        let e = psi.amps.dotc(&apsi).re;
        let second = apsi.norm_squared();
        mean += e;
        mean_sq += second;
        mean_var += second - e * e;
    }
    mean /= m;
    mean_sq /= m;
    mean_var /= m;
    let spread = ensemble
        .iter()
        .map(|psi| {
            let e = psi.amps.dotc(&(a.matrix() * &psi.amps)).re - mean;
            e * e
        })
        .sum::<f64>()
        / m;
    Ok(VarianceDecomposition {
        total: mean_sq - mean * mean,
        mean_conditional: mean_var,
        variance_of_conditional: spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn pauli_z() -> HermitianOperator {
        HermitianOperator::from_diagonal(&[-1.0, 1.0])
    }

    fn random_hermitian(n: usize, seed: u64) -> HermitianOperator {
        let mut rng = stream(seed, 0);
        let raw = DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        HermitianOperator::new((&raw + raw.adjoint()).scale(0.5)).unwrap()
    }

    #[test]
    fn expectation_examples() {
        let z = pauli_z();
        assert_eq!(expectation(&z, &PureState::basis(2, 0).unwrap()).unwrap(), -1.0);
        let plus = PureState::from_real(&[1.0, 1.0]).unwrap();
        assert!(expectation(&z, &plus).unwrap().abs() < 1e-15);
    }

    #[test]
    fn latitude_expectation_and_variance() {
        let h = 0.7;
        let op = HermitianOperator::from_diagonal(&[h, -h]);
        for &theta in &[0.3, 1.0, PI / 2.0, 2.5] {
            let psi = PureState::spin_half(theta, 0.4);
            assert!((expectation(&op, &psi).unwrap() - h * theta.cos()).abs() < 1e-14);
            let v = h * h * theta.sin().powi(2);
            assert!((variance(&op, &psi).unwrap() - v).abs() < 1e-14);
        }
    }

    #[test]
    fn variance_examples() {
        let z = pauli_z();
        assert!(variance(&z, &PureState::basis(2, 1).unwrap()).unwrap().abs() < 1e-15);
        let plus = PureState::from_real(&[1.0, 1.0]).unwrap();
        assert!((variance(&z, &plus).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let z = pauli_z();
        let psi = PureState::basis(3, 0).unwrap();
        assert!(matches!(expectation(&z, &psi), Err(Error::DimensionMismatch { .. })));
        assert!(variance(&z, &psi).is_err());
    }

    #[test]
    fn uniform_average_examples() {
        assert_eq!(uniform_average(&pauli_z()), 0.0);
        assert_eq!(uniform_average(&HermitianOperator::from_diagonal(&[-1.0, 0.0, 1.0])), 0.0);
        assert_eq!(uniform_average(&HermitianOperator::from_diagonal(&[0.0, 1.0, 2.0, 3.0])), 1.5);
    }

    #[test]
    fn projector_examples() {
        let p = projector(&PureState::basis(2, 0).unwrap());
        assert_eq!(p.matrix()[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(p.matrix()[(1, 1)], C64::new(0.0, 0.0));
        let plus = projector(&PureState::from_real(&[1.0, 1.0]).unwrap());
        for z in plus.matrix().iter() {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let psi = sample_uniform(4, &mut stream(3, 0)).unwrap();
        let p = projector(&psi);
        assert!((p.matrix() * p.matrix() - p.matrix()).norm() < 1e-12);
        assert!((p.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn exported_quantities_are_gauge_invariant() {
        let a = random_hermitian(4, 11);
        let psi = sample_uniform(4, &mut stream(12, 0)).unwrap();
        for alpha in [PI / 3.0, PI] {
            let rotated = psi.with_phase(alpha);
            assert!((expectation(&a, &psi).unwrap() - expectation(&a, &rotated).unwrap()).abs() < 1e-14);
            assert!((variance(&a, &psi).unwrap() - variance(&a, &rotated).unwrap()).abs() < 1e-14);
            assert!((projector(&psi).matrix() - projector(&rotated).matrix()).norm() < 1e-15);
            let r1 = SecondMoment::from_state(&psi);
            let r2 = SecondMoment::from_state(&rotated);
            assert!(r1.max_abs_diff(&r2) < 1e-15);
        }
        // Exact negation is sign-symmetric in floating point, so the phase π
        // applied as a negation leaves everything bit-identical.
        let neg = PureState::from_normalized_unchecked(-psi.amplitudes().clone());
        assert_eq!(SecondMoment::from_state(&neg), SecondMoment::from_state(&psi));
        assert_eq!(variance(&a, &neg).unwrap(), variance(&a, &psi).unwrap());
        assert_eq!(projector(&neg), projector(&psi));
        assert_eq!(expectation(&a, &neg).unwrap(), expectation(&a, &psi).unwrap());
    }

    #[test]
    fn canonical_gauge_makes_first_amplitude_real() {
        let psi = PureState::new(vec![C64::new(0.0, 0.0), C64::new(0.0, 2.0), C64::new(1.0, 1.0)]).unwrap();
        let g = psi.canonical_gauge();
        assert_eq!(g.amplitudes()[0], C64::new(0.0, 0.0));
        assert!(g.amplitudes()[1].im.abs() < 1e-15 && g.amplitudes()[1].re > 0.0);
        assert!((projector(&g).matrix() - projector(&psi).matrix()).norm() < 1e-15);
    }

    #[test]
    fn zero_vector_rejected() {
        assert_eq!(PureState::from_real(&[0.0, 0.0]), Err(Error::ZeroVector));
        assert!(sample_uniform(1, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)]);
        assert!(matches!(HermitianOperator::new(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eigendecomposition_reconstructs() {
        for seed in 0..5 {
            let a = random_hermitian(5, seed);
            let spec = a.spectrum();
            assert!(spec.levels().windows(2).all(|w| w[0] <= w[1]));
            let scale = a.matrix().norm();
            assert!((spec.reconstruct() - a.matrix()).norm() < 1e-10 * scale.max(1.0));
            let u = spec.vectors();
            assert!((u.adjoint() * u - DMatrix::<C64>::identity(5, 5)).norm() < 1e-10);
        }
    }

    #[test]
    fn degeneracy_flag_uses_relative_tolerance() {
        assert!(!Spectrum::from_levels(&[-1.0, 1.0]).unwrap().is_degenerate());
        assert!(Spectrum::from_levels(&[0.0, 5e-10, 1.0]).unwrap().is_degenerate());
        assert!(!Spectrum::from_levels(&[0.0, 5e-7, 1.0]).unwrap().is_degenerate());
        assert!(Spectrum::from_levels(&[0.0, 5e-7, 1e3]).unwrap().is_degenerate());
        let s = Spectrum::from_levels(&[2.0, -1.0, 0.5]).unwrap();
        assert_eq!(s.levels(), &[-1.0, 0.5, 2.0]);
        assert_eq!(s.reconstruct(), HermitianOperator::from_diagonal(&[2.0, -1.0, 0.5]).matrix().clone());
    }

    #[test]
    fn variance_decomposition_examples() {
        let z = pauli_z();
        let ground = PureState::basis(2, 0).unwrap();
        let d = variance_decomposition(&[ground.clone(), ground.clone()], &z).unwrap();
        assert_eq!((d.total, d.mean_conditional, d.variance_of_conditional), (0.0, 0.0, 0.0));

        let generic = PureState::spin_half(1.1, 0.3);
        let d = variance_decomposition(&[generic.clone(), generic.clone(), generic], &z).unwrap();
        assert!(d.variance_of_conditional.abs() < 1e-15);
        assert!((d.total - d.mean_conditional).abs() < 1e-14);

        let excited = PureState::basis(2, 1).unwrap();
        let d = variance_decomposition(&[ground, excited], &z).unwrap();
        assert_eq!((d.total, d.mean_conditional, d.variance_of_conditional), (1.0, 0.0, 1.0));

        assert_eq!(variance_decomposition(&[], &z), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn variance_decomposition_matches_two_stage_sampling() {
        // Sample outcomes of A under "pick a state, then measure" and compare
        // the empirical variance of the outcomes with `total`.
        let a = HermitianOperator::from_diagonal(&[-1.0, 0.5, 2.0]);
        let mut rng = stream(77, 0);
        let states: Vec<PureState> = (0..8).map(|_| sample_uniform(3, &mut rng).unwrap()).collect();
        let d = variance_decomposition(&states, &a).unwrap();
        assert!((d.total - d.mean_conditional - d.variance_of_conditional).abs() < 1e-12);

        let levels = [-1.0, 0.5, 2.0];
        let n = 400_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let psi = &states[rng.random_range(0..states.len())];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut outcome = levels[2];
            for (k, amp) in psi.amplitudes().iter().enumerate() {
                acc += amp.norm_sqr();
                if u < acc {
                    outcome = levels[k];
                    break;
                }
            }
            s1 += outcome;
            s2 += outcome * outcome;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // Standard error of a sample variance for these bounded outcomes is ~3e-3.
        assert!((var - d.total).abs() < 0.02, "{var} vs {}", d.total);
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(DMatrix::identity(2, 2).scale(0.5)).is_ok());
        assert!(DensityMatrix::new(DMatrix::identity(2, 2)).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-0.5, 0.0)]);
        assert!(DensityMatrix::new(m).is_err());
        let vn = DensityMatrix::von_neumann(&pauli_z(), 1.0);
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((vn.matrix()[(0, 0)].re - expected).abs() < 1e-15);
    }

    #[test]
    fn second_moment_invariants_for_a_state() {
        let psi = sample_uniform(3, &mut stream(5, 1)).unwrap();
        let r = SecondMoment::from_state(&psi);
        assert!(r.pair_swap_deviation() < 1e-15);
        assert!(r.pairing_hermiticity_deviation() < 1e-15);
        assert!((r.partial_trace() - projector(&psi).matrix()).norm() < 1e-15);
        let u = SecondMoment::uniform(3);
        assert!((u.partial_trace() - DensityMatrix::maximally_mixed(3).matrix()).norm() < 1e-15);
    }

    #[test]
    fn rotation_of_second_moment_matches_rotated_state() {
        let psi = sample_uniform(3, &mut stream(9, 2)).unwrap();
        let u = random_hermitian(3, 4).spectrum().vectors().clone();
        let rotated_state = PureState::from_vector(&u * psi.amplitudes()).unwrap();
        let lhs = SecondMoment::from_state(&psi).rotated(&u);
        let rhs = SecondMoment::from_state(&rotated_state);
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
        // The uniform moment is unitarily invariant.
        let un = SecondMoment::uniform(3);
        assert!(un.rotated(&u).max_abs_diff(&un) < 1e-14);
    }

    #[test]
    fn uniform_sampling_moments() {
        // Flat-Dirichlet populations: mean 1/N; for N = 2 the population is
        // uniform on [0, 1] with variance 1/12.
        let samples = 1_000_000;
        let mut rng = stream(2024, 0);
        let n = 3;
        let mut mean_proj = DMatrix::<C64>::zeros(n, n);
        let mut pop = [0.0f64; 3];
        let mut pop_sq = [0.0f64; 3];
        let mut r = SecondMoment::zeros(n);
        for _ in 0..samples {
            let psi = sample_uniform(n, &mut rng).unwrap();
            let amps = psi.amplitudes();
            for a in 0..n {
                for b in 0..n {
                    mean_proj[(a, b)] += amps[a] * amps[b].conj();
                }
                let p = amps[a].norm_sqr();
                pop[a] += p;
                pop_sq[a] += p * p;
            }
            for a in 0..n {
                for b in 0..n {
                    let pab = amps[a] * amps[b].conj();
                    for c in 0..n {
                        for d in 0..n {
                            r.data[idx4(n, a, b, c, d)] += pab * amps[c] * amps[d].conj();
                        }
                    }
                }
            }
        }
        let s = samples as f64;
        for k in 0..n {
            let mean = pop[k] / s;
            let var = pop_sq[k] / s - mean * mean;
            let se = (var / s).sqrt();
            assert!((mean - 1.0 / 3.0).abs() < 5.0 * se, "population {k}: {mean}");
        }
        // Entry-wise standard error is at most sqrt(1/N)/sqrt(samples) for |Π_ab| ≤ 1.
        let se_bound = 1.0 / s.sqrt();
        let expected = DensityMatrix::maximally_mixed(n);
        assert!(((mean_proj.unscale(s)) - expected.matrix()).iter().all(|z| z.norm() < 5.0 * se_bound));
        let uni = SecondMoment::uniform(n);
        let mean_r = SecondMoment::from_raw(n, r.data.iter().map(|z| z / s).collect());
        assert!(mean_r.max_abs_diff(&uni) < 5.0 * se_bound);

        let mut rng = stream(2025, 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..samples {
            let psi = sample_uniform(2, &mut rng).unwrap();
            let p = psi.amplitudes()[0].norm_sqr();
            s1 += p;
            s2 += p * p;
        }
        let mean = s1 / s;
        let var = s2 / s - mean * mean;
        // se of the sample variance from the fourth central moment of U(0,1) (1/80).
        let se = ((1.0 / 80.0 - 1.0 / 144.0) / s).sqrt();
        assert!((var - 1.0 / 12.0).abs() < 5.0 * se, "variance {var}");
    }
}
