//! Truncated Fock-space numerics: density matrices, quadrature distributions,
//! Wigner functions and the pure-loss channel.
//!
//! Quadratures follow `X = √2·Re(â)`, `P = √2·Im(â)`, so the vacuum variance is
//! 1/2 and `X_φ = (â e^{iφ} + â† e^{-iφ})/√2`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};

/// Default Hilbert-space dimension: photon numbers 0 through 5.
pub const DEFAULT_DIM: usize = 6;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// A physical state in the truncated Fock basis `|0⟩ … |dim-1⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixRecord", into = "DensityMatrixRecord")]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

/// Wire form: `{dim, re, im}` with row-major element arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityMatrixRecord {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl TryFrom<DensityMatrixRecord> for DensityMatrix {
    type Error = Error;

    fn try_from(rec: DensityMatrixRecord) -> Result<Self> {
        let n = rec.dim;
        if rec.re.len() != n * n || rec.im.len() != n * n {
            return Err(Error::DimensionMismatch {
                left: n * n,
                right: rec.re.len().min(rec.im.len()),
            });
        }
        let matrix = DMatrix::from_fn(n, n, |r, c| C64::new(rec.re[r * n + c], rec.im[r * n + c]));
        DensityMatrix::new(matrix)
    }
}

impl From<DensityMatrix> for DensityMatrixRecord {
    fn from(rho: DensityMatrix) -> Self {
        let n = rho.dim();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                re.push(rho.matrix[(r, c)].re);
                im.push(rho.matrix[(r, c)].im);
            }
        }
        DensityMatrixRecord { dim: n, re, im }
    }
}

/// Outcome of projecting a Hermitian matrix onto the set of density matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipReport {
    /// Most negative eigenvalue before clipping (0 when none were negative).
    pub min_eigenvalue: f64,
    /// Total weight removed by clipping negative eigenvalues.
    pub clipped_weight: f64,
}

impl DensityMatrix {
    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self { matrix };
        rho.validate()?;
        Ok(rho)
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::fock(dim, 0)
    }

    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::InvalidDimension {
                dim,
                reason: "Fock level exceeds cutoff",
            });
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(n, n)] = C64::new(1.0, 0.0);
        Ok(Self { matrix: m })
    }

    /// Diagonal state with the given photon-number distribution.
    pub fn from_diagonal(probs: &[f64]) -> Result<Self> {
        check_dim(probs.len())?;
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            probs.len(),
            probs.iter().map(|&p| C64::new(p, 0.0)),
        ));
        Self::new(m)
    }

    /// Pure state `|ψ⟩⟨ψ|`; amplitudes are normalized first.
    pub fn from_amplitudes(amps: &[C64]) -> Result<Self> {
        check_dim(amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let n = amps.len();
        let m = DMatrix::from_fn(n, n, |r, c| amps[r] * amps[c].conj() / (norm * norm));
        Self::new(m)
    }

    /// Projects a (nearly) Hermitian matrix onto a valid state: Hermitian part,
    /// negative eigenvalues floored at zero, trace renormalized to one.
    pub fn clip_to_physical(matrix: &DMatrix<C64>) -> Result<(Self, ClipReport)> {
        let n = matrix.nrows();
        check_dim(n)?;
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: matrix.ncols(),
            });
        }
        let herm = (matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let clipped_weight: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
        let kept: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = kept.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("no positive spectral weight".into()));
        }
        let mut out = DMatrix::<C64>::zeros(n, n);
        for (k, &l) in kept.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            out += (v * v.adjoint()) * C64::new(l / total, 0.0);
        }
        // restore exact Hermiticity after the outer products
        let out = (&out + out.adjoint()) * C64::new(0.5, 0.0);
        Ok((
            Self { matrix: out },
            ClipReport {
                min_eigenvalue: min_eigenvalue.min(0.0),
                clipped_weight,
            },
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        let n = m.nrows();
        check_dim(n)?;
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: m.ncols(),
            });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite element".into()));
        }
        let mut herm: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                herm = herm.max((m[(r, c)] - m[(c, r)].conj()).norm());
            }
        }
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.2e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite (eigenvalue {min_eig:.2e})"
            )));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Element `ρ_mn = ⟨m|ρ|n⟩`.
    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.matrix[(m, n)]
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Photon-number distribution `p(n) = ρ_nn`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.matrix[(k, k)].re).collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.diagonal().iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// `tr(ρ·op)`.
    pub fn expectation(&self, op: &DMatrix<C64>) -> C64 {
        (&self.matrix * op).trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Same state embedded in (or truncated to) another cutoff. Truncating
    /// discards the weight above the new cutoff and renormalizes.
    pub fn resized(&self, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let n = self.dim().min(dim);
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&self.matrix.view((0, 0), (n, n)));
        let tr = m.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidState("no weight below new cutoff".into()));
        }
        Self::new(m / C64::new(tr, 0.0))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension {
            dim,
            reason: "need at least two Fock levels",
        })
    } else {
        Ok(())
    }
}

/// Truncated ladder operator with `a[m, m+1] = √(m+1)`.
pub fn annihilation_matrix(dim: usize) -> Result<DMatrix<C64>> {
    check_dim(dim)?;
    let mut a = DMatrix::zeros(dim, dim);
    for m in 0..dim - 1 {
        a[(m, m + 1)] = C64::new(((m + 1) as f64).sqrt(), 0.0);
    }
    Ok(a)
}

/// Normalized oscillator eigenfunctions `ψ_0(x) … ψ_{count-1}(x)` in the
/// convention where `|ψ_0|²` has variance 1/2, by upward recurrence.
pub fn oscillator_eigenfunctions(count: usize, x: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(count);
    if count == 0 {
        return psi;
    }
    psi.push(PI.powf(-0.25) * (-0.5 * x * x).exp());
    if count > 1 {
        psi.push(2f64.sqrt() * x * psi[0]);
    }
    for n in 1..count.saturating_sub(1) {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * psi[n]
            - (n as f64 / (n + 1) as f64).sqrt() * psi[n - 1];
        psi.push(next);
    }
    psi
}

/// Amplitudes `⟨n|x_φ⟩*`, i.e. the vector `v` with `P(x|φ) = v†ρv`.
pub(crate) fn quadrature_eigenvector(dim: usize, phase: f64, x: f64) -> Vec<C64> {
    oscillator_eigenfunctions(dim, x)
        .into_iter()
        .enumerate()
        .map(|(n, psi)| C64::from_polar(psi, -(n as f64) * phase))
        .collect()
}

/// Quadrature distribution `P(x|φ) = Σ ρ_mn ψ_m(x) ψ_n(x) e^{i(m-n)φ}`.
pub fn quadrature_pdf(state: &DensityMatrix, phase: f64, x_grid: &[f64]) -> Vec<f64> {
    let dim = state.dim();
    let rho = state.matrix();
    x_grid
        .iter()
        .map(|&x| {
            let v = quadrature_eigenvector(dim, phase, x);
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..dim {
                let mut row = C64::new(0.0, 0.0);
                for n in 0..dim {
                    row += rho[(m, n)] * v[n];
                }
                acc += v[m].conj() * row;
            }
            acc.re.max(0.0)
        })
        .collect()
}

/// Exact mean and variance of `X_φ` from operator moments (no truncation
/// artifact: `ââ†` is taken as `â†â + 1`).
pub fn quadrature_moments(state: &DensityMatrix, phase: f64) -> (f64, f64) {
    let dim = state.dim();
    let a = annihilation_matrix(dim).expect("valid state has dim >= 2");
    let a2 = &a * &a;
    let n_op = a.adjoint() * &a;
    let mean_a = state.expectation(&a);
    let mean_a2 = state.expectation(&a2);
    let mean_n = state.expectation(&n_op).re;
    let rot = C64::from_polar(1.0, phase);
    let mean = 2f64.sqrt() * (rot * mean_a).re;
    let second = (rot * rot * mean_a2).re + mean_n + 0.5;
    (mean, second - mean * mean)
}

/// Wigner function sampled on a rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// Row-major over `(x, p)`: `values[i * p_axis.len() + j] = W(x_i, p_j)`.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p_axis.len() + j]
    }

    /// Smallest value and its `(x, p)` location.
    pub fn min(&self) -> (f64, f64, f64) {
        let (k, w) = self
            .values
            .iter()
            .cloned()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN));
        let np = self.p_axis.len().max(1);
        (w, self.x_axis[k / np], self.p_axis[k % np])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Integral over `p` at each `x` (trapezoid rule).
    pub fn marginal_x(&self) -> Vec<f64> {
        let np = self.p_axis.len();
        (0..self.x_axis.len())
            .map(|i| crate::numerics::trapezoid(&self.p_axis, &self.values[i * np..(i + 1) * np]))
            .collect()
    }

    /// Integral over the whole grid.
    pub fn total(&self) -> f64 {
        crate::numerics::trapezoid(&self.x_axis, &self.marginal_x())
    }

    /// CSV with header `x,p,w`, one row per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "p", "w"]).map_err(csv_err)?;
        for (i, x) in self.x_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                w.write_record([x.to_string(), p.to_string(), self.at(i, j).to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Generalized Laguerre polynomials `L_0^{(k)}(z) … L_{n_max}^{(k)}(z)`.
fn laguerre_sequence(n_max: usize, k: usize, z: f64) -> Vec<f64> {
    let mut l = Vec::with_capacity(n_max + 1);
    l.push(1.0);
    if n_max >= 1 {
        l.push(1.0 + k as f64 - z);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0 + k as f64 - z) * l[n] - (nf + k as f64) * l[n - 1]) / (nf + 1.0);
        l.push(next);
    }
    l
}

/// Wigner function on the grid `x_axis × p_axis`, normalized so that
/// `∫∫ W dx dp = 1`.
pub fn wigner(state: &DensityMatrix, x_axis: &[f64], p_axis: &[f64]) -> WignerGrid {
    let dim = state.dim();
    let rho = state.matrix();
    // sqrt(n!/m!) prefactors
    let ln_fact: Vec<f64> = (0..dim)
        .scan(0.0, |acc, n| {
            if n > 0 {
                *acc += (n as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    // Laguerre tables per offset k = m - n need n up to dim-1-k
    let mut values = Vec::with_capacity(x_axis.len() * p_axis.len());
    for &x in x_axis {
        for &p in p_axis {
            let r2 = x * x + p * p;
            let gauss = (-r2).exp() / PI;
            let z = C64::new(2f64.sqrt() * x, -2f64.sqrt() * p);
            let mut w = 0.0;
            let mut zpow = C64::new(1.0, 0.0);
            for k in 0..dim {
                let lag = laguerre_sequence(dim - 1 - k, k, 2.0 * r2);
                for n in 0..dim - k {
                    let m = n + k;
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    let pref = sign * (0.5 * (ln_fact[n] - ln_fact[m])).exp() * lag[n];
                    let term = rho[(m, n)] * zpow * pref;
                    w += if k == 0 { term.re } else { 2.0 * term.re };
                }
                zpow *= z;
            }
            values.push(w * gauss);
        }
    }
    WignerGrid {
        x_axis: x_axis.to_vec(),
        p_axis: p_axis.to_vec(),
        values,
    }
}

/// `W(0,0) = (1/π) Σ (-1)^n ρ_nn`.
pub fn wigner_at_origin(state: &DensityMatrix) -> f64 {
    state
        .diagonal()
        .iter()
        .enumerate()
        .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
        .sum::<f64>()
        / PI
}

fn binomial_weights(n: usize, transmission: f64) -> Vec<f64> {
    // B(n, k) = C(n,k) ζ^{n-k} (1-ζ)^k, k photons lost
    let mut w = Vec::with_capacity(n + 1);
    let mut c = 1.0;
    for k in 0..=n {
        if k > 0 {
            c *= (n - k + 1) as f64 / k as f64;
        }
        w.push(c * transmission.powi((n - k) as i32) * (1.0 - transmission).powi(k as i32));
    }
    w
}

/// Pure-loss channel: beamsplitter of power transmission `transmission`
/// against vacuum.
pub fn apply_loss(state: &DensityMatrix, transmission: f64) -> Result<DensityMatrix> {
    check_unit_interval("transmission", transmission)?;
    let dim = state.dim();
    let rho = state.matrix();
    let weights: Vec<Vec<f64>> = (0..dim).map(|n| binomial_weights(n, transmission)).collect();
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            let z = rho[(m, n)];
            if z == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..=m.min(n) {
                out[(m - k, n - k)] += z * (weights[m][k] * weights[n][k]).sqrt();
            }
        }
    }
    Ok(DensityMatrix { matrix: out })
}

/// Heisenberg-picture (adjoint) pure-loss map applied to an observable or
/// POVM element: `Σ_k E_k† O E_k`.
pub fn apply_loss_adjoint(op: &DMatrix<C64>, transmission: f64) -> Result<DMatrix<C64>> {
    check_unit_interval("transmission", transmission)?;
    let dim = op.nrows();
    let weights: Vec<Vec<f64>> = (0..dim).map(|n| binomial_weights(n, transmission)).collect();
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..=m.min(n) {
                acc += op[(m - k, n - k)] * (weights[m][k] * weights[n][k]).sqrt();
            }
            out[(m, n)] = acc;
        }
    }
    Ok(out)
}

/// Normalized zero-delay autocorrelation `Σ n(n-1)p_n / (Σ n p_n)²`.
pub fn g2_from_state(state: &DensityMatrix) -> Result<f64> {
    let p = state.diagonal();
    let mean: f64 = p.iter().enumerate().map(|(n, q)| n as f64 * q).sum();
    if mean <= 1e-15 {
        return Err(Error::UndefinedStatistic("g2 of a state with zero mean photon number"));
    }
    let fact2: f64 = p
        .iter()
        .enumerate()
        .map(|(n, q)| (n as f64) * (n as f64 - 1.0) * q)
        .sum();
    Ok((fact2 / (mean * mean)).max(0.0))
}

fn hermitian_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let n = m.nrows();
    let mut out = DMatrix::<C64>::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.adjoint()) * C64::new(l.sqrt(), 0.0);
    }
    out
}

/// Uhlmann fidelity `(tr √(√a b √a))²`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let sa = hermitian_sqrt(a.matrix());
    let inner = &sa * b.matrix() * &sa;
    let herm = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
    let root_trace: f64 = herm
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{linspace, trapezoid};
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn annihilation_entries() {
        let a = annihilation_matrix(2).unwrap();
        assert_eq!(a[(0, 1)], c(1.0));
        assert_eq!(a[(0, 0)], c(0.0));
        assert_eq!(a[(1, 0)], c(0.0));
        let a3 = annihilation_matrix(3).unwrap();
        assert_abs_diff_eq!(a3[(1, 2)].re, 2f64.sqrt(), epsilon = 1e-15);
        let n = a3.adjoint() * &a3;
        for k in 0..3 {
            assert_abs_diff_eq!(n[(k, k)].re, k as f64, epsilon = 1e-14);
        }
        assert!(matches!(annihilation_matrix(1), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn validation_rejects_unphysical_matrices() {
        let mut m = DMatrix::<C64>::identity(3, 3) * c(0.5);
        assert!(DensityMatrix::new(m.clone()).is_err());
        m[(2, 2)] = c(0.0);
        assert!(DensityMatrix::new(m.clone()).is_ok());
        m[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(m.clone()).is_err());
        let neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.2), c(-0.2)]));
        assert!(DensityMatrix::new(neg.clone()).is_err());
        let (fixed, report) = DensityMatrix::clip_to_physical(&neg).unwrap();
        assert_abs_diff_eq!(fixed.get(0, 0).re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.clipped_weight, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn eigenfunctions_match_closed_forms() {
        let x = 0.7;
        let psi = oscillator_eigenfunctions(3, x);
        let g = PI.powf(-0.25) * (-x * x / 2.0).exp();
        assert_abs_diff_eq!(psi[0], g, epsilon = 1e-15);
        assert_abs_diff_eq!(psi[1], 2f64.sqrt() * x * g, epsilon = 1e-15);
        assert_abs_diff_eq!(psi[2], (2.0 * x * x - 1.0) / 2f64.sqrt() * g, epsilon = 1e-15);
    }

    #[test]
    fn vacuum_and_single_photon_pdfs() {
        let xs = linspace(-6.0, 6.0, 2401);
        let vac = DensityMatrix::vacuum(DEFAULT_DIM).unwrap();
        let one = DensityMatrix::fock(DEFAULT_DIM, 1).unwrap();
        for phase in [0.0, 0.9, 2.5] {
            let pv = quadrature_pdf(&vac, phase, &xs);
            let p1 = quadrature_pdf(&one, phase, &xs);
            assert_abs_diff_eq!(trapezoid(&xs, &pv), 1.0, epsilon = 1e-6);
            let var: Vec<f64> = xs.iter().zip(&pv).map(|(x, p)| x * x * p).collect();
            assert_abs_diff_eq!(trapezoid(&xs, &var), 0.5, epsilon = 1e-6);
            for (x, p) in xs.iter().zip(&p1) {
                let exact = 2.0 / PI.sqrt() * x * x * (-x * x).exp();
                assert_abs_diff_eq!(*p, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mixture_pdf_is_linear() {
        let xs = linspace(-4.0, 4.0, 81);
        let mix = DensityMatrix::from_diagonal(&[0.4, 0.6]).unwrap();
        let p0 = quadrature_pdf(&DensityMatrix::fock(2, 0).unwrap(), 0.3, &xs);
        let p1 = quadrature_pdf(&DensityMatrix::fock(2, 1).unwrap(), 0.3, &xs);
        let pm = quadrature_pdf(&mix, 0.3, &xs);
        for k in 0..xs.len() {
            assert_abs_diff_eq!(pm[k], 0.4 * p0[k] + 0.6 * p1[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn wigner_origin_values() {
        let grid = [0.0];
        let vac = DensityMatrix::vacuum(DEFAULT_DIM).unwrap();
        assert_abs_diff_eq!(wigner(&vac, &grid, &grid).at(0, 0), 1.0 / PI, epsilon = 1e-14);
        let one = DensityMatrix::fock(DEFAULT_DIM, 1).unwrap();
        assert_abs_diff_eq!(wigner(&one, &grid, &grid).at(0, 0), -1.0 / PI, epsilon = 1e-14);
        let reference_like = DensityMatrix::from_diagonal(&[0.39, 0.60, 0.01]).unwrap();
        let w0 = wigner(&reference_like, &grid, &grid).at(0, 0);
        assert_abs_diff_eq!(w0, (0.39 - 0.60 + 0.01) / PI, epsilon = 1e-14);
        assert_abs_diff_eq!(w0, -0.0637, epsilon = 1e-4);
        assert_abs_diff_eq!(w0, wigner_at_origin(&reference_like), epsilon = 1e-14);
    }

    #[test]
    fn wigner_of_fock_states_matches_laguerre_closed_form() {
        // W_n(x,p) = (-1)^n/π · L_n(2r²) · e^{-r²}
        let xs = [0.3, -1.1];
        let ps = [0.8];
        let two = DensityMatrix::fock(DEFAULT_DIM, 2).unwrap();
        let w = wigner(&two, &xs, &ps);
        for (i, &x) in xs.iter().enumerate() {
            let z: f64 = 2.0 * (x * x + ps[0] * ps[0]);
            let l2 = 1.0 - 2.0 * z + z * z / 2.0;
            assert_abs_diff_eq!(w.at(i, 0), l2 * (-z / 2.0).exp() / PI, epsilon = 1e-13);
        }
    }

    #[test]
    fn loss_examples() {
        let one = DensityMatrix::fock(DEFAULT_DIM, 1).unwrap();
        let lossy = apply_loss(&one, 0.6).unwrap();
        assert_abs_diff_eq!(lossy.get(0, 0).re, 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(lossy.get(1, 1).re, 0.6, epsilon = 1e-14);
        let two = DensityMatrix::fock(DEFAULT_DIM, 2).unwrap();
        let half = apply_loss(&two, 0.5).unwrap();
        let d = half.diagonal();
        assert_abs_diff_eq!(d[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[2], 0.25, epsilon = 1e-14);
        let same = apply_loss(&two, 1.0).unwrap();
        assert_eq!(same, two);
        assert!(matches!(apply_loss(&two, 1.2), Err(Error::Domain { .. })));
        assert!(apply_loss(&two, -0.1).is_err());
    }

    #[test]
    fn g2_examples() {
        let one = DensityMatrix::fock(DEFAULT_DIM, 1).unwrap();
        assert_abs_diff_eq!(g2_from_state(&one).unwrap(), 0.0, epsilon = 1e-15);
        let measured = DensityMatrix::from_diagonal(&[0.395, 0.60, 0.005]).unwrap();
        let g2 = g2_from_state(&measured).unwrap();
        assert_abs_diff_eq!(g2, 2.0 * 0.005 / (0.61 * 0.61), epsilon = 1e-12);
        assert_abs_diff_eq!(g2, 0.0269, epsilon = 1e-4);
        // Poisson(0.5) truncated at n <= 5, renormalized
        let mu: f64 = 0.5;
        let mut pois: Vec<f64> = (0..6)
            .map(|n| (-mu).exp() * mu.powi(n) / (1..=n).map(|k| k as f64).product::<f64>())
            .collect();
        let s: f64 = pois.iter().sum();
        pois.iter_mut().for_each(|p| *p /= s);
        let coh = DensityMatrix::from_diagonal(&pois).unwrap();
        assert_abs_diff_eq!(g2_from_state(&coh).unwrap(), 1.0, epsilon = 0.01);
        let vac = DensityMatrix::vacuum(3).unwrap();
        assert!(matches!(g2_from_state(&vac), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn fidelity_examples() {
        let vac = DensityMatrix::vacuum(DEFAULT_DIM).unwrap();
        let one = DensityMatrix::fock(DEFAULT_DIM, 1).unwrap();
        assert_abs_diff_eq!(fidelity(&vac, &vac).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&vac, &one).unwrap(), 0.0, epsilon = 1e-12);
        let mix = DensityMatrix::from_diagonal(&[0.4, 0.6, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(fidelity(&one, &mix).unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&mix, &one).unwrap(), 0.6, epsilon = 1e-12);
        let small = DensityMatrix::vacuum(3).unwrap();
        assert!(matches!(fidelity(&vac, &small), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_roundtrip_uses_dim_re_im() {
        let rho = DensityMatrix::from_amplitudes(&[c(0.6), C64::new(0.0, 0.8)]).unwrap();
        let json = serde_json::to_value(&rho).unwrap();
        assert_eq!(json["dim"], 2);
        assert_eq!(json["re"].as_array().unwrap().len(), 4);
        let back: DensityMatrix = serde_json::from_value(json).unwrap();
        assert!((back.matrix() - rho.matrix()).norm() < 1e-15);
        let bad = serde_json::json!({"dim": 2, "re": [1.0, 0.0, 0.0, 1.0], "im": [0.0, 0.0, 0.0, 0.0]});
        assert!(serde_json::from_value::<DensityMatrix>(bad).is_err());
    }

    #[test]
    fn wigner_csv_has_header() {
        let vac = DensityMatrix::vacuum(2).unwrap();
        let grid = wigner(&vac, &[-1.0, 0.0, 1.0], &[0.0, 1.0]);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,p,w");
        assert_eq!(lines.len(), 7);
    }
}
