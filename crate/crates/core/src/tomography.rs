//! State and parameter estimation from homodyne records.
//!
//! The reconstruction works on binned quadrature histograms. Each bin has a
//! POVM element obtained by integrating the quadrature projector over the bin
//! and pulling it back through the adjoint of the detection-loss channel, so
//! the iterated estimate is the state *before* detection.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::fock::{
    apply_loss_adjoint, fidelity, oscillator_eigenfunctions, wigner, DensityMatrix, WignerGrid,
};
use crate::measurement::{QuadratureDataset, SCHEMA};
use crate::numerics::{linspace, trapezoid, trapezoid_weights, GaussLegendre};
use crate::protocol::{quadrature_stats_closed_form, PulseProfile};
use crate::seeding::stream_rng;

/// Normalized complex temporal mode `u(t)` with `∫|u|² dt = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMode {
    profile: PulseProfile,
}

fn energy(profile: &PulseProfile) -> f64 {
    let w: Vec<f64> = profile.values().iter().map(|v| v.norm_sqr()).collect();
    trapezoid(profile.times(), &w)
}

impl TemporalMode {
    /// Normalizes an arbitrary nonzero profile.
    pub fn new(profile: PulseProfile) -> Result<Self> {
        let e = energy(&profile);
        if !(e > 0.0) {
            return Err(Error::InvalidProfile("mode function has zero energy".into()));
        }
        let scale = 1.0 / e.sqrt();
        let values = profile.values().iter().map(|v| v * scale).collect();
        Ok(Self {
            profile: PulseProfile::new(profile.times().to_vec(), values)?,
        })
    }

    pub fn profile(&self) -> &PulseProfile {
        &self.profile
    }

    pub fn norm(&self) -> f64 {
        energy(&self.profile)
    }

    fn value_at(&self, t: f64) -> C64 {
        self.profile.interpolate(t).unwrap_or_default()
    }
}

/// `u(t) = √I(t)·e^{iφ(t)}`, normalized. `phase_profile` holds `φ(t)` in its
/// real part and is interpolated onto the flux grid.
pub fn mode_from_flux(flux: &PulseProfile, phase_profile: Option<&PulseProfile>) -> Result<TemporalMode> {
    if flux.values().iter().any(|v| v.re < 0.0 || v.im != 0.0) {
        return Err(Error::InvalidProfile("flux must be real and nonnegative".into()));
    }
    let values = flux
        .times()
        .iter()
        .zip(flux.values())
        .map(|(&t, v)| {
            let phi = phase_profile
                .map(|p| {
                    p.interpolate(t)
                        .map(|z| z.re)
                        .ok_or_else(|| Error::InvalidProfile(format!("phase profile does not cover t = {t:e} s")))
                })
                .transpose()?
                .unwrap_or(0.0);
            Ok(C64::from_polar(v.re.sqrt(), phi))
        })
        .collect::<Result<Vec<_>>>()?;
    TemporalMode::new(PulseProfile::new(flux.times().to_vec(), values)?)
}

/// Filtered quadrature of a single pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredQuadrature {
    pub value: f64,
    /// Fraction of the mode energy that lies inside the trace span.
    pub mode_coverage: f64,
    pub warning: Option<String>,
}

/// Coverage below which a filtered value carries a warning.
pub const MIN_MODE_COVERAGE: f64 = 0.9;

/// `x = ∫Re(u*(t)s(t))dt / √(∫|u|²dt)` over the trace span, with `u`
/// linearly interpolated onto the trace grid.
///
/// Traces are LO-referenced complex baseband records; a vacuum trace has
/// independent real and imaginary white noise of spectral density 1/2 (see
/// [`vacuum_trace`]), which makes the filtered vacuum variance 1/2 for any
/// unit-norm mode.
pub fn filter_trace(raw_trace: &PulseProfile, mode: &TemporalMode) -> FilteredQuadrature {
    let times = raw_trace.times();
    let u: Vec<C64> = times.iter().map(|&t| mode.value_at(t)).collect();
    let w = trapezoid_weights(times);
    let mut proj = 0.0;
    let mut norm = 0.0;
    for ((s, uk), wk) in raw_trace.values().iter().zip(&u).zip(&w) {
        proj += wk * (uk.conj() * s).re;
        norm += wk * uk.norm_sqr();
    }
    let coverage = covered_energy(mode, raw_trace.start(), raw_trace.end());
    let value = if norm > 0.0 { proj / norm.sqrt() } else { 0.0 };
    let warning = (coverage < MIN_MODE_COVERAGE).then(|| {
        format!(
            "trace covers only {:.1}% of the mode energy",
            100.0 * coverage
        )
    });
    FilteredQuadrature {
        value,
        mode_coverage: coverage,
        warning,
    }
}

fn covered_energy(mode: &TemporalMode, t0: f64, t1: f64) -> f64 {
    let (lo, hi) = (t0.max(mode.profile.start()), t1.min(mode.profile.end()));
    if !(hi > lo) {
        return 0.0;
    }
    let mut times = vec![lo];
    times.extend(mode.profile.times().iter().copied().filter(|&t| t > lo && t < hi));
    times.push(hi);
    let density: Vec<f64> = times.iter().map(|&t| mode.value_at(t).norm_sqr()).collect();
    (trapezoid(&times, &density) / mode.norm()).clamp(0.0, 1.0)
}

/// Vacuum noise on `times`: each component at node `k` is Gaussian with
/// variance `1/(2w_k)`, where `w_k` are the trapezoid weights of the grid.
pub fn vacuum_trace(times: &[f64], seed: u64) -> Result<PulseProfile> {
    let w = trapezoid_weights(times);
    let mut rng = stream_rng(seed, "vacuum-trace", 0);
    let values = w
        .iter()
        .map(|&wk| {
            let sigma = (0.5 / wk).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(sigma * re, sigma * im)
        })
        .collect();
    PulseProfile::new(times.to_vec(), values)
}

/// Mode-matching efficiency `|∫u_lo*(t)u_state(t)dt|²`, evaluated on the
/// state's grid.
pub fn mode_overlap_efficiency(u_state: &TemporalMode, u_lo: &TemporalMode) -> f64 {
    let times = u_state.profile.times();
    let w = trapezoid_weights(times);
    let overlap: C64 = times
        .iter()
        .zip(u_state.profile.values())
        .zip(&w)
        .map(|((&t, us), wk)| u_lo.value_at(t).conj() * us * *wk)
        .sum();
    overlap.norm_sqr().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub fock_cutoff: usize,
    pub iterations: usize,
    pub bin_width: f64,
    pub detection_efficiency: f64,
    /// Bins cover `[-x_range, x_range]`.
    pub x_range: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            fock_cutoff: 5,
            iterations: 500,
            bin_width: 0.1,
            detection_efficiency: 0.722,
            x_range: 6.0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Domain {
                name: "iterations",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if self.fock_cutoff == 0 {
            return Err(Error::InvalidDimension {
                dim: 1,
                reason: "fock_cutoff must be at least 1",
            });
        }
        check_positive("bin_width", self.bin_width)?;
        check_positive("x_range", self.x_range)?;
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::Domain {
                name: "detection_efficiency",
                value: self.detection_efficiency,
                expected: "(0, 1]",
            });
        }
        if self.bin_width > 2.0 * self.x_range {
            return Err(Error::Domain {
                name: "bin_width",
                value: self.bin_width,
                expected: "<= 2·x_range",
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.fock_cutoff + 1
    }

    pub fn n_bins(&self) -> usize {
        (2.0 * self.x_range / self.bin_width).round().max(1.0) as usize
    }

    /// Bin edges; the last bin absorbs any rounding remainder.
    pub fn bin_edges(&self) -> Vec<f64> {
        linspace(-self.x_range, self.x_range, self.n_bins() + 1)
    }

    pub fn bin_index(&self, x: f64) -> Option<usize> {
        if !(x >= -self.x_range && x < self.x_range) {
            return None;
        }
        let n = self.n_bins();
        let k = ((x + self.x_range) / (2.0 * self.x_range) * n as f64) as usize;
        Some(k.min(n - 1))
    }
}

const POVM_NODES: usize = 12;
const POVM_PANEL: f64 = 0.25;

/// Detection-loss-corrected POVM element for the bin `[lo, hi]` at LO phase
/// `phase`: `L†(∫ |x_φ⟩⟨x_φ| dx)`.
pub fn bin_povm(dim: usize, phase: f64, lo: f64, hi: f64, detection_efficiency: f64) -> Result<DMatrix<C64>> {
    if !(hi > lo) {
        return Err(Error::Domain {
            name: "bin width",
            value: hi - lo,
            expected: "> 0",
        });
    }
    let rule = GaussLegendre::new(POVM_NODES);
    let mut real = DMatrix::<f64>::zeros(dim, dim);
    let panels = ((hi - lo) / POVM_PANEL).ceil().max(1.0) as usize;
    let edges = linspace(lo, hi, panels + 1);
    for panel in edges.windows(2) {
        let half = 0.5 * (panel[1] - panel[0]);
        let mid = 0.5 * (panel[1] + panel[0]);
        for (z, w) in rule.nodes.iter().zip(&rule.weights) {
            let psi = oscillator_eigenfunctions(dim, mid + half * z);
            for n in 0..dim {
                for m in 0..dim {
                    real[(n, m)] += w * half * psi[n] * psi[m];
                }
            }
        }
    }
    let proj = DMatrix::from_fn(dim, dim, |n, m| real[(n, m)] * C64::from_polar(1.0, -((n as f64) - (m as f64)) * phase));
    apply_loss_adjoint(&proj, detection_efficiency)
}

/// POVM element of the configured bin containing `bin_center`.
pub fn quadrature_povm(config: &ReconstructionConfig, phase: f64, bin_center: f64) -> Result<DMatrix<C64>> {
    config.validate()?;
    let k = config.bin_index(bin_center).ok_or(Error::Domain {
        name: "bin_center",
        value: bin_center,
        expected: "within [-x_range, x_range)",
    })?;
    let edges = config.bin_edges();
    bin_povm(config.dim(), phase, edges[k], edges[k + 1], config.detection_efficiency)
}

/// Output of [`maxlik_reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub state: DensityMatrix,
    /// Total log-likelihood `Σ n_j ln Pr_j` before the first and after every
    /// iteration.
    pub loglik_trace: Vec<f64>,
    pub n_used: usize,
    pub n_out_of_range: usize,
    /// Iterations where the plain RρR step was replaced by a diluted step.
    pub diluted_steps: usize,
    pub warnings: Vec<String>,
}

struct BinnedData {
    povms: Vec<DMatrix<C64>>,
    counts: Vec<f64>,
    total: f64,
}

fn bin_dataset(data: &QuadratureDataset, config: &ReconstructionConfig) -> Result<(BinnedData, usize)> {
    let edges = config.bin_edges();
    let n_bins = config.n_bins();
    let mut povms = Vec::new();
    let mut counts = Vec::new();
    let mut out_of_range = 0;
    for (phase, samples) in data.phases.iter().zip(&data.samples) {
        let mut hist = vec![0usize; n_bins];
        for &x in samples {
            match config.bin_index(x) {
                Some(k) => hist[k] += 1,
                None => out_of_range += 1,
            }
        }
        for (k, &c) in hist.iter().enumerate() {
            if c > 0 {
                povms.push(bin_povm(config.dim(), *phase, edges[k], edges[k + 1], config.detection_efficiency)?);
                counts.push(c as f64);
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyData("all samples fall outside the binning range"));
    }
    Ok((BinnedData { povms, counts, total }, out_of_range))
}

fn trace_product(rho: &DMatrix<C64>, povm: &DMatrix<C64>) -> f64 {
    // tr(ρΠ) for Hermitian ρ, Π
    rho.iter()
        .zip(povm.transpose().iter())
        .map(|(a, b)| (a * b).re)
        .sum()
}

impl BinnedData {
    fn probabilities(&self, rho: &DMatrix<C64>) -> Vec<f64> {
        self.povms.iter().map(|p| trace_product(rho, p)).collect()
    }

    fn log_likelihood(&self, probs: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(probs)
            .map(|(n, p)| if *p > 0.0 { n * p.ln() } else { f64::NEG_INFINITY })
            .sum()
    }

    fn r_operator(&self, probs: &[f64]) -> DMatrix<C64> {
        let dim = self.povms[0].nrows();
        let mut r = DMatrix::<C64>::zeros(dim, dim);
        for ((povm, n), p) in self.povms.iter().zip(&self.counts).zip(probs) {
            if *p > 0.0 {
                r += povm * C64::new(n / (self.total * p), 0.0);
            }
        }
        r
    }
}

fn normalized_sandwich(op: &DMatrix<C64>, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let next = op * rho * op.adjoint();
    let next = (&next + next.adjoint()) * C64::new(0.5, 0.0);
    let tr = next.trace().re;
    next / C64::new(tr, 0.0)
}

/// Iterative maximum-likelihood (RρR) estimate of the pre-detection state.
///
/// A step that would lower the likelihood is replaced by the diluted update
/// `(I + εR)ρ(I + εR)`, halving `ε` until the likelihood does not decrease,
/// so the returned trace is monotone.
pub fn maxlik_reconstruct(data: &QuadratureDataset, config: &ReconstructionConfig) -> Result<Reconstruction> {
    config.validate()?;
    data.validate()?;
    let mut warnings = Vec::new();
    let distinct = {
        let mut p: Vec<f64> = data.phases.iter().map(|p| p.rem_euclid(PI)).collect();
        p.sort_by(f64::total_cmp);
        p.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        p.len()
    };
    if distinct < 2 {
        warnings.push("fewer than two distinct LO phases; coherences are not constrained".into());
    }
    let (binned, n_out) = bin_dataset(data, config)?;
    if n_out > 0 {
        warnings.push(format!("{n_out} samples outside ±{} were discarded", config.x_range));
    }
    let dim = config.dim();
    let identity = DMatrix::<C64>::identity(dim, dim);
    let mut rho = &identity / C64::new(dim as f64, 0.0);
    let mut probs = binned.probabilities(&rho);
    let mut ll = binned.log_likelihood(&probs);
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(ll);
    let mut diluted_steps = 0;
    for _ in 0..config.iterations {
        let r = binned.r_operator(&probs);
        let mut candidate = normalized_sandwich(&r, &rho);
        let mut cand_probs = binned.probabilities(&candidate);
        let mut cand_ll = binned.log_likelihood(&cand_probs);
        if cand_ll < ll {
            diluted_steps += 1;
            let mut eps = 1.0;
            loop {
                let op = &identity + &r * C64::new(eps, 0.0);
                candidate = normalized_sandwich(&op, &rho);
                cand_probs = binned.probabilities(&candidate);
                cand_ll = binned.log_likelihood(&cand_probs);
                if cand_ll >= ll || eps < 1e-12 {
                    break;
                }
                eps *= 0.5;
            }
        }
        if cand_ll >= ll {
            rho = candidate;
            probs = cand_probs;
            ll = cand_ll;
        }
        trace.push(ll);
    }
    let (state, clip) = DensityMatrix::clip_to_physical(&rho)?;
    if clip.clipped_weight > 1e-9 {
        warnings.push(format!("clipped eigenvalue weight {:.3e}", clip.clipped_weight));
    }
    Ok(Reconstruction {
        state,
        loglik_trace: trace,
        n_used: binned.total as usize,
        n_out_of_range: n_out,
        diluted_steps,
        warnings,
    })
}

/// One row of a θ sweep of measured quadrature statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaStats {
    pub theta: f64,
    pub mean_x: f64,
    pub var_x: f64,
    pub var_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingFit {
    /// Average of the two per-curve estimates, rad/s.
    pub gamma2: f64,
    pub gamma2_from_mean: f64,
    pub gamma2_from_variance: f64,
    pub residuals_mean: Vec<f64>,
    pub residuals_var_x: Vec<f64>,
    /// `var_P` carries no dephasing information; its residuals check `η`.
    pub residuals_var_p: Vec<f64>,
    pub rms_mean: f64,
    pub rms_var_x: f64,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares pure-dephasing rate from a θ sweep, fitted separately to the
/// `mean_X(θ)` and `var_X(θ)` curves of the closed-form model and averaged.
///
/// The mean is linear in `d = e^{-γ₂t_s}` and `var_X` is linear in `d²`, so
/// each curve has a closed-form least-squares solution; a fit beyond `d = 1`
/// is clamped to `γ₂ = 0`.
pub fn fit_dephasing(stats: &[ThetaStats], eta: f64, t_s: f64) -> Result<DephasingFit> {
    crate::error::check_unit_interval("eta", eta)?;
    check_positive("t_s", t_s)?;
    if eta == 0.0 {
        return Err(Error::Unidentifiable("eta = 0 carries no coherence".into()));
    }
    if stats.len() < 3 {
        return Err(Error::Unidentifiable(format!(
            "need at least 3 theta points, got {}",
            stats.len()
        )));
    }
    let mut sa = (0.0, 0.0);
    let mut sb = (0.0, 0.0);
    for row in stats {
        let (s, c) = ((row.theta / 2.0).sin(), (row.theta / 2.0).cos());
        let a = (2.0 * eta).sqrt() * s * c;
        let b = -2.0 * eta * s * s * c * c;
        let y = row.var_x - 0.5 - eta * s * s;
        sa.0 += a * row.mean_x;
        sa.1 += a * a;
        sb.0 += b * y;
        sb.1 += b * b;
    }
    // both curves vanish identically in γ₂ when sin θ = 0 for every point
    if sa.1 < 1e-6 * stats.len() as f64 * eta || sb.1 < 1e-8 * stats.len() as f64 * eta * eta {
        return Err(Error::Unidentifiable(
            "quadrature statistics are insensitive to dephasing at the sampled angles".into(),
        ));
    }
    let to_gamma = |d: f64| -> f64 {
        if d >= 1.0 {
            0.0
        } else if d <= 0.0 {
            f64::INFINITY
        } else {
            -d.ln() / t_s
        }
    };
    let d_mean = sa.0 / sa.1;
    let d2_var = sb.0 / sb.1;
    let g_mean = to_gamma(d_mean);
    let g_var = 0.5 * to_gamma(d2_var);
    if !g_mean.is_finite() || !g_var.is_finite() {
        return Err(Error::Unidentifiable("data imply complete loss of coherence".into()));
    }
    let gamma2 = 0.5 * (g_mean + g_var);
    let mut residuals_mean = Vec::with_capacity(stats.len());
    let mut residuals_var_x = Vec::with_capacity(stats.len());
    let mut residuals_var_p = Vec::with_capacity(stats.len());
    for row in stats {
        let m = quadrature_stats_closed_form(row.theta, eta, g_mean, t_s)?;
        let v = quadrature_stats_closed_form(row.theta, eta, g_var, t_s)?;
        residuals_mean.push(row.mean_x - m.mean_x);
        residuals_var_x.push(row.var_x - v.var_x);
        residuals_var_p.push(row.var_p - v.var_p);
    }
    Ok(DephasingFit {
        gamma2,
        gamma2_from_mean: g_mean,
        gamma2_from_variance: g_var,
        rms_mean: rms(&residuals_mean),
        rms_var_x: rms(&residuals_var_x),
        residuals_mean,
        residuals_var_x,
        residuals_var_p,
    })
}

/// Axis-aligned phase-space grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n_x: usize,
    pub n_p: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(3.0, 61)
    }
}

impl GridSpec {
    /// `[-half_width, half_width]²` with `n` points per axis.
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            p_min: -half_width,
            p_max: half_width,
            n_x: n,
            n_p: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 2 || self.n_p < 2 {
            return Err(Error::InvalidDimension {
                dim: self.n_x.min(self.n_p),
                reason: "grid needs at least two points per axis",
            });
        }
        if !(self.x_max > self.x_min && self.p_max > self.p_min) {
            return Err(Error::Domain {
                name: "grid extent",
                value: (self.x_max - self.x_min).min(self.p_max - self.p_min),
                expected: "> 0",
            });
        }
        Ok(())
    }
}

pub fn wigner_map(state: &DensityMatrix, grid: &GridSpec) -> Result<WignerGrid> {
    grid.validate()?;
    let xs = linspace(grid.x_min, grid.x_max, grid.n_x);
    let ps = linspace(grid.p_min, grid.p_max, grid.n_p);
    Ok(wigner(state, &xs, &ps))
}

/// JSON document describing one reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub schema: String,
    pub rho: DensityMatrix,
    pub diag: Vec<f64>,
    pub wigner_min: f64,
    pub wigner_min_location: [f64; 2],
    pub loglik_trace: Vec<f64>,
    pub config: ReconstructionConfig,
    pub fidelity_to_vacuum: f64,
    pub n_used: usize,
    pub n_out_of_range: usize,
    pub warnings: Vec<String>,
}

impl ReconstructionReport {
    pub fn new(result: &Reconstruction, config: &ReconstructionConfig, grid: &WignerGrid) -> Result<Self> {
        let (w, x, p) = grid.min();
        let vacuum = DensityMatrix::vacuum(result.state.dim())?;
        Ok(Self {
            schema: SCHEMA.into(),
            rho: result.state.clone(),
            diag: result.state.diagonal(),
            wigner_min: w,
            wigner_min_location: [x, p],
            loglik_trace: result.loglik_trace.clone(),
            config: *config,
            fidelity_to_vacuum: fidelity(&result.state, &vacuum)?,
            n_used: result.n_used,
            n_out_of_range: result.n_out_of_range,
            warnings: result.warnings.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::wigner_at_origin;
    use crate::measurement::{default_phases, sample_dataset};
    use approx::assert_abs_diff_eq;

    fn flat(n: usize, t: f64) -> PulseProfile {
        PulseProfile::from_real(linspace(0.0, t, n), &vec![1.0; n]).unwrap()
    }

    #[test]
    fn rectangular_flux_gives_flat_mode() {
        let mode = mode_from_flux(&flat(201, 2e-6), None).unwrap();
        assert_abs_diff_eq!(mode.norm(), 1.0, epsilon = 1e-12);
        for v in mode.profile().values() {
            assert_abs_diff_eq!(v.re, 1.0 / 2e-6f64.sqrt(), epsilon = 1e-6);
            assert_eq!(v.im, 0.0);
        }
        assert!(mode_from_flux(&PulseProfile::from_real(linspace(0.0, 1.0, 5), &[0.0; 5]).unwrap(), None).is_err());
        assert!(mode_from_flux(&PulseProfile::from_real(linspace(0.0, 1.0, 3), &[1.0, -1.0, 1.0]).unwrap(), None).is_err());
    }

    #[test]
    fn phase_winding_overlap_follows_sinc() {
        let n = 4001;
        let t = 1.0;
        let base = flat(n, t);
        let flat_mode = mode_from_flux(&base, None).unwrap();
        assert_abs_diff_eq!(mode_overlap_efficiency(&flat_mode, &flat_mode), 1.0, epsilon = 1e-12);

        for total in [2.0 * PI, 125f64.to_radians()] {
            let phase = PulseProfile::from_real(linspace(0.0, t, n), &linspace(0.0, total, n)).unwrap();
            let wound = mode_from_flux(&base, Some(&phase)).unwrap();
            let half = 0.5 * total;
            let sinc2 = (half.sin() / half).powi(2);
            assert_abs_diff_eq!(mode_overlap_efficiency(&wound, &flat_mode), sinc2, epsilon = 1e-6);
        }
        // a global phase does not change the overlap
        let shift = PulseProfile::from_real(linspace(0.0, t, n), &vec![1.3; n]).unwrap();
        let rotated = mode_from_flux(&base, Some(&shift)).unwrap();
        assert_abs_diff_eq!(mode_overlap_efficiency(&rotated, &flat_mode), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn filter_trace_examples() {
        let times = linspace(0.0, 1e-6, 401);
        let mode = mode_from_flux(
            &PulseProfile::sample(0.0, 1e-6, 401, |t| C64::new((PI * t / 1e-6).sin().powi(2), 0.0)).unwrap(),
            None,
        )
        .unwrap();
        let own = filter_trace(mode.profile(), &mode);
        assert_abs_diff_eq!(own.value, 1.0, epsilon = 1e-9);
        assert!(own.warning.is_none());

        // another unit-energy trace gives less
        let other = TemporalMode::new(flat(401, 1e-6)).unwrap();
        assert!(filter_trace(other.profile(), &mode).value < own.value);

        let xs: Vec<f64> = (0..20_000)
            .map(|k| filter_trace(&vacuum_trace(&times, k).unwrap(), &mode).value)
            .collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert_abs_diff_eq!(var, 0.5, epsilon = 3.0 * 0.5 * (2.0 / 20_000f64).sqrt());
    }

    #[test]
    fn orthogonal_signal_is_invisible() {
        let n = 801;
        let times = linspace(0.0, 1.0, n);
        let mode = TemporalMode::new(PulseProfile::from_real(times.clone(), &vec![1.0; n]).unwrap()).unwrap();
        let ortho: Vec<C64> = times.iter().map(|t| C64::new(5.0 * (2.0 * PI * t).cos(), 0.0)).collect();
        let xs: Vec<f64> = (0..5000)
            .map(|k| {
                let noise = vacuum_trace(&times, 100 + k).unwrap();
                let sum = noise.values().iter().zip(&ortho).map(|(a, b)| a + b).collect();
                filter_trace(&PulseProfile::new(times.clone(), sum).unwrap(), &mode).value
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(var, 0.5, epsilon = 0.05);
    }

    #[test]
    fn partial_trace_carries_warning() {
        let mode = TemporalMode::new(flat(101, 1.0)).unwrap();
        let short = PulseProfile::from_real(linspace(0.0, 0.5, 51), &[0.0; 51]).unwrap();
        let out = filter_trace(&short, &mode);
        assert!(out.warning.is_some());
        assert_abs_diff_eq!(out.mode_coverage, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn povm_wide_bin_is_identity_and_narrow_bin_is_projector_density() {
        let dim = 6;
        let wide = bin_povm(dim, 0.4, -12.0, 12.0, 1.0).unwrap();
        for m in 0..dim {
            for n in 0..dim {
                let expect = if m == n { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(wide[(m, n)].re, expect, epsilon = 1e-9);
                assert_abs_diff_eq!(wide[(m, n)].im, 0.0, epsilon = 1e-9);
            }
        }
        let (x, h, phi) = (0.7, 1e-5, 0.9);
        let narrow = bin_povm(dim, phi, x - h / 2.0, x + h / 2.0, 1.0).unwrap();
        let psi = oscillator_eigenfunctions(dim, x);
        for m in 0..dim {
            for n in 0..dim {
                let expect = C64::from_polar(psi[m] * psi[n] * h, -((m as f64) - (n as f64)) * phi);
                assert_abs_diff_eq!((narrow[(m, n)] - expect).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn povm_probabilities_match_lossy_pdf() {
        let state = DensityMatrix::from_amplitudes(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let state = state.resized(6).unwrap();
        let eta = 0.722;
        let lossy = crate::fock::apply_loss(&state, eta).unwrap();
        let (lo, hi, phi) = (0.3, 0.4, 1.1);
        let povm = bin_povm(6, phi, lo, hi, eta).unwrap();
        let grid = linspace(lo, hi, 2001);
        let pdf = crate::fock::quadrature_pdf(&lossy, phi, &grid);
        assert_abs_diff_eq!(trace_product(state.matrix(), &povm), trapezoid(&grid, &pdf), epsilon = 1e-9);
    }

    #[test]
    fn config_validation_and_binning() {
        let cfg = ReconstructionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_bins(), 120);
        assert_eq!(cfg.bin_index(-6.0), Some(0));
        assert_eq!(cfg.bin_index(5.9999), Some(119));
        assert_eq!(cfg.bin_index(6.0), None);
        assert!(ReconstructionConfig { iterations: 0, ..cfg }.validate().is_err());
        assert!(ReconstructionConfig { bin_width: 0.0, ..cfg }.validate().is_err());
        assert!(ReconstructionConfig { detection_efficiency: 0.0, ..cfg }.validate().is_err());
        assert!(quadrature_povm(&cfg, 0.0, 7.0).is_err());
    }

    #[test]
    fn vacuum_data_reconstructs_vacuum() {
        let vac = DensityMatrix::vacuum(6).unwrap();
        let data = sample_dataset(&vac, &default_phases(), 0.722, 32_800, 77).unwrap();
        let rec = maxlik_reconstruct(&data, &ReconstructionConfig::default()).unwrap();
        assert!(fidelity(&rec.state, &vac).unwrap() >= 0.995);
        assert!(rec.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    }

    #[test]
    fn single_photon_mixture_reconstructs_with_negativity() {
        let truth = DensityMatrix::from_diagonal(&[0.39, 0.60, 0.01, 0.0, 0.0, 0.0]).unwrap();
        let data = sample_dataset(&truth, &default_phases(), 0.722, 32_800, 8).unwrap();
        let rec = maxlik_reconstruct(&data, &ReconstructionConfig::default()).unwrap();
        let p = rec.state.diagonal();
        assert!((p[1] - 0.60).abs() <= 0.02, "{p:?}");
        assert!(wigner_at_origin(&rec.state) < 0.0);
        assert_abs_diff_eq!(wigner_at_origin(&truth), (0.39 - 0.60 + 0.01) / PI, epsilon = 1e-12);
    }

    #[test]
    fn coherence_sign_follows_generator() {
        let params = crate::protocol::ProtocolParams::default();
        let cfg = ReconstructionConfig { iterations: 200, ..Default::default() };
        for (theta, sign) in [(PI / 2.0, 1.0), (1.5 * PI, -1.0)] {
            let truth = crate::protocol::emitted_state(&params, theta, 6).unwrap();
            assert_eq!(truth.get(0, 1).re.signum(), sign);
            let data = sample_dataset(&truth, &default_phases(), 0.722, 20_000, 3).unwrap();
            let rec = maxlik_reconstruct(&data, &cfg).unwrap();
            let c = rec.state.get(0, 1);
            assert_eq!(c.re.signum(), sign, "theta {theta}: {c}");
            assert!(c.norm() > 0.1);
        }
    }

    #[test]
    fn single_phase_emits_warning() {
        let vac = DensityMatrix::vacuum(6).unwrap();
        let data = sample_dataset(&vac, &[0.0], 1.0, 2000, 1).unwrap();
        let cfg = ReconstructionConfig { iterations: 5, ..Default::default() };
        let rec = maxlik_reconstruct(&data, &cfg).unwrap();
        assert!(!rec.warnings.is_empty());
        let far = QuadratureDataset { samples: vec![vec![100.0; 10]], ..data };
        assert!(matches!(maxlik_reconstruct(&far, &cfg), Err(Error::EmptyData(_))));
    }

    fn sweep(gamma2: f64, eta: f64, t_s: f64, thetas: &[f64]) -> Vec<ThetaStats> {
        thetas
            .iter()
            .map(|&theta| {
                let s = quadrature_stats_closed_form(theta, eta, gamma2, t_s).unwrap();
                ThetaStats { theta, mean_x: s.mean_x, var_x: s.var_x, var_p: s.var_p }
            })
            .collect()
    }

    #[test]
    fn dephasing_fit_examples() {
        let thetas = linspace(0.0, 2.0 * PI, 13);
        let t_s = 0.48e-6;
        let scale = 2.0 * PI * 0.04e6;
        let null = fit_dephasing(&sweep(0.0, 0.433, t_s, &thetas), 0.433, t_s).unwrap();
        assert!(null.gamma2 < 1e-3 * scale);

        let fit = fit_dephasing(&sweep(scale, 0.433, t_s, &thetas), 0.433, t_s).unwrap();
        assert_abs_diff_eq!(fit.gamma2, scale, epsilon = 1e-6 * scale);
        assert_abs_diff_eq!(fit.gamma2_from_mean, scale, epsilon = 1e-6 * scale);
        assert!(fit.rms_mean < 1e-12 && fit.rms_var_x < 1e-12);

        let degenerate = sweep(scale, 0.433, t_s, &[PI, PI, PI]);
        assert!(matches!(fit_dephasing(&degenerate, 0.433, t_s), Err(Error::Unidentifiable(_))));
        assert!(matches!(fit_dephasing(&sweep(scale, 0.433, t_s, &[1.0, 2.0]), 0.433, t_s), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn wigner_map_examples() {
        let vac = DensityMatrix::vacuum(6).unwrap();
        let grid = wigner_map(&vac, &GridSpec::default()).unwrap();
        assert_abs_diff_eq!(grid.max(), 1.0 / PI, epsilon = 1e-12);
        let (_, x, p) = {
            let k = grid.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            (0.0, grid.x_axis[k / 61], grid.p_axis[k % 61])
        };
        assert_eq!((x, p), (0.0, 0.0));

        let params = crate::protocol::ProtocolParams::default();
        let half = crate::protocol::emitted_state(&params, PI / 2.0, 6).unwrap();
        let w = wigner_map(&half, &GridSpec::default()).unwrap();
        // positive-X displacement: W(x, 0) > W(-x, 0)
        let mid = 30;
        assert!(w.at(mid + 10, mid) > w.at(mid - 10, mid));
        assert!(GridSpec { n_x: 1, ..GridSpec::default() }.validate().is_err());
    }
}
