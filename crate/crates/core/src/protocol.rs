//! Forward model of the superatom source: qubit preparation, storage
//! decoherence, dark-polariton readout, photon flux and efficiency budget.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_unit_interval, Error, Result};
use crate::fock::{apply_loss, DensityMatrix, HERMITIAN_TOL, PSD_TOL, TRACE_TOL};
use crate::numerics::{cumulative_trapezoid, Dopri5, Dopri5Stats};

pub const BOLTZMANN: f64 = 1.380_649e-23;
/// ⁸⁷Rb atomic mass in kg.
pub const RB87_MASS: f64 = 86.909_180_527 * 1.660_539_066_60e-27;

/// Physical constants of one experiment, SI units (angular rates in rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Collective superatom–cavity coupling.
    pub g: f64,
    /// Cavity field decay rate.
    pub kappa: f64,
    /// G–E dipole decay rate.
    pub gamma: f64,
    /// Peak Rabi frequency of the read beam.
    pub omega_max: f64,
    /// Qubit rotation angle.
    pub theta: f64,
    /// Homogeneous decay of |R⟩ during storage.
    pub gamma1: f64,
    /// Pure dephasing during storage.
    pub gamma2: f64,
    /// Storage duration between write and read.
    pub t_storage: f64,
    pub eta_exc: f64,
    pub eta_cav: f64,
    /// Gaussian spin-wave storage time.
    pub tau_s: f64,
}

/// Photon generation efficiency measured at the source output.
pub const MEASURED_OUTPUT_EFFICIENCY: f64 = 0.60;

impl Default for ProtocolParams {
    fn default() -> Self {
        let mut p = Self {
            g: TAU * 10e6,
            kappa: TAU * 2.8e6,
            gamma: TAU * 2.87e6,
            omega_max: TAU * 11.5e6,
            theta: PI,
            gamma1: 0.0,
            gamma2: TAU * 0.04e6,
            t_storage: 0.48e-6,
            eta_exc: 0.80,
            eta_cav: 0.90,
            tau_s: 2.0e-6,
        };
        p.gamma1 = p
            .gamma1_for_output_efficiency(MEASURED_OUTPUT_EFFICIENCY)
            .unwrap_or(0.0);
        p
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("g", self.g)?;
        check_positive("kappa", self.kappa)?;
        check_positive("gamma", self.gamma)?;
        check_nonnegative("omega_max", self.omega_max)?;
        if !(0.0..TAU).contains(&self.theta) {
            return Err(Error::Domain {
                name: "theta",
                value: self.theta,
                expected: "[0, 2π)",
            });
        }
        check_nonnegative("gamma1", self.gamma1)?;
        check_nonnegative("gamma2", self.gamma2)?;
        check_nonnegative("t_storage", self.t_storage)?;
        check_unit_interval("eta_exc", self.eta_exc)?;
        check_unit_interval("eta_cav", self.eta_cav)?;
        check_positive("tau_s", self.tau_s)?;
        Ok(())
    }

    pub fn cooperativity(&self) -> Result<(f64, f64)> {
        cooperativity_efficiency(self.g, self.kappa, self.gamma)
    }

    /// `η = η_exc·η_s·η_C·η_cav` at the configured storage time.
    pub fn efficiency(&self) -> Result<EfficiencyBudget> {
        let (c, eta_c) = self.cooperativity()?;
        let eta_s = storage_retention(self.t_storage, self.tau_s)?;
        let total = efficiency_budget(self.eta_exc, eta_s, eta_c, self.eta_cav)?;
        Ok(EfficiencyBudget {
            cooperativity: c,
            eta_c,
            eta_s,
            eta_exc: self.eta_exc,
            eta_cav: self.eta_cav,
            eta_rem: self.eta_exc * eta_s * self.eta_cav,
            eta_total: total,
        })
    }

    /// Readout beamsplitter transmission `ζ`, identified with the efficiency budget.
    pub fn readout_transmission(&self) -> Result<f64> {
        Ok(self.efficiency()?.eta_total)
    }

    /// Effective output efficiency `ζ·e^{-2γ₁t_s}`.
    pub fn output_efficiency(&self) -> Result<f64> {
        Ok(self.readout_transmission()? * (-2.0 * self.gamma1 * self.t_storage).exp())
    }

    /// The `γ₁` for which `ζ·e^{-2γ₁t_s}` equals `target`.
    pub fn gamma1_for_output_efficiency(&self, target: f64) -> Result<f64> {
        check_unit_interval("target efficiency", target)?;
        let zeta = self.readout_transmission()?;
        if target > zeta || target <= 0.0 || self.t_storage <= 0.0 {
            return Err(Error::Domain {
                name: "target efficiency",
                value: target,
                expected: "(0, ζ] with t_storage > 0",
            });
        }
        Ok((zeta / target).ln() / (2.0 * self.t_storage))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub cooperativity: f64,
    pub eta_c: f64,
    pub eta_s: f64,
    pub eta_exc: f64,
    pub eta_cav: f64,
    pub eta_rem: f64,
    pub eta_total: f64,
}

/// Sampled time series, real-valued for drive and flux, complex for mode functions.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseProfile {
    times: Vec<f64>,
    values: Vec<C64>,
}

impl PulseProfile {
    pub fn new(times: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidProfile(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidProfile("need at least two samples".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProfile("times must be strictly increasing".into()));
        }
        if times.iter().any(|t| !t.is_finite())
            || values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidProfile("non-finite sample".into()));
        }
        Ok(Self { times, values })
    }

    pub fn from_real(times: Vec<f64>, values: &[f64]) -> Result<Self> {
        Self::new(times, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    /// Samples `f` on `n` evenly spaced points of `[t0, t1]`.
    pub fn sample<F: FnMut(f64) -> C64>(t0: f64, t1: f64, n: usize, f: F) -> Result<Self> {
        let times = crate::numerics::linspace(t0, t1, n);
        let values = times.iter().cloned().map(f).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Linear interpolation; `None` outside the sampled span.
    pub fn interpolate(&self, t: f64) -> Option<C64> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Some(self.values[0]);
        }
        if k >= self.times.len() {
            return Some(self.values[self.times.len() - 1]);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Some(self.values[k - 1] * (1.0 - w) + self.values[k] * w)
    }

    /// Trapezoid integral of the real part.
    pub fn integral(&self) -> f64 {
        crate::numerics::trapezoid(&self.times, &self.real_values())
    }

    /// Time of the largest real sample.
    pub fn peak_time(&self) -> f64 {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.times[k]
    }

    /// CSV export. `quantity` names the value column (with its unit) in the
    /// header comment; complex profiles get separate real/imaginary columns.
    pub fn write_csv<W: Write>(&self, mut out: W, quantity: &str) -> Result<()> {
        let complex = !self.is_real();
        writeln!(out, "# time in s; {quantity}")?;
        if complex {
            writeln!(out, "# columns: time_s, re, im")?;
        } else {
            writeln!(out, "# columns: time_s, value")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for (t, v) in self.times.iter().zip(&self.values) {
            if complex {
                w.write_record([t.to_string(), v.re.to_string(), v.im.to_string()])
            } else {
                w.write_record([t.to_string(), v.re.to_string()])
            }
            .map_err(crate::fock::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a two- or three-column CSV written by [`PulseProfile::write_csv`];
    /// `#` lines are comments.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(crate::fock::csv_err)?;
            let parse = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column {}", line + 1, k + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))
            };
            let t = parse(0)?;
            let re = parse(1)?;
            let im = if record.len() >= 3 { parse(2)? } else { 0.0 };
            times.push(t);
            values.push(C64::new(re, im));
        }
        Self::new(times, values)
    }
}

/// Read-beam turn-on `Ω_max·sin²(πt/2t_r)` for `t < t_r`, constant afterwards.
pub fn read_ramp(omega_max: f64, ramp_time: f64, duration: f64, n_points: usize) -> Result<PulseProfile> {
    check_nonnegative("omega_max", omega_max)?;
    check_positive("ramp_time", ramp_time)?;
    check_positive("duration", duration)?;
    PulseProfile::sample(0.0, duration, n_points, |t| {
        let v = if t < ramp_time {
            omega_max * (PI * t / (2.0 * ramp_time)).sin().powi(2)
        } else {
            omega_max
        };
        C64::new(v, 0.0)
    })
}

/// Dark-polariton mixing angle `β = arctan(2g/Ω)`.
pub fn dark_polariton_angle(g: f64, omega: f64) -> Result<f64> {
    check_positive("g", g)?;
    check_nonnegative("omega", omega)?;
    Ok((2.0 * g).atan2(omega))
}

/// Amplitudes on `(|G⟩|1_c⟩, |R⟩|0_c⟩)` of the dark polariton.
pub fn polariton_state(beta: f64) -> [f64; 2] {
    [beta.cos(), -beta.sin()]
}

/// Cooperativity `C = g²/(2κγ)` and mapping efficiency `η_C = 2C/(2C+1)`.
pub fn cooperativity_efficiency(g: f64, kappa: f64, gamma: f64) -> Result<(f64, f64)> {
    check_positive("g", g)?;
    check_positive("kappa", kappa)?;
    check_positive("gamma", gamma)?;
    let c = g * g / (2.0 * kappa * gamma);
    Ok((c, 2.0 * c / (2.0 * c + 1.0)))
}

fn real_drive(omega_profile: &PulseProfile) -> Result<Vec<f64>> {
    omega_profile
        .values()
        .iter()
        .map(|v| {
            if v.im != 0.0 || v.re < 0.0 {
                Err(Error::InvalidProfile("Rabi frequency must be real and nonnegative".into()))
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

/// `cos²b` with `b = arctan(2g/(Ω√η_C))`.
fn photonic_weight(omega: f64, g: f64, eta_c: f64) -> f64 {
    let o2 = omega * omega * eta_c;
    if o2 == 0.0 {
        0.0
    } else {
        o2 / (o2 + 4.0 * g * g)
    }
}

/// Adiabatic photon flux
/// `I(t) = 2κ η_C η_rem cos²b(t) exp(-2κ ∫_{t0}^t cos²b dt')`.
pub fn photon_flux_adiabatic(
    omega_profile: &PulseProfile,
    params: &ProtocolParams,
    eta_rem: f64,
) -> Result<PulseProfile> {
    check_unit_interval("eta_rem", eta_rem)?;
    let omega = real_drive(omega_profile)?;
    let (_, eta_c) = params.cooperativity()?;
    let weight: Vec<f64> = omega
        .iter()
        .map(|&o| photonic_weight(o, params.g, eta_c))
        .collect();
    let cumulative = cumulative_trapezoid(omega_profile.times(), &weight);
    let flux: Vec<f64> = weight
        .iter()
        .zip(&cumulative)
        .map(|(w, f)| 2.0 * params.kappa * eta_c * eta_rem * w * (-2.0 * params.kappa * f).exp())
        .collect();
    PulseProfile::from_real(omega_profile.times().to_vec(), &flux)
}

/// Closed-form emitted probability of the adiabatic flux,
/// `η_C η_rem (1 - e^{-2κ∫cos²b dt})`.
pub fn adiabatic_emission_probability(
    omega_profile: &PulseProfile,
    params: &ProtocolParams,
    eta_rem: f64,
) -> Result<f64> {
    check_unit_interval("eta_rem", eta_rem)?;
    let omega = real_drive(omega_profile)?;
    let (_, eta_c) = params.cooperativity()?;
    let weight: Vec<f64> = omega
        .iter()
        .map(|&o| photonic_weight(o, params.g, eta_c))
        .collect();
    let total = crate::numerics::trapezoid(omega_profile.times(), &weight);
    Ok(eta_c * eta_rem * (1.0 - (-2.0 * params.kappa * total).exp()))
}

/// Solution of the single-excitation read dynamics.
#[derive(Debug, Clone)]
pub struct SingleExcitation {
    /// `(c_R, c_E, c_C)` at each profile time.
    pub amplitudes: Vec<[C64; 3]>,
    /// Output flux `2κ|c_C|²`.
    pub flux: PulseProfile,
    /// `∫2κ|c_C|² dt` over the profile.
    pub total_emission: f64,
    /// `∫2γ|c_E|² dt` over the profile.
    pub dipole_loss: f64,
    /// `1 - |c|²` at the end of the profile.
    pub norm_loss: f64,
    pub stats: Dopri5Stats,
}

/// Resolution needed by [`integrate_single_excitation`]: sample spacing at
/// most `0.01 / max(g, κ, γ, Ω_max)`.
pub fn required_step(params: &ProtocolParams, omega_peak: f64) -> f64 {
    0.01 / params.g.max(params.kappa).max(params.gamma).max(omega_peak)
}

/// Integrates the non-Hermitian single-excitation dynamics on
/// `{|R,0_c⟩, |E,0_c⟩, |G,1_c⟩}` starting from `c_R = 1`, with `Ω(t)` linearly
/// interpolated between profile samples.
pub fn integrate_single_excitation(
    omega_profile: &PulseProfile,
    params: &ProtocolParams,
) -> Result<SingleExcitation> {
    params.validate()?;
    let omega = real_drive(omega_profile)?;
    let peak = omega.iter().cloned().fold(0.0, f64::max);
    let limit = required_step(params, peak);
    let step = omega_profile.max_step();
    if step > limit * (1.0 + 1e-9) {
        return Err(Error::StepTooCoarse { step, limit });
    }
    let (g, kappa, gamma) = (params.g, params.kappa, params.gamma);
    let solver = Dopri5::default();
    let mut stats = Dopri5Stats::default();
    let times = omega_profile.times();

    // y = [Re cR, Im cR, Re cE, Im cE, Re cC, Im cC, ∫2κ|cC|², ∫2γ|cE|²]
    let mut y = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut amplitudes = Vec::with_capacity(times.len());
    let mut flux = Vec::with_capacity(times.len());
    let unpack = |y: &[f64; 8]| {
        [
            C64::new(y[0], y[1]),
            C64::new(y[2], y[3]),
            C64::new(y[4], y[5]),
        ]
    };
    amplitudes.push(unpack(&y));
    flux.push(0.0);
    let mut h = step;
    for k in 1..times.len() {
        let (t0, t1) = (times[k - 1], times[k]);
        let (o0, o1) = (omega[k - 1], omega[k]);
        let mut rhs = |t: f64, y: &[f64; 8]| {
            let w = (t - t0) / (t1 - t0);
            let half = 0.5 * (o0 + (o1 - o0) * w);
            let [cr, ce, cc] = unpack(y);
            let i = C64::new(0.0, 1.0);
            let dr = -i * half * ce;
            let de = -i * half * cr - i * g * cc - gamma * ce;
            let dc = -i * g * ce - kappa * cc;
            [
                dr.re,
                dr.im,
                de.re,
                de.im,
                dc.re,
                dc.im,
                2.0 * kappa * cc.norm_sqr(),
                2.0 * gamma * ce.norm_sqr(),
            ]
        };
        let (next, last_h) = solver.integrate(&mut rhs, t0, t1, y, h, &mut stats);
        y = next;
        h = last_h.max(1e-3 * (t1 - t0));
        let amps = unpack(&y);
        flux.push(2.0 * kappa * amps[2].norm_sqr());
        amplitudes.push(amps);
    }
    let norm: f64 = unpack(&y).iter().map(|c| c.norm_sqr()).sum();
    Ok(SingleExcitation {
        amplitudes,
        flux: PulseProfile::from_real(times.to_vec(), &flux)?,
        total_emission: y[6],
        dipole_loss: y[7],
        norm_loss: 1.0 - norm,
        stats,
    })
}

/// Density matrix of the superatom qubit in the basis `{|G⟩, |R⟩}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomicQubitState {
    matrix: Matrix2<C64>,
}

impl AtomicQubitState {
    pub fn new(matrix: Matrix2<C64>) -> Result<Self> {
        let herm = (matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("qubit not Hermitian ({herm:.2e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("qubit trace {tr} != 1")));
        }
        // 2x2: PSD iff both diagonal entries and the determinant are nonnegative
        let det = (matrix[(0, 0)] * matrix[(1, 1)] - matrix[(0, 1)] * matrix[(1, 0)]).re;
        if matrix[(0, 0)].re < -PSD_TOL || matrix[(1, 1)].re < -PSD_TOL || det < -PSD_TOL {
            return Err(Error::InvalidState("qubit not positive semidefinite".into()));
        }
        Ok(Self { matrix })
    }

    /// `cos(θ/2)|G⟩ − sin(θ/2)|R⟩` after the write pulse.
    pub fn prepared(theta: f64) -> Self {
        let (c, s) = ((theta / 2.0).cos(), -(theta / 2.0).sin());
        let m = Matrix2::new(
            C64::new(c * c, 0.0),
            C64::new(c * s, 0.0),
            C64::new(s * c, 0.0),
            C64::new(s * s, 0.0),
        );
        Self { matrix: m }
    }

    pub fn ground() -> Self {
        Self::prepared(0.0)
    }

    pub fn rydberg() -> Self {
        Self::prepared(PI)
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.matrix
    }

    pub fn rydberg_population(&self) -> f64 {
        self.matrix[(1, 1)].re
    }

    /// `ρ_GR = ⟨G|ρ|R⟩`.
    pub fn coherence(&self) -> C64 {
        self.matrix[(0, 1)]
    }
}

/// Exact solution of the storage master equation with Lindblad operators
/// `√(2γ₁)|G⟩⟨R|` and `√(2γ₂)|R⟩⟨R|`: `ρ_RR ∝ e^{-2γ₁t}`,
/// `ρ_GR ∝ e^{-(γ₁+γ₂)t}`.
pub fn evolve_qubit(
    initial: &AtomicQubitState,
    gamma1: f64,
    gamma2: f64,
    duration: f64,
) -> Result<AtomicQubitState> {
    check_nonnegative("gamma1", gamma1)?;
    check_nonnegative("gamma2", gamma2)?;
    check_nonnegative("duration", duration)?;
    let m = initial.matrix;
    let pop = (-2.0 * gamma1 * duration).exp();
    let coh = (-(gamma1 + gamma2) * duration).exp();
    let rr = m[(1, 1)] * pop;
    let out = Matrix2::new(
        C64::new(1.0, 0.0) - rr,
        m[(0, 1)] * coh,
        m[(1, 0)] * coh,
        rr,
    );
    Ok(AtomicQubitState { matrix: out })
}

/// Readout: `|G⟩ → |0⟩`, `|R⟩ → −|1⟩` (so that `ρ_01 > 0` for θ ∈ (0, π)),
/// followed by a beamsplitter of transmission `zeta`.
pub fn map_to_photon(atomic: &AtomicQubitState, zeta: f64, dim: usize) -> Result<DensityMatrix> {
    check_unit_interval("zeta", zeta)?;
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "need at least two Fock levels",
        });
    }
    let m = atomic.matrix;
    let mut rho = nalgebra::DMatrix::<C64>::zeros(dim, dim);
    rho[(0, 0)] = m[(0, 0)];
    rho[(1, 1)] = m[(1, 1)];
    rho[(0, 1)] = -m[(0, 1)];
    rho[(1, 0)] = -m[(1, 0)];
    let photonic = DensityMatrix::new(rho)?;
    apply_loss(&photonic, zeta)
}

/// Photonic state emitted for rotation angle `theta` after storage and
/// readout with parameters `params`, truncated at `dim` levels.
pub fn emitted_state(params: &ProtocolParams, theta: f64, dim: usize) -> Result<DensityMatrix> {
    let stored = evolve_qubit(
        &AtomicQubitState::prepared(theta),
        params.gamma1,
        params.gamma2,
        params.t_storage,
    )?;
    map_to_photon(&stored, params.readout_transmission()?, dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureStats {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
}

/// Closed-form output quadrature moments with `η = ζe^{-2γ₁t_s}`.
pub fn quadrature_stats_closed_form(theta: f64, eta: f64, gamma2: f64, t_s: f64) -> Result<QuadratureStats> {
    check_unit_interval("eta", eta)?;
    check_nonnegative("gamma2", gamma2)?;
    check_nonnegative("t_s", t_s)?;
    let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let d = (-gamma2 * t_s).exp();
    Ok(QuadratureStats {
        mean_x: (2.0 * eta).sqrt() * d * s * c,
        mean_p: 0.0,
        var_x: eta * s * s * (1.0 - 2.0 * d * d * c * c) + 0.5,
        var_p: eta * s * s + 0.5,
    })
}

/// `η = η_exc·η_s·η_C·η_cav`.
pub fn efficiency_budget(eta_exc: f64, eta_s: f64, eta_c: f64, eta_cav: f64) -> Result<f64> {
    check_unit_interval("eta_exc", eta_exc)?;
    check_unit_interval("eta_s", eta_s)?;
    check_unit_interval("eta_C", eta_c)?;
    check_unit_interval("eta_cav", eta_cav)?;
    Ok(eta_exc * eta_s * eta_c * eta_cav)
}

/// Gaussian spin-wave retention `e^{-(t_s/τ_s)²}`.
pub fn storage_retention(t_s: f64, tau_s: f64) -> Result<f64> {
    check_positive("tau_s", tau_s)?;
    check_nonnegative("t_s", t_s)?;
    Ok((-(t_s / tau_s).powi(2)).exp())
}

/// Motional dephasing time `τ_T = √(m/k_B T) / ‖k_GR‖`.
pub fn motional_storage_time(temperature: f64, atomic_mass: f64, k_gr: f64) -> Result<f64> {
    check_positive("temperature", temperature)?;
    check_positive("atomic_mass", atomic_mass)?;
    check_positive("k_GR", k_gr)?;
    Ok((atomic_mass / (BOLTZMANN * temperature)).sqrt() / k_gr)
}

/// Population of |R⟩ after a write pulse of angle `theta`, scaled by `p_max`.
pub fn rydberg_population(theta: f64, p_max: f64) -> Result<f64> {
    check_unit_interval("p_max", p_max)?;
    Ok(p_max * (theta / 2.0).sin().powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polariton_angle_limits() {
        let g = TAU * 10e6;
        assert!(dark_polariton_angle(g, 1e15).unwrap() < 1e-6);
        assert_abs_diff_eq!(dark_polariton_angle(g, 2.0 * g).unwrap(), PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dark_polariton_angle(g, 0.0).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(dark_polariton_angle(0.0, 1.0).is_err());
    }

    #[test]
    fn polariton_amplitudes() {
        assert_eq!(polariton_state(0.0), [1.0, -0.0]);
        let s = polariton_state(PI / 2.0);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(s[1], -1.0, epsilon = 1e-16);
        let s = polariton_state(PI / 4.0);
        assert_abs_diff_eq!(s[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -(0.5f64.sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn cooperativity_examples() {
        let (c, eta) = cooperativity_efficiency(TAU * 10e6, TAU * 2.8e6, TAU * 2.87e6).unwrap();
        assert_abs_diff_eq!(c, 6.22, epsilon = 0.01);
        assert_abs_diff_eq!(eta, 0.926, epsilon = 0.001);
        // g = κ = γ
        let (c, eta) = cooperativity_efficiency(3.0, 3.0, 3.0).unwrap();
        assert_abs_diff_eq!(c, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(eta, 0.5, epsilon = 1e-15);
        let (_, eta) = cooperativity_efficiency(1e6, 1.0, 1.0).unwrap();
        assert!(eta > 1.0 - 1e-9);
        assert!(cooperativity_efficiency(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn efficiency_examples() {
        assert_abs_diff_eq!(
            efficiency_budget(0.80, 0.95, 0.926, 0.90).unwrap(),
            0.633,
            epsilon = 0.001
        );
        assert_eq!(efficiency_budget(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(efficiency_budget(0.5, 0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(efficiency_budget(1.1, 1.0, 1.0, 1.0).is_err());
        assert_eq!(storage_retention(0.0, 2e-6).unwrap(), 1.0);
        assert_abs_diff_eq!(storage_retention(2e-6, 2e-6).unwrap(), (-1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(storage_retention(0.453e-6, 2e-6).unwrap(), 0.950, epsilon = 5e-4);
        assert!(storage_retention(1e-6, 0.0).is_err());
    }

    #[test]
    fn default_gamma1_reproduces_output_efficiency() {
        let p = ProtocolParams::default();
        p.validate().unwrap();
        assert_abs_diff_eq!(p.output_efficiency().unwrap(), 0.60, epsilon = 1e-12);
        assert!(p.gamma1 > 0.0);
    }

    #[test]
    fn motional_time_scaling_and_value() {
        let k_red = TAU / 795e-9;
        let k_blue = TAU / 475e-9;
        let tau = motional_storage_time(5e-6, RB87_MASS, k_red + k_blue).unwrap();
        assert_abs_diff_eq!(tau, 2.2e-6, epsilon = 0.05e-6);
        let doubled_k = motional_storage_time(5e-6, RB87_MASS, 2.0 * (k_red + k_blue)).unwrap();
        assert_abs_diff_eq!(doubled_k, tau / 2.0, epsilon = 1e-18);
        let hot = motional_storage_time(20e-6, RB87_MASS, k_red + k_blue).unwrap();
        assert_abs_diff_eq!(hot, tau / 2.0, epsilon = 1e-18);
        assert!(motional_storage_time(0.0, RB87_MASS, 1.0).is_err());
    }

    #[test]
    fn rydberg_population_examples() {
        assert_eq!(rydberg_population(0.0, 0.94).unwrap(), 0.0);
        assert_abs_diff_eq!(rydberg_population(PI, 0.94).unwrap(), 0.94, epsilon = 1e-15);
        assert_abs_diff_eq!(rydberg_population(PI / 2.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(rydberg_population(1.0, 1.5).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let s = quadrature_stats_closed_form(PI / 3.0, 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(s.var_x, 0.375, epsilon = 1e-15);
        for eta in [0.2, 0.7] {
            let s = quadrature_stats_closed_form(PI, eta, 1e5, 1e-6).unwrap();
            assert_abs_diff_eq!(s.mean_x, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(s.var_x, eta + 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(s.var_p, eta + 0.5, epsilon = 1e-15);
        }
        let s = quadrature_stats_closed_form(0.0, 0.6, 1e5, 1e-6).unwrap();
        assert_eq!((s.mean_x, s.mean_p, s.var_x, s.var_p), (0.0, 0.0, 0.5, 0.5));
        assert!(quadrature_stats_closed_form(1.0, 1.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn evolve_examples() {
        let start = AtomicQubitState::prepared(1.1);
        assert_eq!(evolve_qubit(&start, 0.0, 0.0, 5.0).unwrap(), start);
        let r = AtomicQubitState::rydberg();
        let dephased = evolve_qubit(&r, 0.0, 1e6, 1e-6).unwrap();
        assert_abs_diff_eq!(dephased.rydberg_population(), 1.0, epsilon = 1e-15);
        let half = AtomicQubitState::prepared(PI / 2.0);
        let g2 = TAU * 0.04e6;
        let t = 0.48e-6;
        let out = evolve_qubit(&half, 0.0, g2, t).unwrap();
        assert_abs_diff_eq!(
            out.coherence().norm(),
            half.coherence().norm() * (-g2 * t).exp(),
            epsilon = 1e-15
        );
        assert!(evolve_qubit(&half, -1.0, 0.0, 1.0).is_err());
        assert!(evolve_qubit(&half, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn map_to_photon_examples() {
        let r = AtomicQubitState::rydberg();
        let rho = map_to_photon(&r, 0.6, 6).unwrap();
        assert_abs_diff_eq!(rho.get(0, 0).re, 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.get(1, 1).re, 0.6, epsilon = 1e-14);
        let g = map_to_photon(&AtomicQubitState::ground(), 0.3, 6).unwrap();
        assert_abs_diff_eq!(g.get(0, 0).re, 1.0, epsilon = 1e-15);
        let half = map_to_photon(&AtomicQubitState::prepared(PI / 2.0), 1.0, 6).unwrap();
        let (mean, _) = crate::fock::quadrature_moments(&half, 0.0);
        assert_abs_diff_eq!(mean, 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(half.get(0, 1).re > 0.0);
        let past_pi = map_to_photon(&AtomicQubitState::prepared(1.5 * PI), 1.0, 6).unwrap();
        assert!(past_pi.get(0, 1).re < 0.0);
    }

    #[test]
    fn zero_drive_gives_no_flux() {
        let p = ProtocolParams::default();
        let omega = PulseProfile::from_real(crate::numerics::linspace(0.0, 1e-7, 1001), &[0.0; 1001]).unwrap();
        let flux = photon_flux_adiabatic(&omega, &p, 1.0).unwrap();
        assert!(flux.real_values().iter().all(|&v| v == 0.0));
        let ode = integrate_single_excitation(&omega, &p).unwrap();
        assert!(ode.flux.real_values().iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(ode.amplitudes.last().unwrap()[0].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coarse_grid_is_refused() {
        let p = ProtocolParams::default();
        let omega = read_ramp(p.omega_max, 200e-9, 2e-6, 1000).unwrap();
        assert!(matches!(
            integrate_single_excitation(&omega, &p),
            Err(Error::StepTooCoarse { .. })
        ));
    }

    #[test]
    fn rabi_oscillation_without_cavity_coupling() {
        // g → tiny: R–E Rabi problem with damping γ on E
        let p = ProtocolParams {
            g: 1.0,
            gamma: 1e3,
            kappa: 1e3,
            ..ProtocolParams::default()
        };
        let omega0 = TAU * 1e6;
        let n = 20001;
        let t_end = 2e-6;
        let profile = PulseProfile::from_real(crate::numerics::linspace(0.0, t_end, n), &vec![omega0; n]).unwrap();
        let sol = integrate_single_excitation(&profile, &p).unwrap();
        // weak damping: |c_R|² ≈ cos²(Ωt/2) e^{-γt}
        for k in [2500usize, 7500, 15000] {
            let t = profile.times()[k];
            let expected = (omega0 * t / 2.0).cos().powi(2) * (-p.gamma * t).exp();
            assert_abs_diff_eq!(sol.amplitudes[k][0].norm_sqr(), expected, epsilon = 2e-3);
        }
    }

    #[test]
    fn pulse_profile_rejects_bad_input() {
        assert!(PulseProfile::from_real(vec![0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(PulseProfile::from_real(vec![0.0, 1.0], &[1.0]).is_err());
        assert!(PulseProfile::from_real(vec![0.0, 1.0], &[f64::NAN, 1.0]).is_err());
        let p = PulseProfile::from_real(vec![0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        assert_eq!(p.interpolate(1.5).unwrap().re, 3.0);
        assert!(p.interpolate(2.5).is_none());
    }

    #[test]
    fn pulse_profile_csv_roundtrip() {
        let p = PulseProfile::new(
            vec![0.0, 1e-9, 2e-9],
            vec![C64::new(1.0, 0.5), C64::new(0.25, -1.0), C64::new(0.0, 0.0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, "mode amplitude in s^-1/2").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# time in s"));
        let back = PulseProfile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }
}
