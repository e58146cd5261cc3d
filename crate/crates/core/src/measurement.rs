//! Synthetic measurement records and their likelihood models: homodyne
//! sampling, photon counting, HBT-style g⁽²⁾ estimation and the
//! quantum-jump Rydberg detection histogram.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_unit_interval, Error, Result};
use crate::fock::{apply_loss, quadrature_moments, quadrature_pdf, DensityMatrix};
use crate::numerics::{golden_section_min, linspace, nelder_mead, GaussLegendre};
use crate::protocol::PulseProfile;
use crate::seeding::{derive_seed, stream_rng};

/// Schema tag written into every JSON file.
pub const SCHEMA: &str = "v1";

/// Number of LO phases and their spacing used for tomography.
pub const DEFAULT_PHASE_COUNT: usize = 6;
pub const DEFAULT_SAMPLES_PER_PHASE: usize = 32_800;

/// Inverse-CDF tabulation step in quadrature units.
const SAMPLING_STEP: f64 = 0.005;

/// `φ_k = kπ/6`, `k = 0..5`.
pub fn default_phases() -> Vec<f64> {
    (0..DEFAULT_PHASE_COUNT)
        .map(|k| k as f64 * PI / DEFAULT_PHASE_COUNT as f64)
        .collect()
}

fn check_efficiency(value: f64) -> Result<f64> {
    if value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err(Error::Domain {
            name: "detection_efficiency",
            value,
            expected: "(0, 1]",
        })
    }
}

/// Homodyne samples grouped by LO phase.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDataset {
    pub phases: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub detection_efficiency: f64,
    pub rng_seed: u64,
}

/// JSON sidecar accompanying each per-phase CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSidecar {
    pub schema: String,
    pub efficiency: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub mode_id: String,
}

impl QuadratureDataset {
    pub fn validate(&self) -> Result<()> {
        check_efficiency(self.detection_efficiency)?;
        if self.phases.is_empty() {
            return Err(Error::EmptyData("no phases"));
        }
        if self.phases.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                left: self.phases.len(),
                right: self.samples.len(),
            });
        }
        if self.samples.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyData("phase without samples"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Writes `phase_<k>.csv` (columns `phase_rad,value`) and `phase_<k>.json`
    /// for every phase into `dir`.
    pub fn write_dir(&self, dir: &Path, mode_id: &str) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        for (k, (phase, samples)) in self.phases.iter().zip(&self.samples).enumerate() {
            let csv_path = dir.join(format!("phase_{k}.csv"));
            let mut w = csv::Writer::from_path(&csv_path).map_err(crate::fock::csv_err)?;
            w.write_record(["phase_rad", "value"]).map_err(crate::fock::csv_err)?;
            let phase_text = phase.to_string();
            for x in samples {
                w.write_record([phase_text.as_str(), x.to_string().as_str()])
                    .map_err(crate::fock::csv_err)?;
            }
            w.flush()?;
            let sidecar = AcquisitionSidecar {
                schema: SCHEMA.into(),
                efficiency: self.detection_efficiency,
                seed: derive_seed(self.rng_seed, "homodyne", k as u64),
                n_samples: samples.len(),
                mode_id: mode_id.into(),
            };
            fs::write(
                dir.join(format!("phase_{k}.json")),
                serde_json::to_string_pretty(&sidecar)?,
            )?;
        }
        Ok(())
    }

    /// Reads every `phase_<k>.csv` in `dir` (with optional sidecars). The
    /// returned sidecars carry the recorded efficiency metadata.
    pub fn read_dir(dir: &Path) -> Result<(Self, Vec<AcquisitionSidecar>)> {
        let mut files: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let path = e.path();
                let name = path.file_name()?.to_str()?.to_string();
                let k = name.strip_prefix("phase_")?.strip_suffix(".csv")?.parse().ok()?;
                Some((k, path))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyData("no phase_<k>.csv files in dataset directory"));
        }
        let mut phases = Vec::new();
        let mut samples = Vec::new();
        let mut sidecars = Vec::new();
        for (k, path) in &files {
            let mut reader = csv::Reader::from_path(path).map_err(crate::fock::csv_err)?;
            let mut phase = None;
            let mut values = Vec::new();
            for (row, record) in reader.records().enumerate() {
                let record = record.map_err(crate::fock::csv_err)?;
                let parse = |c: usize| -> Result<f64> {
                    record
                        .get(c)
                        .ok_or_else(|| Error::Parse(format!("{}: row {row}: missing column", path.display())))?
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{}: row {row}: {e}", path.display())))
                };
                let ph = parse(0)?;
                if let Some(p) = phase {
                    if p != ph {
                        return Err(Error::Parse(format!("{}: mixed phases in one file", path.display())));
                    }
                }
                phase = Some(ph);
                values.push(parse(1)?);
            }
            let phase = phase.ok_or(Error::EmptyData("phase file without samples"))?;
            phases.push(phase);
            samples.push(values);
            let side = path.with_extension("json");
            if side.exists() {
                let text = fs::read_to_string(&side)?;
                let sc: AcquisitionSidecar = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
                sidecars.push(sc);
            } else if *k == 0 {
                // tolerated: no metadata at all
            }
        }
        let efficiency = sidecars.first().map(|s| s.efficiency).unwrap_or(1.0);
        let seed = sidecars.first().map(|s| s.seed).unwrap_or(0);
        let ds = Self {
            phases,
            samples,
            detection_efficiency: efficiency,
            rng_seed: seed,
        };
        ds.validate()?;
        Ok((ds, sidecars))
    }
}

/// Inverse-CDF table for one quadrature distribution.
struct InverseCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    fn new(state: &DensityMatrix, phase: f64) -> Self {
        let (mean, var) = quadrature_moments(state, phase);
        let half_width = 6.0 * var.max(0.5).sqrt();
        let lo = mean - half_width;
        let hi = mean + half_width;
        let n = ((hi - lo) / SAMPLING_STEP).ceil() as usize + 1;
        let x = linspace(lo, hi, n);
        let pdf = quadrature_pdf(state, phase, &x);
        let mut cdf = crate::numerics::cumulative_trapezoid(&x, &pdf);
        let total = *cdf.last().unwrap_or(&1.0);
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { x, cdf }
    }

    fn invert(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.x[k - 1] + w * (self.x[k] - self.x[k - 1])
    }
}

/// Draws homodyne outcomes at LO phase `phase` after a loss channel of
/// transmission `detection_efficiency`.
pub fn sample_homodyne(
    state: &DensityMatrix,
    phase: f64,
    detection_efficiency: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_efficiency(detection_efficiency)?;
    if n_samples == 0 {
        return Err(Error::EmptyData("n_samples must be at least 1"));
    }
    let detected = apply_loss(state, detection_efficiency)?;
    let table = InverseCdf::new(&detected, phase);
    let mut rng = stream_rng(seed, "homodyne-draws", 0);
    Ok((0..n_samples).map(|_| table.invert(rng.random::<f64>())).collect())
}

/// Full multi-phase dataset; phase `k` uses sub-stream `("homodyne", k)`.
pub fn sample_dataset(
    state: &DensityMatrix,
    phases: &[f64],
    detection_efficiency: f64,
    n_samples: usize,
    seed: u64,
) -> Result<QuadratureDataset> {
    let samples = phases
        .iter()
        .enumerate()
        .map(|(k, &phase)| {
            sample_homodyne(
                state,
                phase,
                detection_efficiency,
                n_samples,
                derive_seed(seed, "homodyne", k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadratureDataset {
        phases: phases.to_vec(),
        samples,
        detection_efficiency,
        rng_seed: seed,
    })
}

/// Per-pulse SPD counts for a source emitting at most one photon per pulse
/// with flux `flux_profile`, plus Poisson background over the pulse window.
pub fn spd_counts(
    flux_profile: &PulseProfile,
    detection_efficiency: f64,
    background_rate: f64,
    n_pulses: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    check_unit_interval("detection_efficiency", detection_efficiency)?;
    check_nonnegative("background_rate", background_rate)?;
    let emitted = flux_profile.integral();
    if !(0.0..=1.0 + 1e-9).contains(&emitted) {
        return Err(Error::Domain {
            name: "integrated flux",
            value: emitted,
            expected: "[0, 1] photons per pulse",
        });
    }
    let p_click = (detection_efficiency * emitted).min(1.0);
    let background_mean = background_rate * flux_profile.duration();
    let mut rng = stream_rng(seed, "spd", 0);
    let noise = poisson(background_mean)?;
    Ok((0..n_pulses)
        .map(|_| {
            let signal = u32::from(rng.random::<f64>() < p_click);
            signal + noise.as_ref().map_or(0, |d| d.sample(&mut rng) as u32)
        })
        .collect())
}

fn poisson(mean: f64) -> Result<Option<Poisson<f64>>> {
    if mean <= 0.0 {
        return Ok(None);
    }
    Poisson::new(mean)
        .map(Some)
        .map_err(|_| Error::Domain {
            name: "poisson mean",
            value: mean,
            expected: "finite, > 0",
        })
}

/// Per-pulse detected photon counts for a source with photon-number
/// distribution `probs`: binomial loss at `detection_efficiency` plus Poisson
/// background of mean `background_per_pulse`.
pub fn photon_number_counts(
    probs: &[f64],
    detection_efficiency: f64,
    background_per_pulse: f64,
    n_pulses: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    check_unit_interval("detection_efficiency", detection_efficiency)?;
    check_nonnegative("background_per_pulse", background_per_pulse)?;
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState("photon-number distribution must be normalized".into()));
    }
    let cumulative: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let noise = poisson(background_per_pulse)?;
    let mut rng = stream_rng(seed, "photon-number", 0);
    Ok((0..n_pulses)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let n = cumulative.partition_point(|&c| c <= u).min(probs.len() - 1) as u64;
            let detected = if n == 0 || detection_efficiency == 0.0 {
                0
            } else {
                Binomial::new(n, detection_efficiency)
                    .map(|b| b.sample(&mut rng))
                    .unwrap_or(n)
            };
            detected as u32 + noise.as_ref().map_or(0, |d| d.sample(&mut rng) as u32)
        })
        .collect())
}

/// Click records of the two detectors behind a 50:50 beamsplitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HbtRecord {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
}

/// Routes every detected photon of `counts` to detector A or B with equal
/// probability.
pub fn split_hbt(counts: &[u32], seed: u64) -> HbtRecord {
    let mut rng = stream_rng(seed, "hbt-split", 0);
    let mut a = Vec::with_capacity(counts.len());
    let mut b = Vec::with_capacity(counts.len());
    for &n in counts {
        let to_a = (0..n).filter(|_| rng.random::<bool>()).count() as u32;
        a.push(to_a);
        b.push(n - to_a);
    }
    HbtRecord { a, b }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2_zero: f64,
    pub uncertainty: f64,
    pub same_pulse_coincidences: u64,
    pub consecutive_coincidences: u64,
    pub n_pulses: usize,
}

/// Same-pulse A–B coincidence rate over the consecutive-pulse (A_i–B_{i+1}
/// and B_i–A_{i+1}, within one trial) coincidence rate.
pub fn g2_estimate(record: &HbtRecord, pulses_per_trial: usize) -> Result<G2Estimate> {
    let n = record.a.len();
    if record.b.len() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: record.b.len(),
        });
    }
    if n < 2 || pulses_per_trial < 2 {
        return Err(Error::EmptyData("need at least two pulses per trial"));
    }
    let click_a: Vec<bool> = record.a.iter().map(|&c| c > 0).collect();
    let click_b: Vec<bool> = record.b.iter().map(|&c| c > 0).collect();
    if !click_a.iter().any(|&c| c) || !click_b.iter().any(|&c| c) {
        return Err(Error::UndefinedStatistic("zero singles rate on a detector"));
    }
    let same = (0..n).filter(|&i| click_a[i] && click_b[i]).count() as u64;
    let mut consecutive = 0u64;
    let mut pairs = 0u64;
    for i in 0..n - 1 {
        if (i + 1) % pulses_per_trial == 0 {
            continue;
        }
        pairs += 1;
        consecutive += u64::from(click_a[i] && click_b[i + 1]) + u64::from(click_b[i] && click_a[i + 1]);
    }
    if consecutive == 0 || pairs == 0 {
        return Err(Error::UndefinedStatistic("no consecutive-pulse coincidences"));
    }
    let same_rate = same as f64 / n as f64;
    let cons_rate = consecutive as f64 / (2.0 * pairs as f64);
    let g2 = same_rate / cons_rate;
    // Poisson counting errors on both coincidence numbers; one count sets the
    // scale when no same-pulse coincidence was seen.
    let uncertainty = if same > 0 {
        g2 * (1.0 / same as f64 + 1.0 / consecutive as f64).sqrt()
    } else {
        (1.0 / n as f64) / cons_rate
    };
    Ok(G2Estimate {
        g2_zero: g2,
        uncertainty,
        same_pulse_coincidences: same,
        consecutive_coincidences: consecutive,
        n_pulses: n,
    })
}

/// Parameters of the cavity-EIT Rydberg detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RydbergDetectionParams {
    /// Transmitted count rate with the superatom in |G⟩, counts/s.
    pub phi_g: f64,
    /// Residual count rate while a Rydberg excitation blocks EIT, counts/s.
    pub phi_r: f64,
    /// Rydberg lifetime, s.
    pub tau_r: f64,
    /// Integration window, s.
    pub t_i: f64,
    /// Probability that a Rydberg excitation is present.
    pub zeta_r: f64,
}

impl RydbergDetectionParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("phi_G", self.phi_g)?;
        check_nonnegative("phi_R", self.phi_r)?;
        if self.phi_r >= self.phi_g {
            return Err(Error::Domain {
                name: "phi_R",
                value: self.phi_r,
                expected: "< phi_G",
            });
        }
        check_positive("tau_R", self.tau_r)?;
        check_positive("t_i", self.t_i)?;
        check_unit_interval("zeta_R", self.zeta_r)?;
        Ok(())
    }

    /// Smallest support that holds the pmf to 1e-6: `mean + 10√mean` of the
    /// brighter Poisson component.
    pub fn default_support(&self) -> usize {
        let mean = self.t_i * self.phi_g;
        (mean + 10.0 * mean.sqrt()).ceil() as usize + 5
    }
}

fn poisson_pmf_into(mean: f64, out: &mut [f64]) {
    let mut p = (-mean).exp();
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            p *= mean / n as f64;
        }
        *slot = p;
    }
}

/// Vector-valued adaptive Gauss–Legendre on `[a, b]`.
fn integrate_vector<F: FnMut(f64, &mut [f64])>(
    rule: &GaussLegendre,
    f: &mut F,
    a: f64,
    b: f64,
    len: usize,
    abs_tol: f64,
    depth: usize,
) -> Vec<f64> {
    let panel = |f: &mut F, lo: f64, hi: f64| {
        let mut acc = vec![0.0; len];
        let mut buf = vec![0.0; len];
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (z, w) in rule.nodes.iter().zip(&rule.weights) {
            f(mid + half * z, &mut buf);
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += w * half * v;
            }
        }
        acc
    };
    let whole = panel(f, a, b);
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid);
    let right = panel(f, mid, b);
    let err = (0..len)
        .map(|k| (left[k] + right[k] - whole[k]).abs())
        .fold(0.0, f64::max);
    if err <= abs_tol || depth >= 20 {
        return (0..len).map(|k| left[k] + right[k]).collect();
    }
    let mut l = integrate_vector(rule, f, a, mid, len, 0.5 * abs_tol, depth + 1);
    let r = integrate_vector(rule, f, mid, b, len, 0.5 * abs_tol, depth + 1);
    l.iter_mut().zip(r).for_each(|(x, y)| *x += y);
    l
}

/// Count distribution of the jump model `P_R(n)` for a superatom that starts
/// in |R⟩ (support `0..len`).
fn rydberg_branch_pmf(phi_g: f64, phi_r: f64, tau_r: f64, t_i: f64, len: usize, rule: &GaussLegendre) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let survive = (-t_i / tau_r).exp();
    poisson_pmf_into(t_i * phi_r, &mut out);
    out.iter_mut().for_each(|p| *p *= survive);
    // ∫_0^{t_i} P(n, tφ_R + (t_i−t)φ_G) e^{−t/τ}/τ dt with s = 1 − e^{−t/τ}
    let s_max = -(-t_i / tau_r).exp_m1();
    if s_max > 0.0 {
        let mut integrand = |s: f64, buf: &mut [f64]| {
            let t = (-tau_r * (-s).ln_1p()).min(t_i);
            poisson_pmf_into(t * phi_r + (t_i - t) * phi_g, buf);
        };
        let jumps = integrate_vector(rule, &mut integrand, 0.0, s_max, len, 1e-8, 0);
        out.iter_mut().zip(jumps).for_each(|(p, j)| *p += j);
    }
    out
}

/// `ζ_R P_R(n) + (1 − ζ_R) P_G(n)` for `n = 0..support`.
pub fn rydberg_histogram_pmf(params: &RydbergDetectionParams, support: Option<usize>) -> Result<Vec<f64>> {
    params.validate()?;
    let len = support.unwrap_or_else(|| params.default_support()).max(1);
    let rule = GaussLegendre::new(64);
    Ok(mixture_pmf(params, len, &rule))
}

fn mixture_pmf(params: &RydbergDetectionParams, len: usize, rule: &GaussLegendre) -> Vec<f64> {
    let mut ground = vec![0.0; len];
    poisson_pmf_into(params.t_i * params.phi_g, &mut ground);
    let rydberg = rydberg_branch_pmf(params.phi_g, params.phi_r, params.tau_r, params.t_i, len, rule);
    ground
        .iter()
        .zip(&rydberg)
        .map(|(g, r)| params.zeta_r * r + (1.0 - params.zeta_r) * g)
        .collect()
}

/// Histogram of integer counts over repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    #[serde(default = "schema_tag")]
    pub schema: String,
    /// Occurrences of each observed count `n`.
    pub counts: BTreeMap<u32, u64>,
    #[serde(rename = "t_i_s")]
    pub integration_time: f64,
    pub n_trials: u64,
}

fn schema_tag() -> String {
    SCHEMA.into()
}

impl CountHistogram {
    pub fn from_counts(samples: &[u32], integration_time: f64) -> Self {
        let mut counts = BTreeMap::new();
        for &n in samples {
            *counts.entry(n).or_insert(0) += 1;
        }
        Self {
            schema: SCHEMA.into(),
            counts,
            integration_time,
            n_trials: samples.len() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.values().sum();
        if total != self.n_trials {
            return Err(Error::Parse(format!(
                "histogram occurrences sum to {total}, expected n_trials = {}",
                self.n_trials
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::EmptyData("histogram has no trials"));
        }
        Ok(())
    }

    pub fn max_count(&self) -> u32 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(&n, &c)| n as f64 * c as f64).sum::<f64>() / self.n_trials as f64
    }
}

/// Monte Carlo draw of the detection histogram: with probability `ζ_R` a
/// Rydberg excitation decays after an exponential time, switching the count
/// rate from `φ_R` to `φ_G`.
pub fn sample_rydberg_histogram(params: &RydbergDetectionParams, n_trials: usize, seed: u64) -> Result<CountHistogram> {
    params.validate()?;
    let mut rng = stream_rng(seed, "histogram", 0);
    let decay = Exp::new(1.0 / params.tau_r).map_err(|_| Error::Domain {
        name: "tau_R",
        value: params.tau_r,
        expected: "> 0",
    })?;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, mean: f64| -> u32 {
        if mean <= 0.0 {
            0
        } else {
            Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
        }
    };
    let samples: Vec<u32> = (0..n_trials)
        .map(|_| {
            let mean = if rng.random::<f64>() < params.zeta_r {
                let t: f64 = decay.sample(&mut rng);
                if t >= params.t_i {
                    params.t_i * params.phi_r
                } else {
                    t * params.phi_r + (params.t_i - t) * params.phi_g
                }
            } else {
                params.t_i * params.phi_g
            };
            draw(&mut rng, mean)
        })
        .collect();
    Ok(CountHistogram::from_counts(&samples, params.t_i))
}

/// Quantities held fixed in the histogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownDetection {
    pub phi_g: f64,
    pub tau_r: f64,
    pub t_i: f64,
}

/// Correction applied to fitted `ζ_R` for the decay of the shelving state
/// between the microwave transfer and the optical detection.
pub const SHELVING_DECAY_CORRECTION: f64 = 1.0 / 0.987;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// True when the estimate sits on a parameter bound.
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RydbergFit {
    pub zeta_r: f64,
    pub zeta_r_corrected: f64,
    pub phi_r: f64,
    /// 95% profile-likelihood interval on `ζ_R`.
    pub zeta_r_interval: Interval,
    /// 95% profile-likelihood interval on `φ_R`.
    pub phi_r_interval: Interval,
    pub log_likelihood: f64,
    pub n_trials: u64,
}

struct HistogramLikelihood<'a> {
    hist: &'a CountHistogram,
    known: KnownDetection,
    support: usize,
    rule: GaussLegendre,
    ground: Vec<f64>,
}

impl HistogramLikelihood<'_> {
    /// Multinomial log-likelihood at `(ζ_R, μ_R = t_i φ_R)`.
    fn log_likelihood(&self, zeta: f64, mean_r: f64) -> f64 {
        let phi_r = mean_r / self.known.t_i;
        let rydberg = rydberg_branch_pmf(
            self.known.phi_g,
            phi_r,
            self.known.tau_r,
            self.known.t_i,
            self.support,
            &self.rule,
        );
        self.hist
            .counts
            .iter()
            .map(|(&n, &c)| {
                let p = zeta * rydberg[n as usize] + (1.0 - zeta) * self.ground[n as usize];
                c as f64 * p.max(1e-300).ln()
            })
            .sum()
    }
}

/// Maximum-likelihood `(ζ_R, φ_R)` from a detection histogram, with
/// `φ_G`, `τ_R` and `t_i` known.
pub fn fit_rydberg_probability(hist: &CountHistogram, known: KnownDetection) -> Result<RydbergFit> {
    hist.validate()?;
    check_positive("phi_G", known.phi_g)?;
    check_positive("tau_R", known.tau_r)?;
    check_positive("t_i", known.t_i)?;
    if hist.counts.len() < 2 {
        return Err(Error::Unidentifiable(
            "histogram occupies a single bin; ζ_R and φ_R cannot be separated".into(),
        ));
    }
    let mean_g = known.phi_g * known.t_i;
    let support = ((mean_g + 10.0 * mean_g.sqrt()).ceil() as usize + 5).max(hist.max_count() as usize + 1);
    let mut ground = vec![0.0; support];
    poisson_pmf_into(mean_g, &mut ground);
    let model = HistogramLikelihood {
        hist,
        known,
        support,
        rule: GaussLegendre::new(64),
        ground,
    };

    // grid seed over ζ ∈ [0,1], μ_R ∈ [0, μ_G]
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=20 {
        let zeta = i as f64 / 20.0;
        for j in 0..20 {
            let mean_r = mean_g * j as f64 / 20.0;
            let ll = model.log_likelihood(zeta, mean_r);
            if ll > best.0 {
                best = (ll, zeta, mean_r);
            }
        }
    }
    let (x, neg_ll) = nelder_mead(
        |p| -model.log_likelihood(p[0], p[1]),
        &[best.1, best.2],
        &[0.05, 0.05 * mean_g],
        &[0.0, 0.0],
        &[1.0, mean_g],
        1e-12,
        2000,
    );
    let (zeta_hat, mean_r_hat, ll_hat) = (x[0], x[1], -neg_ll);

    // 95% profile-likelihood intervals: 2ΔlnL = 3.84
    const DROP: f64 = 1.920_729_4;
    let profile_zeta = |zeta: f64| -> f64 {
        let m = golden_section_min(|mr| -model.log_likelihood(zeta, mr), 0.0, mean_g, 1e-7 * mean_g);
        model.log_likelihood(zeta, m)
    };
    let profile_mean = |mr: f64| -> f64 {
        let z = golden_section_min(|z| -model.log_likelihood(z, mr), 0.0, 1.0, 1e-9);
        model.log_likelihood(z, mr)
    };
    // On the ridge φ_R → φ_G the likelihood is nearly flat in ζ_R and the
    // raw maximum wanders with sampling noise. When the likelihood-ratio test
    // does not reject ζ_R = 0 at 95%, the estimate is reported on that bound.
    let (zeta_hat, mean_r_hat, ll_hat) = {
        let null_mean = golden_section_min(|mr| -model.log_likelihood(0.0, mr), 0.0, mean_g, 1e-7 * mean_g);
        let ll_null = model.log_likelihood(0.0, null_mean);
        if ll_null >= ll_hat - DROP {
            (0.0, null_mean, ll_null)
        } else {
            (zeta_hat, mean_r_hat, ll_hat)
        }
    };
    let zeta_interval = profile_interval(&profile_zeta, zeta_hat, ll_hat, 0.0, 1.0, DROP);
    let mean_interval = profile_interval(&profile_mean, mean_r_hat, ll_hat, 0.0, mean_g, DROP);

    Ok(RydbergFit {
        zeta_r: zeta_hat,
        zeta_r_corrected: zeta_hat * SHELVING_DECAY_CORRECTION,
        phi_r: mean_r_hat / known.t_i,
        zeta_r_interval: zeta_interval,
        phi_r_interval: Interval {
            lower: mean_interval.lower / known.t_i,
            upper: mean_interval.upper / known.t_i,
            one_sided: mean_interval.one_sided,
        },
        log_likelihood: ll_hat,
        n_trials: hist.n_trials,
    })
}

fn profile_interval<F: Fn(f64) -> f64>(profile: &F, best: f64, ll_best: f64, lo: f64, hi: f64, drop: f64) -> Interval {
    let target = ll_best - drop;
    let span = hi - lo;
    let at_bound = (best - lo).abs() < 1e-6 * span || (hi - best).abs() < 1e-6 * span;
    let edge = |bound: f64| -> f64 {
        if profile(bound) >= target {
            return bound;
        }
        let (mut inside, mut outside) = (best, bound);
        for _ in 0..50 {
            let mid = 0.5 * (inside + outside);
            if profile(mid) >= target {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() < 1e-7 * span {
                break;
            }
        }
        0.5 * (inside + outside)
    };
    Interval {
        lower: edge(lo),
        upper: edge(hi),
        one_sided: at_bound,
    }
}
