use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use photonic_qubit::fock::{g2_from_state, DensityMatrix};
use photonic_qubit::measurement::{
    fit_rydberg_probability, g2_estimate, photon_number_counts, rydberg_histogram_pmf, sample_dataset,
    sample_homodyne, sample_rydberg_histogram, spd_counts, split_hbt, CountHistogram, G2Estimate,
    KnownDetection, QuadratureDataset, RydbergDetectionParams, RydbergFit, SCHEMA,
};
use photonic_qubit::numerics::linspace;
use photonic_qubit::protocol::{
    adiabatic_emission_probability, emitted_state, integrate_single_excitation, photon_flux_adiabatic,
    quadrature_stats_closed_form, read_ramp, required_step, EfficiencyBudget, PulseProfile,
};
use photonic_qubit::seeding::derive_seed;
use photonic_qubit::tomography::{
    fit_dephasing, maxlik_reconstruct, wigner_map, DephasingFit, GridSpec, ReconstructionConfig,
    ReconstructionReport, ThetaStats,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};

pub const BUDGET_JSON: &str = "budget.json";
pub const STATS_CSV: &str = "stats.csv";
pub const DATASET_DIR: &str = "dataset";
pub const SPD_CSV: &str = "spd_counts.csv";
pub const G2_JSON: &str = "g2.json";
pub const HISTOGRAM_JSON: &str = "rydberg_histogram.json";
pub const SWEEP_CSV: &str = "sweep_stats.csv";
pub const RECONSTRUCTION_JSON: &str = "reconstruction.json";
pub const WIGNER_CSV: &str = "wigner.csv";
pub const FIT_DEPHASING_JSON: &str = "fit_dephasing.json";
pub const FIT_RYDBERG_JSON: &str = "fit_rydberg.json";
pub const SUMMARY_JSON: &str = "summary.json";

/// Relative difference tolerated between recorded and requested efficiency.
const EFFICIENCY_MISMATCH: f64 = 1e-6;

const DEFAULT_SWEEP_POINTS: usize = 25;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(photonic_qubit::Error::from)
        .context(|| path.display().to_string())
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Core {
            context: path.display().to_string(),
            source: photonic_qubit::Error::Parse(format!("{other:?}")),
        },
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_io(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_profile(path: &Path, profile: &PulseProfile, quantity: &str) -> CliResult<()> {
    profile
        .write_csv(create(path)?, quantity)
        .context(|| path.display().to_string())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn drive_profile(config: &RunConfig) -> CliResult<PulseProfile> {
    let p = &config.protocol;
    let n = (config.read_window / required_step(p, p.omega_max)).ceil() as usize + 1;
    read_ramp(p.omega_max, config.ramp_time, config.read_window, n).context(|| "protocol read ramp".into())
}

/// Efficiency of the detected homodyne statistics, `ζe^{-2γ₁t_s}·η_det`.
fn detected_efficiency(config: &RunConfig) -> CliResult<f64> {
    Ok(config
        .protocol
        .output_efficiency()
        .context(|| "protocol".into())?
        * config.detection.homodyne_efficiency)
}

fn sweep_angles(config: &RunConfig) -> Vec<f64> {
    config.sweep.clone().unwrap_or_else(|| {
        (0..DEFAULT_SWEEP_POINTS)
            .map(|k| k as f64 * TAU / DEFAULT_SWEEP_POINTS as f64)
            .collect()
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BudgetReport {
    schema: String,
    #[serde(flatten)]
    budget: EfficiencyBudget,
    zeta: f64,
    gamma1_per_s: f64,
    output_efficiency: f64,
    detected_homodyne_efficiency: f64,
    adiabatic_emission: f64,
    ode_emission: f64,
    ode_dipole_loss: f64,
    adiabatic_peak_time_s: f64,
    ode_peak_time_s: f64,
}

pub fn simulate(config: &RunConfig) -> CliResult<()> {
    let out = &config.output_dir;
    ensure_dir(out)?;
    let p = &config.protocol;
    let budget = p.efficiency().context(|| "protocol".into())?;
    let omega = drive_profile(config)?;
    let adiabatic = photon_flux_adiabatic(&omega, p, budget.eta_rem).context(|| "adiabatic flux".into())?;
    let ode = integrate_single_excitation(&omega, p).context(|| "single-excitation dynamics".into())?;
    let ode_flux = PulseProfile::from_real(
        omega.times().to_vec(),
        &ode.flux.real_values().iter().map(|f| f * budget.eta_rem).collect::<Vec<_>>(),
    )
    .context(|| "ODE flux".into())?;

    write_profile(&out.join("omega.csv"), &omega, "read Rabi frequency in rad/s")?;
    write_profile(&out.join("flux_adiabatic.csv"), &adiabatic, "adiabatic photon flux in 1/s")?;
    write_profile(&out.join("flux_ode.csv"), &ode_flux, "ODE photon flux in 1/s")?;

    let report = BudgetReport {
        schema: SCHEMA.into(),
        budget,
        zeta: p.readout_transmission().context(|| "protocol".into())?,
        gamma1_per_s: p.gamma1,
        output_efficiency: p.output_efficiency().context(|| "protocol".into())?,
        detected_homodyne_efficiency: detected_efficiency(config)?,
        adiabatic_emission: adiabatic_emission_probability(&omega, p, budget.eta_rem)
            .context(|| "adiabatic flux".into())?,
        ode_emission: ode.total_emission * budget.eta_rem,
        ode_dipole_loss: ode.dipole_loss,
        adiabatic_peak_time_s: adiabatic.peak_time(),
        ode_peak_time_s: ode.flux.peak_time(),
    };
    write_json(&out.join(BUDGET_JSON), &report)?;

    let eta = detected_efficiency(config)?;
    let rows = sweep_angles(config)
        .into_iter()
        .map(|theta| {
            let s = quadrature_stats_closed_form(theta, eta, p.gamma2, p.t_storage).context(|| "sweep".into())?;
            Ok(vec![
                theta.to_string(),
                eta.to_string(),
                s.mean_x.to_string(),
                s.mean_p.to_string(),
                s.var_x.to_string(),
                s.var_p.to_string(),
            ])
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_rows(
        &out.join(STATS_CSV),
        &["theta_rad", "eta", "mean_x", "mean_p", "var_x", "var_p"],
        rows,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct G2Report {
    schema: String,
    g2_state: Option<f64>,
    estimate: Option<G2Estimate>,
    note: Option<String>,
    spd_efficiency: f64,
    background_per_pulse: f64,
    pulses_per_trial: usize,
}

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

pub fn sample(config: &RunConfig) -> CliResult<()> {
    let out = &config.output_dir;
    ensure_dir(out)?;
    let p = &config.protocol;
    let dim = config.tomography.dim();
    let state = emitted_state(p, p.theta, dim).context(|| "emitted state".into())?;
    let homodyne_root = derive_seed(config.seed, "homodyne", 0);

    let phases = photonic_qubit::measurement::default_phases();
    let data = sample_dataset(
        &state,
        &phases,
        config.detection.homodyne_efficiency,
        config.sampling.samples_per_phase,
        homodyne_root,
    )
    .context(|| "homodyne sampling".into())?;
    let dataset_dir = out.join(DATASET_DIR);
    data.write_dir(&dataset_dir, "sqrt-flux")
        .context(|| dataset_dir.display().to_string())?;
    println!("wrote {} ({} phases)", dataset_dir.display(), phases.len());

    // SPD record: adiabatic pulse shape scaled to the emitted photon number
    let omega = drive_profile(config)?;
    let flux = photon_flux_adiabatic(&omega, p, 1.0).context(|| "adiabatic flux".into())?;
    let area = flux.integral();
    let mean_n = state.mean_photon_number();
    let scale = if area > 0.0 { mean_n / area } else { 0.0 };
    let scaled = PulseProfile::from_real(
        flux.times().to_vec(),
        &flux.real_values().iter().map(|f| f * scale).collect::<Vec<_>>(),
    )
    .context(|| "SPD flux".into())?;
    let counts = spd_counts(
        &scaled,
        config.detection.spd_efficiency,
        config.detection.background_rate,
        config.sampling.n_pulses,
        derive_seed(config.seed, "spd", 0),
    )
    .context(|| "SPD sampling".into())?;
    write_rows(
        &out.join(SPD_CSV),
        &["pulse", "count"],
        counts.iter().enumerate().map(|(k, c)| vec![k.to_string(), c.to_string()]),
    )?;

    let background_per_pulse = config.detection.background_rate * config.read_window;
    let photons = photon_number_counts(
        &state.diagonal(),
        config.detection.spd_efficiency,
        background_per_pulse,
        config.sampling.n_pulses,
        derive_seed(config.seed, "spd", 1),
    )
    .context(|| "photon-number sampling".into())?;
    let record = split_hbt(&photons, derive_seed(config.seed, "spd", 2));
    let (estimate, note) = match g2_estimate(&record, config.sampling.pulses_per_trial) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    write_json(
        &out.join(G2_JSON),
        &G2Report {
            schema: SCHEMA.into(),
            g2_state: g2_from_state(&state).ok(),
            estimate,
            note,
            spd_efficiency: config.detection.spd_efficiency,
            background_per_pulse,
            pulses_per_trial: config.sampling.pulses_per_trial,
        },
    )?;

    let hist = sample_rydberg_histogram(
        &config.rydberg,
        config.sampling.histogram_trials,
        derive_seed(config.seed, "histogram", 0),
    )
    .context(|| "Rydberg histogram".into())?;
    write_json(&out.join(HISTOGRAM_JSON), &hist)?;

    if let Some(thetas) = &config.sweep {
        let rows = thetas
            .iter()
            .enumerate()
            .map(|(k, &theta)| {
                let s = emitted_state(p, theta, dim).context(|| format!("sweep theta {theta}"))?;
                let n = config.sampling.samples_per_phase;
                let eta = config.detection.homodyne_efficiency;
                let x = sample_homodyne(&s, 0.0, eta, n, derive_seed(homodyne_root, "sweep", 2 * k as u64))
                    .context(|| "sweep sampling".into())?;
                let q = sample_homodyne(&s, PI / 2.0, eta, n, derive_seed(homodyne_root, "sweep", 2 * k as u64 + 1))
                    .context(|| "sweep sampling".into())?;
                let (mean_x, var_x) = sample_moments(&x);
                let (_, var_p) = sample_moments(&q);
                Ok(vec![theta.to_string(), mean_x.to_string(), var_x.to_string(), var_p.to_string()])
            })
            .collect::<CliResult<Vec<_>>>()?;
        write_rows(&out.join(SWEEP_CSV), &["theta_rad", "mean_x", "var_x", "var_p"], rows)?;
    }
    Ok(())
}

pub fn tomo(config: &RunConfig, dataset: Option<&Path>, efficiency: Option<f64>) -> CliResult<()> {
    let out = &config.output_dir;
    ensure_dir(out)?;
    let dir: PathBuf = dataset.map(Path::to_path_buf).unwrap_or_else(|| out.join(DATASET_DIR));
    if !dir.is_dir() {
        return Err(CliError::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let (data, sidecars): (QuadratureDataset, _) =
        QuadratureDataset::read_dir(&dir).context(|| dir.display().to_string())?;
    let eta = efficiency.unwrap_or(config.detection.homodyne_efficiency);
    let recon_config = ReconstructionConfig {
        detection_efficiency: eta,
        ..config.tomography
    };
    recon_config
        .validate()
        .map_err(|e| CliError::config("--efficiency", e.to_string()))?;
    let mut warnings = Vec::new();
    if sidecars.is_empty() {
        warnings.push(format!("{}: no sidecar metadata; assuming efficiency {eta}", dir.display()));
    }
    for (k, sc) in sidecars.iter().enumerate() {
        if (sc.efficiency - eta).abs() > EFFICIENCY_MISMATCH * eta {
            warnings.push(format!(
                "phase_{k}: recorded detection efficiency {} differs from reconstruction efficiency {eta}",
                sc.efficiency
            ));
        }
    }
    let result = maxlik_reconstruct(&data, &recon_config).context(|| dir.display().to_string())?;
    let grid = wigner_map(&result.state, &GridSpec::default()).context(|| "wigner grid".into())?;
    let mut report =
        ReconstructionReport::new(&result, &recon_config, &grid).context(|| "reconstruction report".into())?;
    report.warnings.splice(0..0, warnings);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&out.join(RECONSTRUCTION_JSON), &report)?;
    let wpath = out.join(WIGNER_CSV);
    grid.write_csv(create(&wpath)?).context(|| wpath.display().to_string())?;
    println!("wrote {}", wpath.display());
    Ok(())
}

fn read_sweep(path: &Path) -> CliResult<Vec<ThetaStats>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for record in reader.deserialize::<SweepRow>() {
        let r = record.map_err(csv_io(path))?;
        rows.push(ThetaStats {
            theta: r.theta_rad,
            mean_x: r.mean_x,
            var_x: r.var_x,
            var_p: r.var_p,
        });
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct SweepRow {
    theta_rad: f64,
    mean_x: f64,
    var_x: f64,
    var_p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DephasingReport {
    schema: String,
    input: String,
    eta: f64,
    t_s: f64,
    #[serde(flatten)]
    fit: DephasingFit,
    gamma2_over_2pi_hz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RydbergReport {
    schema: String,
    input: String,
    known: KnownDetection,
    #[serde(flatten)]
    fit: RydbergFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Dephasing,
    Rydberg,
}

pub fn fit(config: &RunConfig, kind: FitKind, input: Option<&Path>, eta: Option<f64>) -> CliResult<()> {
    let out = &config.output_dir;
    ensure_dir(out)?;
    match kind {
        FitKind::Dephasing => {
            let path = input.map(Path::to_path_buf).unwrap_or_else(|| out.join(SWEEP_CSV));
            let stats = read_sweep(&path)?;
            let eta = match eta {
                Some(e) => e,
                None => detected_efficiency(config)?,
            };
            let t_s = config.protocol.t_storage;
            let fit = fit_dephasing(&stats, eta, t_s).context(|| path.display().to_string())?;
            write_json(
                &out.join(FIT_DEPHASING_JSON),
                &DephasingReport {
                    schema: SCHEMA.into(),
                    input: path.display().to_string(),
                    eta,
                    t_s,
                    gamma2_over_2pi_hz: fit.gamma2 / TAU,
                    fit,
                },
            )
        }
        FitKind::Rydberg => {
            let path = input.map(Path::to_path_buf).unwrap_or_else(|| out.join(HISTOGRAM_JSON));
            let hist: CountHistogram = read_json(&path)?;
            hist.validate().context(|| path.display().to_string())?;
            let known = KnownDetection {
                phi_g: config.rydberg.phi_g,
                tau_r: config.rydberg.tau_r,
                t_i: hist.integration_time,
            };
            let fit = fit_rydberg_probability(&hist, known).context(|| path.display().to_string())?;
            write_json(
                &out.join(FIT_RYDBERG_JSON),
                &RydbergReport {
                    schema: SCHEMA.into(),
                    input: path.display().to_string(),
                    known,
                    fit,
                },
            )
        }
    }
}

fn optional_json(path: &Path) -> CliResult<Option<Value>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn report(config: &RunConfig) -> CliResult<()> {
    let out = &config.output_dir;
    ensure_dir(out)?;
    let mut sections = serde_json::Map::new();
    let mut missing = Vec::new();
    for (key, file) in [
        ("budget", BUDGET_JSON),
        ("g2", G2_JSON),
        ("reconstruction", RECONSTRUCTION_JSON),
        ("fit_dephasing", FIT_DEPHASING_JSON),
        ("fit_rydberg", FIT_RYDBERG_JSON),
    ] {
        match optional_json(&out.join(file))? {
            Some(v) => {
                sections.insert(key.into(), v);
            }
            None => missing.push(file),
        }
    }

    // quadrature panel: model curve plus measured sweep when present
    let p = &config.protocol;
    let eta = detected_efficiency(config)?;
    let gamma2 = sections
        .get("fit_dephasing")
        .and_then(|v| v["gamma2"].as_f64())
        .unwrap_or(p.gamma2);
    let mut rows = Vec::new();
    for theta in linspace(0.0, TAU, 73) {
        let s = quadrature_stats_closed_form(theta, eta, gamma2, p.t_storage).context(|| "model curve".into())?;
        rows.push(vec![
            theta.to_string(),
            "model".into(),
            s.mean_x.to_string(),
            s.var_x.to_string(),
            s.var_p.to_string(),
        ]);
    }
    let sweep_path = out.join(SWEEP_CSV);
    if sweep_path.exists() {
        for s in read_sweep(&sweep_path)? {
            rows.push(vec![
                s.theta.to_string(),
                "measured".into(),
                s.mean_x.to_string(),
                s.var_x.to_string(),
                s.var_p.to_string(),
            ]);
        }
    }
    let panel_quadratures = out.join("panel_quadratures.csv");
    write_rows(&panel_quadratures, &["theta_rad", "source", "mean_x", "var_x", "var_p"], rows)?;

    let mut panels = vec!["panel_quadratures.csv"];

    let hist_path = out.join(HISTOGRAM_JSON);
    if hist_path.exists() {
        let hist: CountHistogram = read_json(&hist_path)?;
        let mut model = RydbergDetectionParams {
            t_i: hist.integration_time,
            ..config.rydberg
        };
        if let Some(fit) = sections.get("fit_rydberg") {
            model.zeta_r = fit["zeta_r"].as_f64().unwrap_or(model.zeta_r);
            model.phi_r = fit["phi_r"].as_f64().unwrap_or(model.phi_r);
        }
        let support = (hist.max_count() as usize + 1).max(model.default_support());
        let pmf = rydberg_histogram_pmf(&model, Some(support)).context(|| "histogram model".into())?;
        let path = out.join("panel_rydberg_histogram.csv");
        write_rows(
            &path,
            &["n", "observed_fraction", "model_pmf"],
            pmf.iter().enumerate().map(|(n, q)| {
                let seen = hist.counts.get(&(n as u32)).copied().unwrap_or(0) as f64 / hist.n_trials as f64;
                vec![n.to_string(), seen.to_string(), q.to_string()]
            }),
        )?;
        panels.push("panel_rydberg_histogram.csv");
    }

    if let Some(rec) = sections.get("reconstruction") {
        let rho: DensityMatrix = serde_json::from_value(rec["rho"].clone())
            .map_err(photonic_qubit::Error::from)
            .context(|| out.join(RECONSTRUCTION_JSON).display().to_string())?;
        let path = out.join("panel_density_matrix.csv");
        let dim = rho.dim();
        write_rows(
            &path,
            &["m", "n", "re", "im"],
            (0..dim * dim).map(|k| {
                let z = rho.get(k / dim, k % dim);
                vec![(k / dim).to_string(), (k % dim).to_string(), z.re.to_string(), z.im.to_string()]
            }),
        )?;
        panels.push("panel_density_matrix.csv");
        let wigner = out.join(WIGNER_CSV);
        if wigner.exists() {
            panels.push(WIGNER_CSV);
        }
    }

    let summary = json!({
        "schema": SCHEMA,
        "seed": config.seed,
        "sections": Value::Object(sections),
        "missing": missing,
        "panels": panels,
    });
    write_json(&out.join(SUMMARY_JSON), &summary)
}
