//! Run configuration loaded from TOML.
//!
//! Physical quantities carry their unit in the key name and are converted to
//! SI at parse time, e.g. `kappa_MHz = 2.8` becomes `κ = 2π·2.8e6 rad/s` and
//! `t_storage_us = 0.48` becomes `0.48e-6 s`. A quantity may be given under
//! any one of its accepted suffixes; unknown keys are rejected.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use photonic_qubit::measurement::{RydbergDetectionParams, DEFAULT_SAMPLES_PER_PHASE};
use photonic_qubit::protocol::{ProtocolParams, MEASURED_OUTPUT_EFFICIENCY};
use photonic_qubit::tomography::ReconstructionConfig;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    /// Cyclic frequency keys (`_MHz`, `_kHz`, `_Hz`) become angular rates.
    AngularRate,
    /// Count rates (`_per_s`, `_per_ms`, `_per_us`).
    CountRate,
    Time,
    Angle,
    Dimensionless,
}

impl Unit {
    fn suffixes(self) -> &'static [(&'static str, f64)] {
        match self {
            Unit::AngularRate => &[
                ("_MHz", TAU * 1e6),
                ("_kHz", TAU * 1e3),
                ("_Hz", TAU),
                ("_rad_per_s", 1.0),
            ],
            Unit::CountRate => &[("_per_s", 1.0), ("_per_ms", 1e3), ("_per_us", 1e6)],
            Unit::Time => &[("_s", 1.0), ("_ms", 1e-3), ("_us", 1e-6), ("_ns", 1e-9)],
            Unit::Angle => &[("_rad", 1.0), ("_deg", PI / 180.0), ("_pi", PI)],
            Unit::Dimensionless => &[("", 1.0)],
        }
    }
}

/// A TOML table whose keys are consumed as they are read, so leftovers can
/// be reported as unknown fields.
struct Section<'a> {
    name: String,
    table: Option<&'a Table>,
    used: Vec<String>,
}

impl<'a> Section<'a> {
    fn new(name: &str, table: Option<&'a Table>) -> Self {
        Self {
            name: name.into(),
            table,
            used: Vec::new(),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.into()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        let value = self.table?.get(key)?;
        self.used.push(key.into());
        Some(value)
    }

    fn number(&self, key: &str, value: &Value) -> CliResult<f64> {
        match value {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(CliError::config(self.field(key), format!("expected a number, found {}", other.type_str()))),
        }
    }

    /// Looks `base` up under each accepted suffix of `unit`, returning SI.
    fn quantity(&mut self, base: &str, unit: Unit) -> CliResult<Option<f64>> {
        let mut found: Option<(String, f64)> = None;
        for (suffix, scale) in unit.suffixes() {
            let key = format!("{base}{suffix}");
            if let Some(v) = self.raw(&key) {
                let x = self.number(&key, v)?;
                if let Some((first, _)) = &found {
                    return Err(CliError::config(
                        self.field(&key),
                        format!("conflicts with {}", self.field(first)),
                    ));
                }
                if !x.is_finite() {
                    return Err(CliError::config(self.field(&key), "must be finite"));
                }
                found = Some((key, x * scale));
            }
        }
        Ok(found.map(|(_, x)| x))
    }

    fn quantity_or(&mut self, base: &str, unit: Unit, default: f64) -> CliResult<f64> {
        Ok(self.quantity(base, unit)?.unwrap_or(default))
    }

    fn count(&mut self, key: &str, default: u64) -> CliResult<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(other) => Err(CliError::config(self.field(key), format!("expected a nonnegative integer, found {other}"))),
        }
    }

    /// A list of angles, e.g. `theta_pi = [0, 0.5, 1]`.
    fn angle_list(&mut self, base: &str) -> CliResult<Option<Vec<f64>>> {
        let mut found = None;
        for (suffix, scale) in Unit::Angle.suffixes() {
            let key = format!("{base}{suffix}");
            if let Some(v) = self.raw(&key) {
                let list = v
                    .as_array()
                    .ok_or_else(|| CliError::config(self.field(&key), "expected an array of numbers"))?
                    .iter()
                    .map(|x| self.number(&key, x).map(|x| x * scale))
                    .collect::<CliResult<Vec<_>>>()?;
                if found.is_some() {
                    return Err(CliError::config(self.field(&key), "angle list given twice"));
                }
                found = Some(list);
            }
        }
        Ok(found)
    }

    fn finish(self) -> CliResult<()> {
        if let Some(table) = self.table {
            if let Some(unknown) = table.keys().find(|k| !self.used.iter().any(|u| u == *k)) {
                return Err(CliError::config(self.field(unknown), "unknown key"));
            }
        }
        Ok(())
    }
}

fn subtable<'a>(root: &'a Table, name: &str) -> CliResult<Option<&'a Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(CliError::config(name, "expected a table")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub spd_efficiency: f64,
    pub homodyne_efficiency: f64,
    /// SPD background, counts/s.
    pub background_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub samples_per_phase: usize,
    pub n_pulses: usize,
    pub pulses_per_trial: usize,
    pub histogram_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: ProtocolParams,
    /// Read-beam turn-on time.
    pub ramp_time: f64,
    /// Length of the simulated read window.
    pub read_window: f64,
    pub detection: Detection,
    pub tomography: ReconstructionConfig,
    pub sampling: Sampling,
    pub rydberg: RydbergDetectionParams,
    pub sweep: Option<Vec<f64>>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_table(&Table::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config("<file>", e.to_string()))?;
        Self::from_table(&table)
    }

    fn from_table(root: &Table) -> CliResult<Self> {
        let mut top = Section::new("", Some(root));
        let seed = top.count("seed", 2026)?;
        let output_dir = match top.raw("output_dir") {
            None => PathBuf::from("out"),
            Some(Value::String(s)) => PathBuf::from(s),
            Some(_) => return Err(CliError::config("output_dir", "expected a string")),
        };
        for name in ["protocol", "detection", "tomography", "sampling", "rydberg", "sweep"] {
            top.raw(name);
        }
        top.finish()?;

        let defaults = ProtocolParams::default();
        let mut s = Section::new("protocol", subtable(root, "protocol")?);
        let mut protocol = ProtocolParams {
            g: s.quantity_or("g", Unit::AngularRate, defaults.g)?,
            kappa: s.quantity_or("kappa", Unit::AngularRate, defaults.kappa)?,
            gamma: s.quantity_or("gamma", Unit::AngularRate, defaults.gamma)?,
            omega_max: s.quantity_or("omega_max", Unit::AngularRate, defaults.omega_max)?,
            theta: s.quantity_or("theta", Unit::Angle, defaults.theta)?,
            gamma1: 0.0,
            gamma2: s.quantity_or("gamma2", Unit::AngularRate, defaults.gamma2)?,
            t_storage: s.quantity_or("t_storage", Unit::Time, defaults.t_storage)?,
            eta_exc: s.quantity_or("eta_exc", Unit::Dimensionless, defaults.eta_exc)?,
            eta_cav: s.quantity_or("eta_cav", Unit::Dimensionless, defaults.eta_cav)?,
            tau_s: s.quantity_or("tau_s", Unit::Time, defaults.tau_s)?,
        };
        let gamma1 = s.quantity("gamma1", Unit::CountRate)?;
        let target = s.quantity("output_efficiency", Unit::Dimensionless)?;
        let ramp_time = s.quantity_or("ramp_time", Unit::Time, 200e-9)?;
        let read_window = s.quantity_or("read_window", Unit::Time, 2e-6)?;
        s.finish()?;
        protocol
            .validate()
            .map_err(|e| CliError::config("protocol", e.to_string()))?;
        protocol.gamma1 = match (gamma1, target) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "protocol.gamma1_per_s",
                    "conflicts with protocol.output_efficiency",
                ))
            }
            (Some(g1), None) => g1,
            (None, Some(t)) => protocol
                .gamma1_for_output_efficiency(t)
                .map_err(|e| CliError::config("protocol.output_efficiency", e.to_string()))?,
            // without an explicit target, fall back to no extra decay when the
            // budget already sits below the measured efficiency
            (None, None) => protocol
                .gamma1_for_output_efficiency(MEASURED_OUTPUT_EFFICIENCY)
                .unwrap_or(0.0),
        };
        protocol
            .validate()
            .map_err(|e| CliError::config("protocol.gamma1_per_s", e.to_string()))?;
        positive("protocol.ramp_time", ramp_time)?;
        positive("protocol.read_window", read_window)?;

        let mut s = Section::new("detection", subtable(root, "detection")?);
        let detection = Detection {
            spd_efficiency: s.quantity_or("spd_efficiency", Unit::Dimensionless, 0.405)?,
            homodyne_efficiency: s.quantity_or("homodyne_efficiency", Unit::Dimensionless, 0.722)?,
            background_rate: s.quantity_or("background_rate", Unit::CountRate, 0.0)?,
        };
        s.finish()?;
        unit_interval("detection.spd_efficiency", detection.spd_efficiency)?;
        if !(detection.homodyne_efficiency > 0.0 && detection.homodyne_efficiency <= 1.0) {
            return Err(CliError::config("detection.homodyne_efficiency", "must lie in (0, 1]"));
        }
        if detection.background_rate < 0.0 {
            return Err(CliError::config("detection.background_rate_per_s", "must be >= 0"));
        }

        let mut s = Section::new("tomography", subtable(root, "tomography")?);
        let base = ReconstructionConfig::default();
        let tomography = ReconstructionConfig {
            fock_cutoff: s.count("fock_cutoff", base.fock_cutoff as u64)? as usize,
            iterations: s.count("iterations", base.iterations as u64)? as usize,
            bin_width: s.quantity_or("bin_width", Unit::Dimensionless, base.bin_width)?,
            x_range: s.quantity_or("x_range", Unit::Dimensionless, base.x_range)?,
            detection_efficiency: detection.homodyne_efficiency,
        };
        s.finish()?;
        tomography
            .validate()
            .map_err(|e| CliError::config("tomography", e.to_string()))?;

        let mut s = Section::new("sampling", subtable(root, "sampling")?);
        let sampling = Sampling {
            samples_per_phase: s.count("samples_per_phase", DEFAULT_SAMPLES_PER_PHASE as u64)? as usize,
            n_pulses: s.count("n_pulses", 100_000)? as usize,
            pulses_per_trial: s.count("pulses_per_trial", 100)? as usize,
            histogram_trials: s.count("histogram_trials", 10_000)? as usize,
        };
        s.finish()?;
        for (field, value) in [
            ("sampling.samples_per_phase", sampling.samples_per_phase),
            ("sampling.n_pulses", sampling.n_pulses),
            ("sampling.histogram_trials", sampling.histogram_trials),
        ] {
            if value == 0 {
                return Err(CliError::config(field, "must be at least 1"));
            }
        }
        if sampling.pulses_per_trial < 2 {
            return Err(CliError::config("sampling.pulses_per_trial", "must be at least 2"));
        }

        let mut s = Section::new("rydberg", subtable(root, "rydberg")?);
        let t_i = s.quantity_or("t_i", Unit::Time, 25e-6)?;
        let rydberg = RydbergDetectionParams {
            phi_g: s.quantity_or("phi_g", Unit::CountRate, 4.5 / t_i)?,
            phi_r: s.quantity_or("phi_r", Unit::CountRate, 0.3 / t_i)?,
            tau_r: s.quantity_or("tau_r", Unit::Time, 53e-6)?,
            t_i,
            zeta_r: s.quantity_or("zeta_r", Unit::Dimensionless, 0.94)?,
        };
        s.finish()?;
        rydberg
            .validate()
            .map_err(|e| CliError::config("rydberg", e.to_string()))?;

        let mut s = Section::new("sweep", subtable(root, "sweep")?);
        let sweep = s.angle_list("theta")?;
        s.finish()?;
        if let Some(list) = &sweep {
            if list.is_empty() {
                return Err(CliError::config("sweep.theta", "must not be empty"));
            }
        }

        Ok(Self {
            protocol,
            ramp_time,
            read_window,
            detection,
            tomography,
            sampling,
            rydberg,
            sweep,
            seed,
            output_dir,
        })
    }
}

fn positive(field: &str, value: f64) -> CliResult<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(CliError::config(field, "must be > 0"))
    }
}

fn unit_interval(field: &str, value: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CliError::config(field, "must lie in [0, 1]"))
    }
}
