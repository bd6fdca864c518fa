//! Run configuration: one command object per file, flags layered on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sta_coupler::schedule::GeometryCalibration;
use sta_coupler::splitter::SplitterMode;
use sta_coupler::sweep::{Axis, FixedParams, Metric, SweepSpec};
use sta_coupler::{ModelParams, Solver};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// A fully resolved command. Serialises as `{"<command>": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunConfig {
    Profile(ProfileConfig),
    Simulate(SimulateConfig),
    Splitter(SplitterConfig),
    Sweep(SweepConfig),
    Threshold(ThresholdConfig),
    Check(CheckConfig),
}

fn default_samples() -> usize {
    1000
}

fn default_check_samples() -> usize {
    10_001
}

fn default_guide() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-10
}

fn default_target() -> f64 {
    0.99
}

fn default_max_length() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub omega0: f64,
    pub delta0: f64,
    pub total_length: f64,
    #[serde(default)]
    pub sta: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Adds separation and width-difference columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<GeometryCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub omega0: f64,
    pub delta0: f64,
    pub total_length: f64,
    #[serde(default)]
    pub sta: bool,
    #[serde(default = "default_guide")]
    pub input_guide: usize,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterConfig {
    pub omega0: f64,
    pub delta0: f64,
    pub total_length: f64,
    #[serde(default)]
    pub sta: bool,
    #[serde(default)]
    pub mode: SplitterMode,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis_x: Axis,
    pub axis_y: Axis,
    pub fixed: FixedParams,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub sta: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub splitter_mode: SplitterMode,
    /// Reports the fraction of cells at or above this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn spec(&self) -> SweepSpec {
        SweepSpec {
            axis_x: self.axis_x,
            axis_y: self.axis_y,
            fixed: self.fixed,
            metric: self.metric,
            sta: self.sta,
            tol: self.tol,
            splitter_mode: self.splitter_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub omega0: f64,
    pub delta0: f64,
    #[serde(default)]
    pub sta: bool,
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default)]
    pub min_length: f64,
    #[serde(default = "default_max_length")]
    pub max_length: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub omega0: f64,
    pub delta0: f64,
    pub total_length: f64,
    #[serde(default = "default_check_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Profile(_) => "profile",
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Splitter(_) => "splitter",
            RunConfig::Sweep(_) => "sweep",
            RunConfig::Threshold(_) => "threshold",
            RunConfig::Check(_) => "check",
        }
    }

    pub fn output(&self) -> Option<&Path> {
        match self {
            RunConfig::Profile(c) => c.output.as_deref(),
            RunConfig::Simulate(c) => c.output.as_deref(),
            RunConfig::Splitter(c) => c.output.as_deref(),
            RunConfig::Sweep(c) => c.output.as_deref(),
            RunConfig::Threshold(c) => c.output.as_deref(),
            RunConfig::Check(c) => c.output.as_deref(),
        }
    }

    /// The configuration as it belongs in a provenance block: everything
    /// needed to rerun, minus where the output went.
    pub fn for_provenance(&self) -> RunConfig {
        let mut c = self.clone();
        match &mut c {
            RunConfig::Profile(c) => c.output = None,
            RunConfig::Simulate(c) => c.output = None,
            RunConfig::Splitter(c) => c.output = None,
            RunConfig::Sweep(c) => c.output = None,
            RunConfig::Threshold(c) => c.output = None,
            RunConfig::Check(c) => c.output = None,
        }
        c
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = |o: f64, d: f64, len: f64, sta: bool| {
            ModelParams::with_total_length(o, d, len, sta)
                .map(|_| ())
                .map_err(|e| CliError::Usage(e.to_string()))
        };
        let solver = |s: &Solver| match *s {
            Solver::Adaptive { tol } => tolerance(tol),
            Solver::PiecewiseConstant { steps: 0 } => {
                Err(CliError::Usage("steps must be >= 1".into()))
            }
            Solver::PiecewiseConstant { .. } => Ok(()),
        };
        match self {
            RunConfig::Profile(c) => {
                model(c.omega0, c.delta0, c.total_length, c.sta)?;
                if c.samples < 2 {
                    return Err(CliError::Usage(format!(
                        "samples must be >= 2, got {}",
                        c.samples
                    )));
                }
                Ok(())
            }
            RunConfig::Simulate(c) => {
                model(c.omega0, c.delta0, c.total_length, c.sta)?;
                if !(1..=2).contains(&c.input_guide) {
                    return Err(CliError::Usage(format!(
                        "input_guide must be 1 or 2, got {}",
                        c.input_guide
                    )));
                }
                solver(&c.solver)
            }
            RunConfig::Splitter(c) => {
                model(c.omega0, c.delta0, c.total_length, c.sta)?;
                solver(&c.solver)
            }
            RunConfig::Sweep(c) => {
                c.spec()
                    .validate()
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                if let Some(t) = c.target {
                    if !t.is_finite() {
                        return Err(CliError::Usage(format!("target must be finite, got {t}")));
                    }
                }
                if c.workers == Some(0) {
                    return Err(CliError::Usage("workers must be >= 1".into()));
                }
                Ok(())
            }
            RunConfig::Threshold(c) => {
                if !(c.min_length >= 0.0 && c.min_length < c.max_length && c.max_length.is_finite())
                {
                    return Err(CliError::Usage(format!(
                        "length range [{}, {}] must satisfy 0 <= min < max",
                        c.min_length, c.max_length
                    )));
                }
                model(c.omega0, c.delta0, c.max_length, c.sta)?;
                if !(c.target > 0.0 && c.target < 1.0) {
                    return Err(CliError::Usage(format!(
                        "target must lie in (0, 1), got {}",
                        c.target
                    )));
                }
                tolerance(c.tol)
            }
            RunConfig::Check(c) => {
                model(c.omega0, c.delta0, c.total_length, true)?;
                if c.samples < 2 {
                    return Err(CliError::Usage(format!(
                        "samples must be >= 2, got {}",
                        c.samples
                    )));
                }
                Ok(())
            }
        }
    }
}

fn tolerance(tol: f64) -> Result<(), CliError> {
    if (1e-12..=1e-4).contains(&tol) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("tol {tol} outside [1e-12, 1e-4]")))
    }
}

/// Reads a config file. An emitted JSON result is accepted too; its
/// provenance block carries the configuration that produced it.
pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config_value(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn parse_config_value(text: &str) -> Result<Value, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("provenance") => match m.remove("provenance") {
            Some(Value::Object(mut p)) => {
                p.remove("config").ok_or("provenance block has no config")?
            }
            _ => return Err("provenance must be an object".into()),
        },
        v => v,
    };
    match &value {
        Value::Object(m) if m.len() == 1 => Ok(value),
        Value::Object(m) => Err(format!(
            "expected exactly one top-level command object, found {} keys",
            m.len()
        )),
        _ => Err("expected a JSON object".into()),
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let value = parse_config_value(text).map_err(CliError::Usage)?;
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies flag values on top of the file's command object. Nested
/// objects merge key by key, except the solver, which is replaced whole.
pub fn overlay(base: &mut Map<String, Value>, flags: Map<String, Value>) {
    for (k, v) in flags {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(f)) if k != "solver" => overlay(b, f),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Merges an optional file with flag values into a validated config for
/// `command`.
pub fn resolve(
    command: &str,
    file: Option<Value>,
    flags: Map<String, Value>,
) -> Result<RunConfig, CliError> {
    let mut body = match file {
        None => Map::new(),
        Some(Value::Object(mut m)) => match m.remove(command) {
            Some(Value::Object(body)) => body,
            Some(_) => {
                return Err(CliError::Usage(format!(
                    "`{command}` entry must be an object"
                )))
            }
            None => {
                let found = m.keys().next().cloned().unwrap_or_default();
                return Err(CliError::Usage(format!(
                    "config is for `{found}`, not `{command}`"
                )));
            }
        },
        Some(_) => return Err(CliError::Usage("expected a JSON object".into())),
    };
    overlay(&mut body, flags);
    let mut doc = Map::new();
    doc.insert(command.to_string(), Value::Object(body));
    let cfg: RunConfig =
        serde_json::from_value(Value::Object(doc)).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
