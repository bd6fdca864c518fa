//! `sta-coupler` command line: profiles, simulations, sweeps and checks
//! written as CSV or JSON.
//!
//! Exit codes: 0 success, 2 bad arguments or config, 3 numerical failure,
//! unreached threshold or I/O error.

pub mod config;
pub mod emit;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};
use sta_coupler::coupler::simulate;
use sta_coupler::schedule::geometry_synthesis;
use sta_coupler::splitter::{simulate_splitter, SplitterParams};
use sta_coupler::sweep::{
    robust_region_fraction, run_sweep, run_sweep_with_workers, ThresholdQuery,
};
use sta_coupler::{ModelParams, Side, Solver};
use thiserror::Error;

use config::{Format, RunConfig};
use emit::{fmt_float, write_json, Provenance, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn is_broken_pipe(&self) -> bool {
        use std::io::ErrorKind::BrokenPipe;
        match self {
            CliError::Io(e) => e.kind() == BrokenPipe,
            CliError::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(e) if e.kind() == BrokenPipe),
            CliError::Json(e) => e.io_error_kind() == Some(BrokenPipe),
            _ => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

impl From<sta_coupler::Error> for CliError {
    fn from(e: sta_coupler::Error) -> Self {
        if e.is_numerical() || matches!(e, sta_coupler::Error::TargetNotReached { .. }) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<sta_coupler::ScheduleError> for CliError {
    fn from(e: sta_coupler::ScheduleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sta-coupler",
    version,
    about = "Sign-flip coupler design with counterdiabatic shortcuts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coupling and mismatch schedules along the device.
    Profile(ProfileArgs),
    /// Two-guide propagation: z, I1, I2.
    Simulate(SimulateArgs),
    /// Three-guide beam splitter: z, I1, I2, I3.
    Splitter(SplitterArgs),
    /// Metric over a two-parameter grid.
    Sweep(SweepArgs),
    /// Shortest total length whose transfer reaches a target.
    Threshold(ThresholdArgs),
    /// Adiabaticity and coupling-bound diagnostics as JSON.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file holding one command object, or a JSON result to rerun.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Design {
    /// Peak coupling Ω0, mm⁻¹.
    #[arg(long, allow_negative_numbers = true)]
    omega0: Option<f64>,
    /// Mismatch magnitude Δ0, mm⁻¹.
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    /// Device length 2L, mm.
    #[arg(long, allow_negative_numbers = true)]
    total_length: Option<f64>,
}

#[derive(Debug, Args)]
struct StaFlag {
    /// Use the counterdiabatic effective schedule.
    #[arg(long, overrides_with = "no_sta")]
    sta: bool,
    /// Use the bare schedule (overrides a config file).
    #[arg(long)]
    no_sta: bool,
}

impl StaFlag {
    fn value(&self) -> Option<bool> {
        match (self.sta, self.no_sta) {
            (true, _) => Some(true),
            (false, true) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Adaptive integrator tolerance.
    #[arg(long, conflicts_with = "steps")]
    tol: Option<f64>,
    /// Use the piecewise-constant integrator with this many steps.
    #[arg(long)]
    steps: Option<usize>,
}

impl SolverArgs {
    fn value(&self) -> Option<Solver> {
        match (self.tol, self.steps) {
            (Some(tol), _) => Some(Solver::Adaptive { tol }),
            (None, Some(steps)) => Some(Solver::PiecewiseConstant { steps }),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: Design,
    #[command(flatten)]
    sta: StaFlag,
    /// Number of grid points on [−L, L].
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: Design,
    #[command(flatten)]
    sta: StaFlag,
    #[command(flatten)]
    solver: SolverArgs,
    /// Guide the light is launched into (1 or 2).
    #[arg(long)]
    input_guide: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    ReducedCd,
    Direct,
}

impl ModeArg {
    fn key(self) -> &'static str {
        match self {
            ModeArg::ReducedCd => "reduced_cd",
            ModeArg::Direct => "direct",
        }
    }
}

#[derive(Debug, Args)]
struct SplitterArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: Design,
    #[command(flatten)]
    sta: StaFlag,
    #[command(flatten)]
    solver: SolverArgs,
    /// How the correction is built for three guides.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ParamArg {
    Omega0,
    Delta0,
    TotalLength,
}

impl ParamArg {
    fn key(self) -> &'static str {
        match self {
            ParamArg::Omega0 => "omega0",
            ParamArg::Delta0 => "delta0",
            ParamArg::TotalLength => "total_length",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MetricArg {
    FinalI2,
    SplittingInfidelity,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed values; swept parameters may be left out.
    #[command(flatten)]
    design: Design,
    #[command(flatten)]
    sta: StaFlag,
    #[arg(long, value_enum)]
    x_param: Option<ParamArg>,
    #[arg(long, allow_negative_numbers = true)]
    x_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    x_max: Option<f64>,
    #[arg(long)]
    x_count: Option<usize>,
    #[arg(long, value_enum)]
    y_param: Option<ParamArg>,
    #[arg(long, allow_negative_numbers = true)]
    y_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    y_max: Option<f64>,
    #[arg(long)]
    y_count: Option<usize>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    splitter_mode: Option<ModeArg>,
    /// Also report the fraction of cells at or above this value.
    #[arg(long)]
    target: Option<f64>,
    /// Worker threads; the result does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_negative_numbers = true)]
    omega0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    #[command(flatten)]
    sta: StaFlag,
    /// Required final I2.
    #[arg(long)]
    target: Option<f64>,
    /// Search range for 2L, mm.
    #[arg(long, allow_negative_numbers = true)]
    min_length: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    max_length: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Without a format only the length is printed.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: Design,
    #[arg(long)]
    samples: Option<usize>,
}

fn put<T: Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(
            key.to_string(),
            serde_json::to_value(v).expect("flag values serialise"),
        );
    }
}

fn design_flags(m: &mut Map<String, Value>, d: &Design) {
    put(m, "omega0", d.omega0);
    put(m, "delta0", d.delta0);
    put(m, "total_length", d.total_length);
}

fn output_flag(m: &mut Map<String, Value>, c: &Common) {
    put(m, "output", c.output.as_ref());
}

fn axis_flags(
    param: Option<ParamArg>,
    min: Option<f64>,
    max: Option<f64>,
    count: Option<usize>,
) -> Option<Value> {
    let mut m = Map::new();
    put(&mut m, "parameter", param.map(ParamArg::key));
    put(&mut m, "min", min);
    put(&mut m, "max", max);
    put(&mut m, "count", count);
    (!m.is_empty()).then_some(Value::Object(m))
}

/// Command name, optional config path and the flag overrides.
fn flags(cmd: &Command) -> (&'static str, Option<&PathBuf>, Map<String, Value>) {
    let mut m = Map::new();
    match cmd {
        Command::Profile(a) => {
            design_flags(&mut m, &a.design);
            put(&mut m, "sta", a.sta.value());
            put(&mut m, "samples", a.samples);
            put(&mut m, "format", a.format);
            output_flag(&mut m, &a.common);
            ("profile", a.common.config.as_ref(), m)
        }
        Command::Simulate(a) => {
            design_flags(&mut m, &a.design);
            put(&mut m, "sta", a.sta.value());
            put(&mut m, "solver", a.solver.value());
            put(&mut m, "input_guide", a.input_guide);
            put(&mut m, "format", a.format);
            output_flag(&mut m, &a.common);
            ("simulate", a.common.config.as_ref(), m)
        }
        Command::Splitter(a) => {
            design_flags(&mut m, &a.design);
            put(&mut m, "sta", a.sta.value());
            put(&mut m, "solver", a.solver.value());
            put(&mut m, "mode", a.mode.map(ModeArg::key));
            put(&mut m, "format", a.format);
            output_flag(&mut m, &a.common);
            ("splitter", a.common.config.as_ref(), m)
        }
        Command::Sweep(a) => {
            let mut fixed = Map::new();
            design_flags(&mut fixed, &a.design);
            if !fixed.is_empty() {
                m.insert("fixed".into(), Value::Object(fixed));
            }
            put(
                &mut m,
                "axis_x",
                axis_flags(a.x_param, a.x_min, a.x_max, a.x_count),
            );
            put(
                &mut m,
                "axis_y",
                axis_flags(a.y_param, a.y_min, a.y_max, a.y_count),
            );
            put(&mut m, "sta", a.sta.value());
            put(
                &mut m,
                "metric",
                a.metric.map(|x| match x {
                    MetricArg::FinalI2 => "final_i2",
                    MetricArg::SplittingInfidelity => "splitting_infidelity",
                }),
            );
            put(&mut m, "tol", a.tol);
            put(&mut m, "splitter_mode", a.splitter_mode.map(ModeArg::key));
            put(&mut m, "target", a.target);
            put(&mut m, "workers", a.workers);
            put(&mut m, "format", a.format);
            output_flag(&mut m, &a.common);
            ("sweep", a.common.config.as_ref(), m)
        }
        Command::Threshold(a) => {
            put(&mut m, "omega0", a.omega0);
            put(&mut m, "delta0", a.delta0);
            put(&mut m, "sta", a.sta.value());
            put(&mut m, "target", a.target);
            put(&mut m, "min_length", a.min_length);
            put(&mut m, "max_length", a.max_length);
            put(&mut m, "tol", a.tol);
            put(&mut m, "format", a.format);
            output_flag(&mut m, &a.common);
            ("threshold", a.common.config.as_ref(), m)
        }
        Command::Check(a) => {
            design_flags(&mut m, &a.design);
            put(&mut m, "samples", a.samples);
            output_flag(&mut m, &a.common);
            ("check", a.common.config.as_ref(), m)
        }
    }
}

/// Swept parameters need no fixed value; fill them with zero.
fn fill_swept_fixed(body: &mut Map<String, Value>) {
    let swept: Vec<String> = ["axis_x", "axis_y"]
        .iter()
        .filter_map(|k| body.get(*k)?.get("parameter")?.as_str().map(str::to_string))
        .collect();
    let fixed = body
        .entry("fixed")
        .or_insert_with(|| Value::Object(Map::new()));
    if let Value::Object(f) = fixed {
        for p in swept {
            f.entry(p).or_insert(Value::from(0.0));
        }
    }
}

fn resolve(cmd: &Command) -> Result<RunConfig, CliError> {
    let (name, path, mut overrides) = flags(cmd);
    let file = path.map(|p| config::read_config_file(p)).transpose()?;
    if name == "sweep" {
        // Merge first so axes from either source are known.
        let mut body = match &file {
            Some(Value::Object(m)) => match m.get("sweep") {
                Some(Value::Object(b)) => b.clone(),
                _ => Map::new(),
            },
            _ => Map::new(),
        };
        config::overlay(&mut body, overrides.clone());
        fill_swept_fixed(&mut body);
        if let Some(fixed) = body.remove("fixed") {
            overrides.insert("fixed".into(), fixed);
        }
    }
    config::resolve(name, file, overrides)
}

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match resolve(&cli.command).and_then(|cfg| execute(&cfg, stdout)) {
        Ok(()) => EXIT_OK,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(e) if e.is_broken_pipe() => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a resolved configuration, writing to its output path or `stdout`.
pub fn execute(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cfg.output() {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            produce(cfg, &mut w)?;
            w.flush()?;
            Ok(())
        }
        None => produce(cfg, stdout),
    }
}

fn solver_provenance(cfg: &RunConfig, solver: Solver) -> Provenance {
    match solver {
        Solver::Adaptive { tol } => Provenance::new(cfg, "adaptive", Some(tol), None),
        Solver::PiecewiseConstant { steps } => {
            Provenance::new(cfg, "piecewise_constant", None, Some(steps))
        }
    }
}

fn emit_table(
    table: Table,
    extra: Map<String, Value>,
    format: Option<Format>,
    prov: &Provenance,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match format.unwrap_or(Format::Csv) {
        Format::Csv => table.write_csv(out),
        Format::Json => {
            let mut payload = table.to_json();
            payload.extend(extra);
            write_json(out, payload, prov)
        }
    }
}

fn produce(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match cfg {
        RunConfig::Profile(c) => {
            let p = ModelParams::with_total_length(c.omega0, c.delta0, c.total_length, c.sta)?;
            let mut names = vec!["z", "omega", "delta", "omega_a", "omega_eff", "delta_eff"];
            if c.calibration.is_some() {
                names.extend(["separation", "width_difference"]);
            }
            let mut table = Table::new(&names);
            let l = p.half_length;
            for k in 0..c.samples {
                let z = if k + 1 == c.samples {
                    l
                } else {
                    -l + p.total_length() * k as f64 / (c.samples - 1) as f64
                };
                let side = if z <= 0.0 { Side::Left } else { Side::Right };
                let pt = p.effective_schedule(z, Some(side))?;
                let (omega_eff, delta_eff) = p.coefficients(z, side);
                let mut row = vec![z, pt.omega, pt.delta, pt.omega_a, omega_eff, delta_eff];
                if let Some(calib) = &c.calibration {
                    let mut used = pt;
                    used.omega_eff = omega_eff;
                    used.delta_eff = delta_eff;
                    let g = geometry_synthesis(&used, calib)
                        .map_err(|e| CliError::Usage(format!("z = {z}: {e}")))?;
                    row.extend([g.separation, g.width_difference]);
                }
                table.push(&row);
            }
            let prov = Provenance::new(cfg, "closed_form", None, None);
            emit_table(table, Map::new(), c.format, &prov, out)
        }
        RunConfig::Simulate(c) => {
            let p = ModelParams::with_total_length(c.omega0, c.delta0, c.total_length, c.sta)?;
            let r = simulate(&p, c.input_guide, &c.solver)?;
            let mut table = Table::new(&["z", "I1", "I2"]);
            for s in &r.trajectory.samples {
                let [i1, i2] = s.intensities();
                table.push(&[s.z, i1, i2]);
            }
            let mut extra = Map::new();
            extra.insert("final_i2".into(), Value::from(r.final_i2));
            extra.insert(
                "max_norm_drift".into(),
                Value::from(r.trajectory.max_norm_drift()),
            );
            extra.insert("stats".into(), serde_json::to_value(r.trajectory.stats)?);
            emit_table(
                table,
                extra,
                c.format,
                &solver_provenance(cfg, c.solver),
                out,
            )
        }
        RunConfig::Splitter(c) => {
            let p = ModelParams::with_total_length(c.omega0, c.delta0, c.total_length, c.sta)?;
            let r = simulate_splitter(&SplitterParams::new(p, c.mode), &c.solver)?;
            let mut table = Table::new(&["z", "I1", "I2", "I3"]);
            for s in &r.trajectory.samples {
                let [i1, i2, i3] = s.intensities();
                table.push(&[s.z, i1, i2, i3]);
            }
            let mut extra = Map::new();
            extra.insert(
                "final_intensities".into(),
                Value::from(r.final_intensities.to_vec()),
            );
            extra.insert(
                "splitting_infidelity".into(),
                Value::from(r.splitting_infidelity),
            );
            extra.insert("dark_leakage".into(), Value::from(r.dark_leakage));
            extra.insert(
                "reduction_mismatch".into(),
                Value::from(r.reduction_mismatch),
            );
            extra.insert("stats".into(), serde_json::to_value(r.trajectory.stats)?);
            emit_table(
                table,
                extra,
                c.format,
                &solver_provenance(cfg, c.solver),
                out,
            )
        }
        RunConfig::Sweep(c) => {
            let spec = c.spec();
            let result = match c.workers {
                Some(n) => run_sweep_with_workers(&spec, n)?,
                None => run_sweep(&spec)?,
            };
            let key = |p| {
                serde_json::to_value(p)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            };
            let (xk, yk) = (key(spec.axis_x.parameter), key(spec.axis_y.parameter));
            match c.format.unwrap_or(Format::Csv) {
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(out);
                    let mut header = vec![format!("{yk}\\{xk}")];
                    header.extend(result.x.iter().map(|&x| fmt_float(x)));
                    w.write_record(&header)?;
                    for (y, row) in result.y.iter().zip(result.rows()) {
                        let mut rec = vec![fmt_float(*y)];
                        rec.extend(row.iter().map(|&v| fmt_float(v)));
                        w.write_record(&rec)?;
                    }
                    w.flush()?;
                    Ok(())
                }
                Format::Json => {
                    let mut payload = Map::new();
                    let axis =
                        |k: &str, v: &[f64]| serde_json::json!({ "parameter": k, "values": v });
                    payload.insert(
                        "axes".into(),
                        serde_json::json!({ "x": axis(&xk, &result.x), "y": axis(&yk, &result.y) }),
                    );
                    payload.insert(
                        "grid".into(),
                        Value::from(result.rows().map(|r| r.to_vec()).collect::<Vec<_>>()),
                    );
                    payload.insert("metric".into(), serde_json::to_value(spec.metric)?);
                    if let Some(t) = c.target {
                        payload.insert(
                            "robust_fraction".into(),
                            Value::from(robust_region_fraction(&result, t)),
                        );
                    }
                    write_json(
                        out,
                        payload,
                        &Provenance::new(cfg, "adaptive", Some(spec.tol), None),
                    )
                }
            }
        }
        RunConfig::Threshold(c) => {
            let t = ThresholdQuery {
                omega0: c.omega0,
                delta0: c.delta0,
                sta: c.sta,
                target: c.target,
                min_length: c.min_length,
                max_length: c.max_length,
                tol: c.tol,
            }
            .solve()?;
            match c.format {
                None => {
                    writeln!(out, "{}", t.total_length)?;
                    Ok(())
                }
                Some(format) => {
                    let mut table = Table::new(&["total_length", "metric"]);
                    table.push(&[t.total_length, t.metric]);
                    emit_table(
                        table,
                        Map::new(),
                        Some(format),
                        &Provenance::new(cfg, "adaptive", Some(c.tol), None),
                        out,
                    )
                }
            }
        }
        RunConfig::Check(c) => {
            let p = ModelParams::with_total_length(c.omega0, c.delta0, c.total_length, true)?;
            let d = p.diagnostics(c.samples)?;
            let Value::Object(payload) = serde_json::to_value(d)? else {
                unreachable!("diagnostics serialise to an object")
            };
            write_json(
                out,
                payload,
                &Provenance::new(cfg, "closed_form", None, None),
            )
        }
    }
}
