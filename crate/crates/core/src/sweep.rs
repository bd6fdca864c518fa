//! Rectangular parameter sweeps of the final transfer metric, minimal device
//! lengths and robust-region areas.
//!
//! Every cell is an independent simulation written into its own slot, so a
//! grid is bit-identical for any number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupler::simulate;
use crate::propagator::Solver;
use crate::schedule::ModelParams;
use crate::splitter::{simulate_splitter, SplitterMode, SplitterParams};
use crate::Error;

/// Bisection stops once the bracket is this narrow, mm.
pub const THRESHOLD_RESOLUTION: f64 = 0.01;
/// Points in the coarse length scan before bisection.
pub const THRESHOLD_SCAN_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Omega0,
    Delta0,
    TotalLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub parameter: SweepParameter,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let span = self.max - self.min;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.max
                } else {
                    self.min + span * i as f64 / (self.count - 1) as f64
                }
            })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("{name}: {msg}")));
        if self.count < 2 {
            return bad(format!("count must be >= 2, got {}", self.count));
        }
        if !(self.min.is_finite() && self.max.is_finite()) {
            return bad("bounds must be finite".into());
        }
        if self.min < 0.0 {
            return bad(format!("min must be >= 0, got {}", self.min));
        }
        if self.min >= self.max {
            return bad(format!("min {} must be below max {}", self.min, self.max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Intensity in guide 2 at the output of a two-guide coupler.
    #[default]
    FinalI2,
    /// Deviation of a three-guide splitter from an even split.
    SplittingInfidelity,
}

/// Values for the parameters that are not swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedParams {
    pub omega0: f64,
    pub delta0: f64,
    pub total_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis_x: Axis,
    pub axis_y: Axis,
    pub fixed: FixedParams,
    #[serde(default)]
    pub metric: Metric,
    pub sta: bool,
    pub tol: f64,
    #[serde(default)]
    pub splitter_mode: SplitterMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), Error> {
        self.axis_x.validate("axis_x")?;
        self.axis_y.validate("axis_y")?;
        if self.axis_x.parameter == self.axis_y.parameter {
            return Err(Error::InvalidArgument(
                "the two axes must sweep different parameters".into(),
            ));
        }
        if !(1e-12..=1e-4).contains(&self.tol) {
            return Err(Error::InvalidArgument(format!(
                "tol {} outside [1e-12, 1e-4]",
                self.tol
            )));
        }
        let f = &self.fixed;
        for (name, v) in [
            ("omega0", f.omega0),
            ("delta0", f.delta0),
            ("total_length", f.total_length),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "fixed.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> Solver {
        Solver::Adaptive { tol: self.tol }
    }

    /// Design point of the cell at axis values `(x, y)`.
    pub fn cell_params(&self, x: f64, y: f64) -> FixedParams {
        let mut p = self.fixed;
        for (axis, v) in [(&self.axis_x, x), (&self.axis_y, y)] {
            match axis.parameter {
                SweepParameter::Omega0 => p.omega0 = v,
                SweepParameter::Delta0 => p.delta0 = v,
                SweepParameter::TotalLength => p.total_length = v,
            }
        }
        p
    }

    /// Metric of one cell, computed exactly as inside [`run_sweep`].
    pub fn evaluate_cell(&self, x: f64, y: f64) -> Result<f64, Error> {
        let p = self.cell_params(x, y);
        cell_metric(
            &p,
            self.sta,
            self.metric,
            self.splitter_mode,
            &self.solver(),
        )
    }
}

/// A zero-length device is the identity.
fn cell_metric(
    p: &FixedParams,
    sta: bool,
    metric: Metric,
    mode: SplitterMode,
    solver: &Solver,
) -> Result<f64, Error> {
    if p.total_length == 0.0 {
        return Ok(match metric {
            Metric::FinalI2 => 0.0,
            Metric::SplittingInfidelity => 0.5,
        });
    }
    let model = ModelParams::with_total_length(p.omega0, p.delta0, p.total_length, sta)?;
    match metric {
        Metric::FinalI2 => Ok(simulate(&model, 1, solver)?.final_i2),
        Metric::SplittingInfidelity => {
            Ok(simulate_splitter(&SplitterParams::new(model, mode), solver)?.splitting_infidelity)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Realised `axis_x` coordinates (columns).
    pub x: Vec<f64>,
    /// Realised `axis_y` coordinates (rows).
    pub y: Vec<f64>,
    /// Row-major `y.len() × x.len()` metric values.
    pub grid: Vec<f64>,
    pub spec: SweepSpec,
}

impl SweepResult {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.grid[iy * self.x.len() + ix]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.grid.chunks(self.x.len())
    }
}

/// Runs the sweep on the global thread pool.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, Error> {
    spec.validate()?;
    let x = spec.axis_x.values();
    let y = spec.axis_y.values();
    let nx = x.len();
    let grid = (0..x.len() * y.len())
        .into_par_iter()
        .map(|idx| {
            let (xi, yi) = (x[idx % nx], y[idx / nx]);
            spec.evaluate_cell(xi, yi)
                .map_err(|source| Error::CellFailure {
                    x: xi,
                    y: yi,
                    source: Box::new(source),
                })
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    Ok(SweepResult {
        x,
        y,
        grid,
        spec: *spec,
    })
}

/// Runs the sweep on a dedicated pool of `workers` threads.
pub fn run_sweep_with_workers(spec: &SweepSpec, workers: usize) -> Result<SweepResult, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_sweep(spec))
}

/// Fraction of cells whose metric reaches `target`.
pub fn robust_region_fraction(result: &SweepResult, target: f64) -> f64 {
    if result.grid.is_empty() {
        return 0.0;
    }
    let hits = result.grid.iter().filter(|&&v| v >= target).count();
    hits as f64 / result.grid.len() as f64
}

/// Shortest total length at which the two-guide transfer reaches a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdQuery {
    pub omega0: f64,
    pub delta0: f64,
    pub sta: bool,
    pub target: f64,
    pub min_length: f64,
    pub max_length: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub total_length: f64,
    pub metric: f64,
}

impl ThresholdQuery {
    fn metric_at(&self, total_length: f64) -> Result<f64, Error> {
        let p = FixedParams {
            omega0: self.omega0,
            delta0: self.delta0,
            total_length,
        };
        cell_metric(
            &p,
            self.sta,
            Metric::FinalI2,
            SplitterMode::default(),
            &Solver::Adaptive { tol: self.tol },
        )
    }

    /// Scans [`THRESHOLD_SCAN_POINTS`] lengths, then bisects between the
    /// first passing sample and its predecessor down to
    /// [`THRESHOLD_RESOLUTION`]. The transfer need not be monotone in length,
    /// so the bracket only guarantees a failing lower and a passing upper end.
    pub fn solve(&self) -> Result<Threshold, Error> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target must lie in (0, 1), got {}",
                self.target
            )));
        }
        let axis = Axis {
            parameter: SweepParameter::TotalLength,
            min: self.min_length,
            max: self.max_length,
            count: THRESHOLD_SCAN_POINTS,
        };
        axis.validate("length range")?;
        let lengths = axis.values();
        let metrics = lengths
            .par_iter()
            .map(|&len| self.metric_at(len))
            .collect::<Result<Vec<f64>, Error>>()?;

        let Some(first) = metrics.iter().position(|&m| m >= self.target) else {
            let (i, &max_metric) = metrics
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("scan is never empty");
            return Err(Error::TargetNotReached {
                max_metric,
                at_length: lengths[i],
            });
        };
        if first == 0 {
            return Ok(Threshold {
                total_length: lengths[0],
                metric: metrics[0],
            });
        }
        let (mut lo, mut hi, mut hi_metric) = (lengths[first - 1], lengths[first], metrics[first]);
        while hi - lo > THRESHOLD_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            let m = self.metric_at(mid)?;
            if m >= self.target {
                hi = mid;
                hi_metric = m;
            } else {
                lo = mid;
            }
        }
        Ok(Threshold {
            total_length: hi,
            metric: hi_metric,
        })
    }
}

/// Convenience wrapper over [`ThresholdQuery::solve`].
pub fn threshold_length(
    omega0: f64,
    delta0: f64,
    sta: bool,
    target: f64,
    range: (f64, f64),
    tol: f64,
) -> Result<Threshold, Error> {
    ThresholdQuery {
        omega0,
        delta0,
        sta,
        target,
        min_length: range.0,
        max_length: range.1,
        tol,
    }
    .solve()
}
