//! Design and simulation of sign-flip directional couplers driven by a
//! counterdiabatic shortcut to adiabaticity.
//!
//! * [`schedule`]: closed-form bare and corrected coupling schedules,
//!   diagnostics and geometry synthesis.
//! * [`propagator`]: adaptive and piecewise-constant integrators for the
//!   coupled-mode equations.
//! * [`coupler`]: two-guide switch simulations and adiabatic projections.
//! * [`splitter`]: three-guide equal-superposition beam splitter.
//! * [`sweep`]: parameter grids, threshold lengths and robust-region metrics.

pub mod coupler;
pub mod propagator;
pub mod schedule;
pub mod splitter;
pub mod sweep;

use thiserror::Error;

pub use propagator::{PropagationError, Solver};
pub use schedule::{ModelParams, ScheduleError, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sweep cell at ({x}, {y}) failed: {source}")]
    CellFailure { x: f64, y: f64, source: Box<Error> },
    #[error("target not reached; best metric {max_metric} at total length {at_length} mm")]
    TargetNotReached { max_metric: f64, at_length: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Propagation(e) => matches!(
                e,
                PropagationError::StepUnderflow { .. }
                    | PropagationError::StepLimit { .. }
                    | PropagationError::NonFinite { .. }
            ),
            Error::CellFailure { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
