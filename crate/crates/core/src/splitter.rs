//! Three-guide beam splitter.
//!
//! Two outer guides couple equally to a middle guide whose propagation
//! constant flips at `z = 0`. In the basis of the bright combination
//! `(c1 + c3)/√2`, the middle amplitude and the dark combination
//! `(c1 − c3)/√2`, the dark state decouples and the rest is a two-level
//! problem with coupling `√2·Ω`. Light launched into the middle guide is
//! steered into the bright state, i.e. an equal split between the outer
//! guides.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::propagator::{Amplitudes, Generator, HamiltonianSpec, Solver, StateVector, Trajectory};
use crate::schedule::{ModelParams, Side, SignFlipProfile};
use crate::Error;

/// How the counterdiabatic schedule is carried over to three guides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitterMode {
    /// Reuse the two-guide `(Ω_eff, Δ_eff)` unchanged.
    Direct,
    /// Apply the correction to the exact reduced bright/middle system, which
    /// has coupling `√2·Ω` and, after removing its trace, mismatch `−Δ/2`.
    #[default]
    ReducedCd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterParams {
    pub base: ModelParams,
    #[serde(default)]
    pub mode: SplitterMode,
}

impl SplitterParams {
    pub fn new(base: ModelParams, mode: SplitterMode) -> Self {
        SplitterParams { base, mode }
    }

    fn reduced_profile(&self) -> SignFlipProfile {
        SignFlipProfile {
            peak_coupling: SQRT_2 * self.base.omega0,
            left_mismatch: -0.5 * self.base.delta0,
            half_length: self.base.half_length,
        }
    }

    /// Outer-guide coupling and middle-guide mismatch `(Ω̃, Δ̃)`.
    /// Without `sta` both modes fall back to the bare schedule.
    pub fn coefficients(&self, z: f64, side: Side) -> (f64, f64) {
        if !self.base.sta {
            return self.base.coefficients(z, side);
        }
        match self.mode {
            SplitterMode::Direct => self.base.coefficients(z, side),
            SplitterMode::ReducedCd => {
                // Dropping the trace (Δ/2)·1 only adds a global phase.
                let pt = self.reduced_profile().point(z, Side::at(z, side));
                (pt.omega_eff / SQRT_2, -2.0 * pt.delta_eff)
            }
        }
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `[[0, Ω̃, 0], [Ω̃, Δ̃, Ω̃], [0, Ω̃, 0]]`.
pub fn build_h3(sp: &SplitterParams) -> HamiltonianSpec<3> {
    let sp = *sp;
    HamiltonianSpec::new(
        move |z, side| {
            let (omega, delta) = sp.coefficients(z, side);
            let zero = real(0.0);
            Generator::<3>::new(
                zero,
                real(omega),
                zero,
                real(omega),
                real(delta),
                real(omega),
                zero,
                real(omega),
                zero,
            )
        },
        vec![0.0],
    )
}

/// Bright/middle block `[[0, √2·Ω̃], [√2·Ω̃, Δ̃]]`.
pub fn build_reduced(sp: &SplitterParams) -> HamiltonianSpec<2> {
    let sp = *sp;
    HamiltonianSpec::new(
        move |z, side| {
            let (omega, delta) = sp.coefficients(z, side);
            let coupling = real(SQRT_2 * omega);
            Generator::<2>::new(real(0.0), coupling, coupling, real(delta))
        },
        vec![0.0],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrightDark {
    pub bright: Complex64,
    pub middle: Complex64,
    pub dark: Complex64,
}

impl BrightDark {
    pub fn to_guides(&self) -> Amplitudes<3> {
        Amplitudes::<3>::new(
            (self.bright + self.dark) / SQRT_2,
            self.middle,
            (self.bright - self.dark) / SQRT_2,
        )
    }
}

pub fn reduce_bright_dark(c: &Amplitudes<3>) -> BrightDark {
    BrightDark {
        bright: (c[0] + c[2]) / SQRT_2,
        middle: c[1],
        dark: (c[0] - c[2]) / SQRT_2,
    }
}

#[derive(Debug, Clone)]
pub struct SplitterResult {
    pub trajectory: Trajectory<3>,
    pub final_intensities: [f64; 3],
    /// `max(|I1 − ½|, |I3 − ½|)` at `+L`.
    pub splitting_infidelity: f64,
    /// `max_z |c1 − c3|`.
    pub dark_leakage: f64,
    /// Largest difference between the bright/middle amplitudes of the
    /// three-guide run and an independent two-level run of the reduced block.
    pub reduction_mismatch: f64,
}

/// Launches light into the middle guide.
pub fn simulate_splitter(sp: &SplitterParams, solver: &Solver) -> Result<SplitterResult, Error> {
    let c0 = StateVector::<3>::unit(-sp.base.half_length, 1).amplitudes;
    simulate_splitter_from(sp, &c0, solver)
}

/// Propagates an arbitrary normalised input and cross-checks the reduced
/// two-level dynamics. The comparison is sample by sample when both runs
/// share a grid and on the final amplitudes otherwise.
pub fn simulate_splitter_from(
    sp: &SplitterParams,
    c0: &Amplitudes<3>,
    solver: &Solver,
) -> Result<SplitterResult, Error> {
    sp.base.validate()?;
    let (from, to) = (-sp.base.half_length, sp.base.half_length);
    let trajectory = solver.propagate(&build_h3(sp), c0, from, to)?;

    let start = reduce_bright_dark(c0);
    let weight = (start.bright.norm_sqr() + start.middle.norm_sqr()).sqrt();
    let mut reduction_mismatch = 0.0f64;
    if weight > 0.0 {
        let r0 = Amplitudes::<2>::new(start.bright / weight, start.middle / weight);
        let reduced = solver.propagate(&build_reduced(sp), &r0, from, to)?;
        let gap = |full: &StateVector<3>, red: &StateVector<2>| {
            let bd = reduce_bright_dark(&full.amplitudes);
            (bd.bright - red.amplitudes[0] * weight)
                .norm()
                .max((bd.middle - red.amplitudes[1] * weight).norm())
        };
        let same_grid = reduced.samples.len() == trajectory.samples.len()
            && reduced
                .samples
                .iter()
                .zip(&trajectory.samples)
                .all(|(a, b)| a.z == b.z);
        reduction_mismatch = if same_grid {
            trajectory
                .samples
                .iter()
                .zip(&reduced.samples)
                .map(|(f, r)| gap(f, r))
                .fold(0.0, f64::max)
        } else {
            gap(trajectory.last(), reduced.last())
        };
    }

    let final_intensities = trajectory.final_intensities();
    let splitting_infidelity = (final_intensities[0] - 0.5)
        .abs()
        .max((final_intensities[2] - 0.5).abs());
    let dark_leakage = trajectory
        .samples
        .iter()
        .map(|s| (s.amplitudes[0] - s.amplitudes[2]).norm())
        .fold(0.0, f64::max);
    Ok(SplitterResult {
        trajectory,
        final_intensities,
        splitting_infidelity,
        dark_leakage,
        reduction_mismatch,
    })
}
