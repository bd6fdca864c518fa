//! Integration of `i·dc/dz = H(z)·c` for small position-dependent Hermitian
//! generators with known jump points.
//!
//! Two independent backends are provided and used as oracles for each other:
//! an embedded Dormand–Prince 5(4) integrator with adaptive steps, and a
//! product of exact matrix exponentials of `H` frozen at cell midpoints.
//! Both split the interval at every breakpoint so that no step straddles a
//! jump, and neither renormalises the state.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::Side;

pub type C64 = Complex64;
pub type Amplitudes<const N: usize> = SVector<C64, N>;
pub type Generator<const N: usize> = SMatrix<C64, N, N>;

/// Allowed deviation of the initial norm from one.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Steps shorter than this fraction of the interval signal stiffness.
const UNDERFLOW_FRACTION: f64 = 1e-12;
const MAX_STEPS: usize = 20_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("empty or reversed interval [{from}, {to}]")]
    InvalidInterval { from: f64, to: f64 },
    #[error("tolerance {0} outside [1e-12, 1e-4]")]
    InvalidTolerance(f64),
    #[error("initial state has squared norm {0}, expected 1")]
    NotNormalized(f64),
    #[error("step size {step} underflowed at z = {z}; the problem looks stiff")]
    StepUnderflow { z: f64, step: f64 },
    #[error("step budget of {MAX_STEPS} exhausted at z = {z}")]
    StepLimit { z: f64 },
    #[error("non-finite state at z = {z}")]
    NonFinite { z: f64 },
    #[error("piecewise-constant propagation needs at least one step")]
    ZeroSteps,
    #[error("breakpoint z = {breakpoint} does not fall on the {steps}-cell grid")]
    Misaligned { breakpoint: f64, steps: usize },
}

type EvalFn<const N: usize> = dyn Fn(f64, Side) -> Generator<N> + Send + Sync;

/// A position-dependent generator with an ordered list of breakpoints.
///
/// `eval(z, side)` must return a Hermitian matrix; `side` selects the
/// one-sided limit when `z` is a breakpoint and is ignored elsewhere.
#[derive(Clone)]
pub struct HamiltonianSpec<const N: usize> {
    eval: Arc<EvalFn<N>>,
    breakpoints: Vec<f64>,
}

impl<const N: usize> fmt::Debug for HamiltonianSpec<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("dim", &N)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl<const N: usize> HamiltonianSpec<N> {
    pub fn new<F>(eval: F, breakpoints: Vec<f64>) -> Self
    where
        F: Fn(f64, Side) -> Generator<N> + Send + Sync + 'static,
    {
        let mut breakpoints = breakpoints;
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        HamiltonianSpec {
            eval: Arc::new(eval),
            breakpoints,
        }
    }

    pub fn constant(h: Generator<N>) -> Self {
        Self::new(move |_, _| h, Vec::new())
    }

    pub fn dim(&self) -> usize {
        N
    }

    pub fn eval(&self, z: f64, side: Side) -> Generator<N> {
        (self.eval)(z, side)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Adds a breakpoint that is not a real discontinuity; results must not
    /// depend on it beyond integration error.
    pub fn with_breakpoint(mut self, z: f64) -> Self {
        self.breakpoints.push(z);
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
        self
    }

    /// Generator of the backward evolution in the mirrored coordinate
    /// `s = −z`: `H̃(s) = −H(−s)`. Propagating the final state of a forward
    /// run with it over `[−z_to, −z_from]` recovers the initial state.
    pub fn reversed(&self) -> Self {
        let inner = Arc::clone(&self.eval);
        let breakpoints = self.breakpoints.iter().rev().map(|z| -z).collect();
        HamiltonianSpec {
            eval: Arc::new(move |s, side| -inner(-s, side.flip())),
            breakpoints,
        }
    }

    /// `max |H − H†|` relative to the largest element of `H`.
    pub fn hermiticity_defect(&self, z: f64, side: Side) -> f64 {
        let h = self.eval(z, side);
        let scale = h.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let defect = (h - h.adjoint())
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max);
        if scale > 0.0 {
            defect / scale
        } else {
            defect
        }
    }

    fn segments(&self, from: f64, to: f64) -> Vec<(f64, f64)> {
        let mut edges = vec![from];
        edges.extend(
            self.breakpoints
                .iter()
                .copied()
                .filter(|&b| b > from && b < to),
        );
        edges.push(to);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

// Inside a segment [start, end] a breakpoint can only sit at either end.
fn side_within(z: f64, end: f64) -> Side {
    if z >= end {
        Side::Left
    } else {
        Side::Right
    }
}

/// Complex amplitudes at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector<const N: usize> {
    pub z: f64,
    pub amplitudes: Amplitudes<N>,
}

impl<const N: usize> StateVector<N> {
    pub fn new(z: f64, amplitudes: Amplitudes<N>) -> Self {
        StateVector { z, amplitudes }
    }

    /// All power in guide `index` (zero-based).
    pub fn unit(z: f64, index: usize) -> Self {
        let mut amplitudes = Amplitudes::<N>::zeros();
        amplitudes[index] = C64::new(1.0, 0.0);
        StateVector { z, amplitudes }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn intensities(&self) -> [f64; N] {
        std::array::from_fn(|i| self.amplitudes[i].norm_sqr())
    }
}

/// Which integrator produced a trajectory, with its accuracy setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Solver {
    /// Dormand–Prince 5(4) with local error control.
    Adaptive { tol: f64 },
    /// Midpoint-frozen exact exponentials on a uniform grid.
    PiecewiseConstant { steps: usize },
}

impl Solver {
    pub fn propagate<const N: usize>(
        &self,
        h: &HamiltonianSpec<N>,
        c0: &Amplitudes<N>,
        from: f64,
        to: f64,
    ) -> Result<Trajectory<N>, PropagationError> {
        match *self {
            Solver::Adaptive { tol } => propagate_adaptive(h, c0, from, to, tol),
            Solver::PiecewiseConstant { steps } => propagate_pwc(h, c0, from, to, steps),
        }
    }
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Adaptive { tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl StepStats {
    fn record(&mut self, step: f64) {
        if self.accepted == 0 {
            self.min_step = step;
            self.max_step = step;
        } else {
            self.min_step = self.min_step.min(step);
            self.max_step = self.max_step.max(step);
        }
        self.accepted += 1;
    }
}

/// Ordered samples from `z_from` to `z_to`, strictly increasing in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub samples: Vec<StateVector<N>>,
    pub solver: Solver,
    pub stats: StepStats,
}

impl<const N: usize> Trajectory<N> {
    pub fn first(&self) -> &StateVector<N> {
        &self.samples[0]
    }

    pub fn last(&self) -> &StateVector<N> {
        self.samples.last().expect("trajectory is never empty")
    }

    pub fn final_intensities(&self) -> [f64; N] {
        self.last().intensities()
    }

    /// `max |‖c‖² − 1|` over all samples.
    pub fn max_norm_drift(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.norm_sqr() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_start<const N: usize>(
    c0: &Amplitudes<N>,
    from: f64,
    to: f64,
) -> Result<(), PropagationError> {
    if !(from.is_finite() && to.is_finite() && from < to) {
        return Err(PropagationError::InvalidInterval { from, to });
    }
    let norm = c0.norm_squared();
    // Negated so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
        return Err(PropagationError::NotNormalized(norm));
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
// The per-unit-length error of a fifth-order step scales as h⁴.
const ERROR_EXPONENT: f64 = 0.25;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

// step · Σ wᵢ·kᵢ
fn combo<const N: usize>(step: f64, terms: &[(f64, &Amplitudes<N>)]) -> Amplitudes<N> {
    let mut acc = Amplitudes::<N>::zeros();
    for &(w, k) in terms {
        acc.axpy(C64::new(w * step, 0.0), k, C64::new(1.0, 0.0));
    }
    acc
}

/// Adaptive integration from `from` to `to`.
///
/// Steps are controlled per unit length: a step of size `h` is accepted when
/// `‖e‖₂ ≤ tol·(1 + ‖c‖)·h/(to − from)`, so the local error stays below `tol`
/// and the accumulated error over the whole interval stays of order `tol`.
/// The Euclidean norm keeps the step sequence invariant under unitary
/// changes of basis.
pub fn propagate_adaptive<const N: usize>(
    h: &HamiltonianSpec<N>,
    c0: &Amplitudes<N>,
    from: f64,
    to: f64,
    tol: f64,
) -> Result<Trajectory<N>, PropagationError> {
    check_start(c0, from, to)?;
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(PropagationError::InvalidTolerance(tol));
    }
    let min_step = UNDERFLOW_FRACTION * (to - from);
    let minus_i = C64::new(0.0, -1.0);
    let rhs = |z: f64, side: Side, c: &Amplitudes<N>| h.eval(z, side) * c * minus_i;

    let mut stats = StepStats::default();
    let mut samples = vec![StateVector::new(from, *c0)];
    let mut c = *c0;

    for (start, end) in h.segments(from, to) {
        let mut z = start;
        let mut k1 = rhs(z, Side::Right, &c);
        stats.evaluations += 1;

        let scale = c.norm();
        let slope = k1.norm();
        let mut step = if scale > 1e-5 && slope > 1e-5 {
            0.01 * scale / slope
        } else {
            1e-3 * (end - start)
        };
        step = step.min(end - start);
        let mut rejected_last = false;

        while z < end {
            if stats.accepted + stats.rejected >= MAX_STEPS {
                return Err(PropagationError::StepLimit { z });
            }
            let last = z + step >= end;
            if last {
                step = end - z;
            }
            let z_next = if last { end } else { z + step };
            let s = step;

            let k2 = rhs(z + C2 * s, Side::Right, &(c + combo(s, &[(A21, &k1)])));
            let k3 = rhs(
                z + C3 * s,
                Side::Right,
                &(c + combo(s, &[(A31, &k1), (A32, &k2)])),
            );
            let k4 = rhs(
                z + C4 * s,
                Side::Right,
                &(c + combo(s, &[(A41, &k1), (A42, &k2), (A43, &k3)])),
            );
            let k5 = rhs(
                z + C5 * s,
                Side::Right,
                &(c + combo(s, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)])),
            );
            let k6 = rhs(
                z_next,
                side_within(z_next, end),
                &(c + combo(
                    s,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                )),
            );
            let c_new = c + combo(s, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = rhs(z_next, side_within(z_next, end), &c_new);
            stats.evaluations += 6;

            let err_vec = combo(
                s,
                &[
                    (E1, &k1),
                    (E3, &k3),
                    (E4, &k4),
                    (E5, &k5),
                    (E6, &k6),
                    (E7, &k7),
                ],
            );
            let sc = tol * (1.0 + c.norm().max(c_new.norm())) * s / (to - from);
            let err = err_vec.norm() / sc;
            if !err.is_finite() || c_new.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                return Err(PropagationError::NonFinite { z });
            }

            if err <= 1.0 {
                stats.record(s);
                z = z_next;
                c = c_new;
                k1 = k7;
                samples.push(StateVector::new(z, c));
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    SAFETY * err.powf(-ERROR_EXPONENT)
                };
                factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                if rejected_last {
                    factor = factor.min(1.0);
                }
                rejected_last = false;
                step = s * factor;
            } else {
                stats.rejected += 1;
                rejected_last = true;
                step = s * (SAFETY * err.powf(-ERROR_EXPONENT)).max(MIN_FACTOR);
                if step < min_step {
                    return Err(PropagationError::StepUnderflow { z, step });
                }
            }
        }
    }

    Ok(Trajectory {
        samples,
        solver: Solver::Adaptive { tol },
        stats,
    })
}

/// `exp(−i·H·dz)` for Hermitian `H` by eigendecomposition.
pub fn unitary_step<const N: usize>(h: &Generator<N>, dz: f64) -> Generator<N> {
    let dynamic = DMatrix::from_iterator(N, N, h.iter().copied());
    let eig = SymmetricEigen::new(dynamic);
    let phases = eig
        .eigenvalues
        .map(|lambda| C64::from_polar(1.0, -lambda * dz));
    let v = &eig.eigenvectors;
    let u = v * DMatrix::from_diagonal(&phases) * v.adjoint();
    Generator::<N>::from_iterator(u.iter().copied())
}

/// Piecewise-constant propagation on a uniform grid of `steps` cells whose
/// boundaries must include every breakpoint inside the interval.
pub fn propagate_pwc<const N: usize>(
    h: &HamiltonianSpec<N>,
    c0: &Amplitudes<N>,
    from: f64,
    to: f64,
    steps: usize,
) -> Result<Trajectory<N>, PropagationError> {
    check_start(c0, from, to)?;
    if steps == 0 {
        return Err(PropagationError::ZeroSteps);
    }
    let width = (to - from) / steps as f64;
    for &b in h.breakpoints().iter().filter(|&&b| b > from && b < to) {
        let r = (b - from) / width;
        if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
            return Err(PropagationError::Misaligned {
                breakpoint: b,
                steps,
            });
        }
    }

    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(StateVector::new(from, *c0));
    let mut c = *c0;
    for i in 0..steps {
        let mid = from + (i as f64 + 0.5) * width;
        let z_next = if i + 1 == steps {
            to
        } else {
            from + (i + 1) as f64 * width
        };
        c = unitary_step(&h.eval(mid, Side::Right), width) * c;
        samples.push(StateVector::new(z_next, c));
    }
    let stats = StepStats {
        accepted: steps,
        rejected: 0,
        evaluations: steps,
        min_step: width,
        max_step: width,
    };
    Ok(Trajectory {
        samples,
        solver: Solver::PiecewiseConstant { steps },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rabi(omega: f64) -> HamiltonianSpec<2> {
        HamiltonianSpec::constant(Generator::<2>::new(
            c(0.0, 0.0),
            c(omega, 0.0),
            c(omega, 0.0),
            c(0.0, 0.0),
        ))
    }

    #[test]
    fn zero_generator_is_identity() {
        let h = HamiltonianSpec::<2>::constant(Generator::<2>::zeros());
        let c0 = Amplitudes::<2>::new(c(1.0, 0.0), c(0.0, 0.0));
        let t = propagate_adaptive(&h, &c0, -3.0, 5.0, 1e-10).unwrap();
        assert_eq!(t.last().amplitudes, c0);
        let t = propagate_pwc(&h, &c0, -3.0, 5.0, 1).unwrap();
        assert_eq!(t.last().amplitudes, c0);
    }

    #[test]
    fn rabi_half_period_transfers_everything() {
        let omega = 1.3;
        let h = rabi(omega);
        let c0 = Amplitudes::<2>::new(c(1.0, 0.0), c(0.0, 0.0));
        let len = PI / (2.0 * omega);
        let t = propagate_adaptive(&h, &c0, 0.0, len, 1e-12).unwrap();
        assert!((t.final_intensities()[1] - 1.0).abs() < 1e-10);
        for s in &t.samples {
            let expected = (omega * s.z).sin().powi(2);
            assert!((s.intensities()[1] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_generator_is_step_independent() {
        let h = HamiltonianSpec::constant(Generator::<3>::new(
            c(0.3, 0.0),
            c(1.0, 0.2),
            c(0.0, 0.0),
            c(1.0, -0.2),
            c(-0.5, 0.0),
            c(0.7, 0.0),
            c(0.0, 0.0),
            c(0.7, 0.0),
            c(0.1, 0.0),
        ));
        let c0 = Amplitudes::<3>::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        let one = propagate_pwc(&h, &c0, 0.0, 2.0, 1).unwrap();
        for steps in [2, 7, 64] {
            let many = propagate_pwc(&h, &c0, 0.0, 2.0, steps).unwrap();
            assert!((one.last().amplitudes - many.last().amplitudes).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = rabi(1.0);
        let c0 = Amplitudes::<2>::new(c(1.0, 0.0), c(0.0, 0.0));
        let half = Amplitudes::<2>::new(c(0.5, 0.0), c(0.0, 0.0));
        assert!(matches!(
            propagate_adaptive(&h, &half, 0.0, 1.0, 1e-8),
            Err(PropagationError::NotNormalized(_))
        ));
        assert!(matches!(
            propagate_adaptive(&h, &c0, 1.0, 0.0, 1e-8),
            Err(PropagationError::InvalidInterval { .. })
        ));
        assert!(matches!(
            propagate_adaptive(&h, &c0, 0.0, 1.0, 1e-2),
            Err(PropagationError::InvalidTolerance(_))
        ));
        assert!(matches!(
            propagate_pwc(&h, &c0, 0.0, 1.0, 0),
            Err(PropagationError::ZeroSteps)
        ));
        let jumpy = rabi(1.0).with_breakpoint(0.0);
        assert!(matches!(
            propagate_pwc(&jumpy, &c0, -1.0, 1.0, 3),
            Err(PropagationError::Misaligned { .. })
        ));
        assert!(propagate_pwc(&jumpy, &c0, -1.0, 1.0, 4).is_ok());
    }

    #[test]
    fn stiff_generator_underflows() {
        // Growing without bound near z = 1 forces ever smaller steps.
        let h = HamiltonianSpec::<2>::new(
            |z, _| {
                let w = 1.0 / (1.0 - z).powi(3);
                Generator::<2>::new(c(w, 0.0), c(w, 0.0), c(w, 0.0), c(-w, 0.0))
            },
            Vec::new(),
        );
        let c0 = Amplitudes::<2>::new(c(1.0, 0.0), c(0.0, 0.0));
        let err = propagate_adaptive(&h, &c0, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(
            err,
            PropagationError::StepUnderflow { .. }
                | PropagationError::NonFinite { .. }
                | PropagationError::StepLimit { .. }
        ));
    }

    #[test]
    fn adaptive_never_straddles_breakpoints() {
        let h = rabi(2.0).with_breakpoint(0.123).with_breakpoint(0.5);
        let c0 = Amplitudes::<2>::new(c(1.0, 0.0), c(0.0, 0.0));
        let t = propagate_adaptive(&h, &c0, 0.0, 1.0, 1e-10).unwrap();
        let zs: Vec<f64> = t.samples.iter().map(|s| s.z).collect();
        assert!(zs.contains(&0.123) && zs.contains(&0.5));
        assert!(zs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*zs.last().unwrap(), 1.0);
    }

    #[test]
    fn unitary_step_is_unitary() {
        let h = Generator::<3>::new(
            c(1.0, 0.0),
            c(2.0, 1.0),
            c(0.5, -0.5),
            c(2.0, -1.0),
            c(-1.0, 0.0),
            c(0.0, 3.0),
            c(0.5, 0.5),
            c(0.0, -3.0),
            c(0.2, 0.0),
        );
        let u = unitary_step(&h, 0.37);
        let defect = (u.adjoint() * u - Generator::<3>::identity()).norm();
        assert!(defect < 1e-13);
    }
}
