//! Two-guide coupler: generator construction, propagation and projection
//! onto the instantaneous adiabatic states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::propagator::{Amplitudes, Generator, HamiltonianSpec, Solver, StateVector, Trajectory};
use crate::schedule::{ModelParams, Side};
use crate::Error;

/// Generator `[[Δ, Ω], [Ω, −Δ]]` with bare or effective coefficients,
/// breaking at the mismatch flip.
pub fn build_h2(p: &ModelParams) -> HamiltonianSpec<2> {
    let p = *p;
    HamiltonianSpec::new(
        move |z, side| {
            let (omega, delta) = p.coefficients(z, side);
            Generator::<2>::new(
                Complex64::new(delta, 0.0),
                Complex64::new(omega, 0.0),
                Complex64::new(omega, 0.0),
                Complex64::new(-delta, 0.0),
            )
        },
        vec![0.0],
    )
}

#[derive(Debug, Clone)]
pub struct CouplerResult {
    pub trajectory: Trajectory<2>,
    /// Intensity in guide 2 at `z = +L`.
    pub final_i2: f64,
}

impl CouplerResult {
    pub fn final_i1(&self) -> f64 {
        self.trajectory.final_intensities()[0]
    }
}

/// Propagates light launched into guide `input_guide` (1 or 2) from `−L` to `+L`.
pub fn simulate(
    p: &ModelParams,
    input_guide: usize,
    solver: &Solver,
) -> Result<CouplerResult, Error> {
    p.validate()?;
    if !(1..=2).contains(&input_guide) {
        return Err(Error::InvalidArgument(format!(
            "input guide must be 1 or 2, got {input_guide}"
        )));
    }
    let c0 = StateVector::<2>::unit(-p.half_length, input_guide - 1).amplitudes;
    let trajectory = solver.propagate(&build_h2(p), &c0, -p.half_length, p.half_length)?;
    let final_i2 = trajectory.final_intensities()[1];
    Ok(CouplerResult {
        trajectory,
        final_i2,
    })
}

/// Populations of the instantaneous eigenstates of the bare generator,
/// lower eigenvalue first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticSample {
    pub z: f64,
    pub populations: [f64; 2],
}

/// Projects each sample onto the eigenvectors of the bare generator.
///
/// For counterdiabatic runs the diagonal phase rotation that made the
/// coupling real is undone first, so the projection happens in the frame
/// where exact adiabatic following holds. The eigenvectors come from the
/// mixing angle in closed form and are therefore continuous on each half;
/// a sample exactly at `z = 0` is assigned to the left half.
pub fn adiabatic_projection(
    p: &ModelParams,
    traj: &Trajectory<2>,
) -> Result<Vec<AdiabaticSample>, Error> {
    p.validate()?;
    let l = p.half_length;
    let slack = 1e-9 * l;
    if traj.samples.is_empty()
        || (traj.first().z + l).abs() > slack
        || (traj.last().z - l).abs() > slack
    {
        return Err(Error::InvalidArgument(format!(
            "trajectory does not span [-{l}, {l}] mm of the given design"
        )));
    }
    let profile = p.profile();
    Ok(traj
        .samples
        .iter()
        .map(|s| {
            let z = s.z.clamp(-l, l);
            let side = if z <= 0.0 { Side::Left } else { Side::Right };
            let pt = profile.point(z, side);
            let c = frame_amplitudes(&s.amplitudes, if p.sta { pt.phi } else { 0.0 });
            let (sin, cos) = (0.5 * pt.theta).sin_cos();
            let upper = c[0] * cos + c[1] * sin;
            let lower = -c[0] * sin + c[1] * cos;
            AdiabaticSample {
                z: s.z,
                populations: [lower.norm_sqr(), upper.norm_sqr()],
            }
        })
        .collect())
}

// c ↦ diag(e^{−iφ/2}, e^{iφ/2})·c
fn frame_amplitudes(c: &Amplitudes<2>, phi: f64) -> Amplitudes<2> {
    Amplitudes::<2>::new(
        c[0] * Complex64::from_polar(1.0, -0.5 * phi),
        c[1] * Complex64::from_polar(1.0, 0.5 * phi),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: Solver = Solver::Adaptive { tol: 1e-10 };

    #[test]
    fn bare_generator_at_the_flip() {
        let p = ModelParams::with_total_length(1.5, 0.1, 25.0, false).unwrap();
        let h = build_h2(&p);
        let left = h.eval(0.0, Side::Left);
        assert_eq!(left[(0, 0)].re, 0.1);
        assert_eq!(left[(1, 1)].re, -0.1);
        assert_eq!(left[(0, 1)].re, 1.5);
        assert_eq!(h.eval(0.0, Side::Right)[(0, 0)].re, -0.1);
        assert_eq!(h.breakpoints(), &[0.0]);
    }

    #[test]
    fn effective_generator_keeps_peak_coupling() {
        let p = ModelParams::with_total_length(1.5, 0.1, 25.0, true).unwrap();
        let h = build_h2(&p);
        for side in [Side::Left, Side::Right] {
            let m = h.eval(0.0, side);
            assert_eq!(m[(0, 1)].re, 1.5);
            assert_eq!(m[(1, 0)].re, 1.5);
            assert_eq!(h.hermiticity_defect(0.0, side), 0.0);
        }
    }

    #[test]
    fn no_mismatch_means_identical_generators() {
        let raw = build_h2(&ModelParams::with_total_length(2.0, 0.0, 3.0, false).unwrap());
        let sta = build_h2(&ModelParams::with_total_length(2.0, 0.0, 3.0, true).unwrap());
        for k in 0..=30 {
            let z = -1.5 + 0.1 * k as f64;
            for side in [Side::Left, Side::Right] {
                assert_eq!(raw.eval(z, side), sta.eval(z, side));
            }
        }
    }

    #[test]
    fn decoupled_guides_do_not_exchange_light() {
        let p = ModelParams::with_total_length(0.0, 1.0, 10.0, true).unwrap();
        let r = simulate(&p, 1, &TOL).unwrap();
        assert_eq!(r.final_i2, 0.0);
        assert!(r
            .trajectory
            .samples
            .iter()
            .all(|s| s.intensities()[1] == 0.0));
    }

    #[test]
    fn rejects_unknown_guide() {
        let p = ModelParams::with_total_length(1.0, 1.0, 1.0, true).unwrap();
        assert!(matches!(
            simulate(&p, 3, &TOL),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn input_swap_symmetry() {
        for (o0, d0, len, sta) in [
            (1.5, 0.1, 25.0, true),
            (5.0, 1.0, 0.9, false),
            (2.0, 0.7, 4.0, true),
        ] {
            let p = ModelParams::with_total_length(o0, d0, len, sta).unwrap();
            let a = simulate(&p, 1, &TOL).unwrap();
            let b = simulate(&p, 2, &TOL).unwrap();
            assert!(
                (a.final_i2 - b.final_i1()).abs() <= 1e-9,
                "{} vs {}",
                a.final_i2,
                b.final_i1()
            );
        }
    }

    #[test]
    fn intensities_stay_in_bounds() {
        let p = ModelParams::with_total_length(5.0, 1.0, 0.7, true).unwrap();
        let r = simulate(&p, 1, &TOL).unwrap();
        for s in &r.trajectory.samples {
            for i in s.intensities() {
                assert!((-1e-12..=1.0 + 1e-9).contains(&i));
            }
        }
    }

    #[test]
    fn projection_matches_intensities_at_the_edges() {
        let p = ModelParams::with_total_length(1.5, 0.1, 25.0, true).unwrap();
        let r = simulate(&p, 1, &TOL).unwrap();
        let pops = adiabatic_projection(&p, &r.trajectory).unwrap();
        // At −L the upper state is ≈ guide 1; at +L it is ≈ guide 2.
        let first = pops.first().unwrap();
        let last = pops.last().unwrap();
        let i_first = r.trajectory.first().intensities();
        let i_last = r.trajectory.last().intensities();
        assert!((first.populations[1] - i_first[0]).abs() < 1e-2);
        assert!((last.populations[1] - i_last[1]).abs() < 1e-2);
        for s in &pops {
            assert!((s.populations[0] + s.populations[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_rejects_foreign_trajectory() {
        let p = ModelParams::with_total_length(1.5, 0.1, 25.0, true).unwrap();
        let r = simulate(&p, 1, &TOL).unwrap();
        let other = ModelParams::with_total_length(1.5, 0.1, 10.0, true).unwrap();
        assert!(adiabatic_projection(&other, &r.trajectory).is_err());
    }

    fn max_deviation_per_half(p: &ModelParams, pops: &[AdiabaticSample]) -> f64 {
        let eps = 1e-3 * p.half_length;
        let left: Vec<_> = pops.iter().filter(|s| s.z <= -eps).collect();
        let right: Vec<_> = pops.iter().filter(|s| s.z >= eps).collect();
        let mut worst = 0.0f64;
        for half in [left, right] {
            let reference = half[0].populations[1];
            for s in half {
                worst = worst.max((s.populations[1] - reference).abs());
            }
        }
        worst
    }

    #[test]
    fn counterdiabatic_run_follows_adiabatic_states() {
        for (o0, d0, len) in [(1.5, 0.1, 25.0), (5.0, 1.0, 0.7), (1.5, 0.1, 1.0)] {
            let p = ModelParams::with_total_length(o0, d0, len, true).unwrap();
            let r = simulate(&p, 1, &TOL).unwrap();
            let pops = adiabatic_projection(&p, &r.trajectory).unwrap();
            let dev = max_deviation_per_half(&p, &pops);
            assert!(dev <= 1e-5, "({o0}, {d0}, {len}) deviation {dev}");
        }
    }

    #[test]
    fn bare_short_device_leaks_out_of_the_adiabatic_state() {
        let sta = ModelParams::with_total_length(1.5, 0.1, 1.0, true).unwrap();
        let raw = sta.with_sta(false);
        let dev = |p: &ModelParams| {
            let r = simulate(p, 1, &TOL).unwrap();
            max_deviation_per_half(p, &adiabatic_projection(p, &r.trajectory).unwrap())
        };
        let (d_sta, d_raw) = (dev(&sta), dev(&raw));
        assert!(d_raw > 1e-2, "bare deviation {d_raw}");
        assert!(d_raw > 100.0 * d_sta);
    }
}
