//! Sign-flip coupling model and its counterdiabatic correction.
//!
//! The bare device couples two guides with `Ω(z) = Ω0·sech(2πz/L)` while the
//! phase mismatch jumps from `+Δ0` to `−Δ0` at the coupling maximum. The
//! counterdiabatic term `Ω_a = θ̇/2` cancels non-adiabatic transitions; a
//! diagonal phase rotation by `φ = atan2(Ω_a, Ω)` then makes the corrected
//! coupling real, giving the physically realisable pair
//! `Ω_eff = √(Ω² + Ω_a²)` and `Δ_eff = Δ − φ̇/2`.
//!
//! Lengths are in mm and rates in mm⁻¹ throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when checking `|z| ≤ L`, relative to `L`.
const RANGE_SLACK: f64 = 1e-12;

/// Tolerance on the coupling-bound check.
pub const BOUND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("the phase mismatch is discontinuous at z = 0; evaluate one-sided")]
    Discontinuity,
    #[error("position z = {z} mm is outside the device [-{half_length}, {half_length}] mm")]
    OutOfRange { z: f64, half_length: f64 },
    #[error("mixing angle is undefined when coupling and mismatch both vanish")]
    UndefinedAngle,
    #[error("diagnostics need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("zero effective coupling corresponds to an infinite guide separation")]
    InfiniteSeparation,
    #[error("effective coupling {omega_eff} mm^-1 exceeds the calibrated contact coupling {contact} mm^-1")]
    CalibrationDomain { omega_eff: f64, contact: f64 },
    #[error("invalid geometry calibration: {0}")]
    InvalidCalibration(String),
}

/// Which one-sided limit to take at a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Limit from below, `z → z0⁻`.
    Left,
    /// Limit from above, `z → z0⁺`.
    Right,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Half of the device a position belongs to. The tag is consulted only at
    /// `z = 0`, where it is mandatory.
    pub fn resolve(z: f64, tag: Option<Side>) -> Result<Side, ScheduleError> {
        if z < 0.0 {
            Ok(Side::Left)
        } else if z > 0.0 {
            Ok(Side::Right)
        } else {
            tag.ok_or(ScheduleError::Discontinuity)
        }
    }

    /// Like [`Side::resolve`] with a tag that is always present.
    pub fn at(z: f64, tag: Side) -> Side {
        if z < 0.0 {
            Side::Left
        } else if z > 0.0 {
            Side::Right
        } else {
            tag
        }
    }
}

/// All schedule quantities at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub z: f64,
    /// Bare coupling `Ω`.
    pub omega: f64,
    /// Bare mismatch `Δ`.
    pub delta: f64,
    /// Counterdiabatic coupling `Ω_a = θ̇/2`.
    pub omega_a: f64,
    /// Phase-rotation angle `atan2(Ω_a, Ω)`.
    pub phi: f64,
    /// Mixing angle `atan2(Ω, Δ)`.
    pub theta: f64,
    pub omega_eff: f64,
    pub delta_eff: f64,
}

/// Closed-form sech coupling with a mismatch that changes sign at `z = 0`.
///
/// `left_mismatch` is the value of the mismatch for `z < 0`; it may carry
/// either sign, which lets the same construction serve the reduced
/// three-guide problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignFlipProfile {
    pub peak_coupling: f64,
    pub left_mismatch: f64,
    pub half_length: f64,
}

impl SignFlipProfile {
    fn rate(&self) -> f64 {
        2.0 * PI / self.half_length
    }

    pub fn coupling(&self, z: f64) -> f64 {
        self.peak_coupling * (1.0 / (self.rate() * z).cosh())
    }

    /// `(Ω, Ω̇, Ω̈)`.
    fn coupling_jet(&self, z: f64) -> (f64, f64, f64) {
        let k = self.rate();
        let u = k * z;
        let sech = 1.0 / u.cosh();
        let tanh = u.tanh();
        let omega = self.peak_coupling * sech;
        let d1 = -self.peak_coupling * k * sech * tanh;
        let d2 = -self.peak_coupling * k * k * sech * (1.0 - 2.0 * tanh * tanh);
        (omega, d1, d2)
    }

    pub fn mismatch(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left_mismatch,
            Side::Right => -self.left_mismatch,
        }
    }

    /// Evaluates every schedule quantity on the given half. The mismatch is
    /// piecewise constant, so `Δ̇ = 0` away from the jump.
    pub fn point(&self, z: f64, side: Side) -> SchedulePoint {
        let (omega, omega_dot, omega_ddot) = self.coupling_jet(z);
        let delta = self.mismatch(side);

        let gap2 = omega * omega + delta * delta;
        let (omega_a, omega_a_dot) = if gap2 > 0.0 {
            let omega_a = omega_dot * delta / (2.0 * gap2);
            let omega_a_dot = delta * (omega_ddot * gap2 - 2.0 * omega * omega_dot * omega_dot)
                / (2.0 * gap2 * gap2);
            (omega_a, omega_a_dot)
        } else {
            (0.0, 0.0)
        };

        let eff2 = omega * omega + omega_a * omega_a;
        let phi_dot = if eff2 > 0.0 {
            (omega_a_dot * omega - omega_dot * omega_a) / eff2
        } else {
            0.0
        };

        SchedulePoint {
            z,
            omega,
            delta,
            omega_a,
            phi: omega_a.atan2(omega),
            theta: omega.atan2(delta),
            omega_eff: if omega_a == 0.0 {
                omega.abs()
            } else {
                omega.hypot(omega_a)
            },
            delta_eff: delta - 0.5 * phi_dot,
        }
    }
}

/// Physical design point of a two-guide coupler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Peak coupling `Ω0`, mm⁻¹.
    pub omega0: f64,
    /// Mismatch magnitude `Δ0`, mm⁻¹.
    pub delta0: f64,
    /// Half length `L`, mm. The device spans `[-L, L]`.
    pub half_length: f64,
    /// Use the counterdiabatic schedule instead of the bare one.
    pub sta: bool,
}

impl ModelParams {
    pub fn new(
        omega0: f64,
        delta0: f64,
        half_length: f64,
        sta: bool,
    ) -> Result<Self, ScheduleError> {
        let p = ModelParams {
            omega0,
            delta0,
            half_length,
            sta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_total_length(
        omega0: f64,
        delta0: f64,
        total_length: f64,
        sta: bool,
    ) -> Result<Self, ScheduleError> {
        Self::new(omega0, delta0, 0.5 * total_length, sta)
    }

    // Ω0 = 0 is accepted: decoupled guides are a meaningful limit for sweeps.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |msg: String| Err(ScheduleError::InvalidParams(msg));
        if !(self.omega0.is_finite() && self.omega0 >= 0.0) {
            return bad(format!(
                "omega0 must be finite and >= 0, got {}",
                self.omega0
            ));
        }
        if !(self.delta0.is_finite() && self.delta0 >= 0.0) {
            return bad(format!(
                "delta0 must be finite and >= 0, got {}",
                self.delta0
            ));
        }
        if !(self.half_length.is_finite() && self.half_length > 0.0) {
            return bad(format!(
                "half_length must be finite and > 0, got {}",
                self.half_length
            ));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        2.0 * self.half_length
    }

    pub fn with_sta(self, sta: bool) -> Self {
        ModelParams { sta, ..self }
    }

    pub fn profile(&self) -> SignFlipProfile {
        SignFlipProfile {
            peak_coupling: self.omega0,
            left_mismatch: self.delta0,
            half_length: self.half_length,
        }
    }

    fn check_range(&self, z: f64) -> Result<(), ScheduleError> {
        if z.is_finite() && z.abs() <= self.half_length * (1.0 + RANGE_SLACK) {
            Ok(())
        } else {
            Err(ScheduleError::OutOfRange {
                z,
                half_length: self.half_length,
            })
        }
    }

    /// Bare `(Ω, Δ)`. At `z = 0` a side must be given.
    pub fn raw_schedule(&self, z: f64, side: Option<Side>) -> Result<(f64, f64), ScheduleError> {
        self.check_range(z)?;
        let side = Side::resolve(z, side)?;
        let profile = self.profile();
        Ok((profile.coupling(z), profile.mismatch(side)))
    }

    /// Counterdiabatic coupling `Ω_a(z)`.
    pub fn cd_coupling(&self, z: f64, side: Option<Side>) -> Result<f64, ScheduleError> {
        Ok(self.effective_schedule(z, side)?.omega_a)
    }

    pub fn effective_schedule(
        &self,
        z: f64,
        side: Option<Side>,
    ) -> Result<SchedulePoint, ScheduleError> {
        self.check_range(z)?;
        let side = Side::resolve(z, side)?;
        Ok(self.profile().point(z, side))
    }

    /// `(Ω, Δ)` that enter the coupled-mode generator: bare or effective
    /// depending on `sta`. `side` only matters at `z = 0`. No range check.
    pub fn coefficients(&self, z: f64, side: Side) -> (f64, f64) {
        let side = Side::at(z, side);
        let profile = self.profile();
        if self.sta {
            let pt = profile.point(z, side);
            (pt.omega_eff, pt.delta_eff)
        } else {
            (profile.coupling(z), profile.mismatch(side))
        }
    }

    /// Adiabaticity and coupling-bound maxima over a uniform grid of
    /// `samples` points on `[-L, L]`. A grid point at `z = 0` is evaluated
    /// on both sides.
    pub fn diagnostics(&self, samples: usize) -> Result<Diagnostics, ScheduleError> {
        if samples < 2 {
            return Err(ScheduleError::TooFewSamples(samples));
        }
        let profile = self.profile();
        let step = self.total_length() / (samples - 1) as f64;
        let mut diag = Diagnostics::default();
        for k in 0..samples {
            let z = if k == samples - 1 {
                self.half_length
            } else {
                -self.half_length + k as f64 * step
            };
            let sides: &[Side] = if z == 0.0 {
                &[Side::Left, Side::Right]
            } else if z < 0.0 {
                &[Side::Left]
            } else {
                &[Side::Right]
            };
            for &side in sides {
                let pt = profile.point(z, side);
                let gap = pt.omega.hypot(pt.delta);
                if gap > 0.0 {
                    diag.max_adiabaticity_ratio =
                        diag.max_adiabaticity_ratio.max(pt.omega_a.abs() / gap);
                }
                if pt.omega > 0.0 {
                    diag.max_cd_ratio = diag.max_cd_ratio.max(pt.omega_a.abs() / pt.omega);
                }
                diag.max_effective_coupling = diag.max_effective_coupling.max(pt.omega_eff);
            }
        }
        diag.bound_satisfied = diag.max_cd_ratio <= 1.0 + BOUND_TOLERANCE;
        Ok(diag)
    }
}

/// Grid maxima describing how adiabatic a design is and whether the
/// counterdiabatic coupling stays below the bare coupling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max |θ̇/2| / √(Ω² + Δ²)`.
    pub max_adiabaticity_ratio: f64,
    /// `max |Ω_a| / |Ω|`.
    pub max_cd_ratio: f64,
    /// `max_cd_ratio ≤ 1`.
    pub bound_satisfied: bool,
    /// `max Ω_eff` over the grid.
    pub max_effective_coupling: f64,
}

/// Mixing angle on the `(0, π)` branch for positive coupling.
pub fn mixing_angle(omega: f64, delta: f64) -> Result<f64, ScheduleError> {
    if omega == 0.0 && delta == 0.0 {
        return Err(ScheduleError::UndefinedAngle);
    }
    Ok(omega.atan2(delta))
}

/// Fitted constants linking coupling to guide separation and mismatch to
/// width difference: `Ω = A·exp(−γ·d)` and `Δ = k·δW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryCalibration {
    /// `A`, coupling at zero separation, mm⁻¹.
    pub contact_coupling: f64,
    /// `γ`, evanescent decay rate, mm⁻¹.
    pub decay_rate: f64,
    /// `k`, mismatch per µm of width difference, mm⁻¹·µm⁻¹.
    pub width_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveguideGeometry {
    /// Edge-to-edge separation `d`, mm.
    pub separation: f64,
    /// Width difference `W1 − W2`, µm.
    pub width_difference: f64,
}

pub fn geometry_synthesis(
    point: &SchedulePoint,
    calib: &GeometryCalibration,
) -> Result<WaveguideGeometry, ScheduleError> {
    for (name, v) in [
        ("contact_coupling", calib.contact_coupling),
        ("decay_rate", calib.decay_rate),
        ("width_slope", calib.width_slope),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ScheduleError::InvalidCalibration(format!(
                "{name} must be > 0, got {v}"
            )));
        }
    }
    if point.omega_eff == 0.0 {
        return Err(ScheduleError::InfiniteSeparation);
    }
    if point.omega_eff > calib.contact_coupling {
        return Err(ScheduleError::CalibrationDomain {
            omega_eff: point.omega_eff,
            contact: calib.contact_coupling,
        });
    }
    Ok(WaveguideGeometry {
        separation: (calib.contact_coupling / point.omega_eff).ln() / calib.decay_rate,
        width_difference: point.delta_eff / calib.width_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fig2() -> ModelParams {
        ModelParams::with_total_length(1.5, 0.1, 25.0, true).unwrap()
    }

    fn theta_at(p: &ModelParams, z: f64) -> f64 {
        let (o, d) = p.raw_schedule(z, None).unwrap();
        mixing_angle(o, d).unwrap()
    }

    fn phi_at(p: &ModelParams, z: f64) -> f64 {
        p.effective_schedule(z, None).unwrap().phi
    }

    #[test]
    fn raw_schedule_at_midpoint_needs_a_side() {
        let p = fig2();
        assert_eq!(p.raw_schedule(0.0, None), Err(ScheduleError::Discontinuity));
        assert_eq!(p.raw_schedule(0.0, Some(Side::Left)).unwrap(), (1.5, 0.1));
        assert_eq!(p.raw_schedule(0.0, Some(Side::Right)).unwrap(), (1.5, -0.1));
    }

    #[test]
    fn raw_schedule_at_edges() {
        let p = fig2();
        let expected = 1.5 / (2.0 * PI).cosh();
        for z in [-12.5, 12.5] {
            let (o, _) = p.raw_schedule(z, None).unwrap();
            assert_relative_eq!(o, expected, max_relative = 1e-14);
        }
        assert!(matches!(
            p.raw_schedule(12.6, None),
            Err(ScheduleError::OutOfRange { .. })
        ));
    }

    #[test]
    fn mixing_angle_branches() {
        assert_relative_eq!(mixing_angle(1.0, 1.0).unwrap(), PI / 4.0);
        assert_relative_eq!(mixing_angle(1.0, 0.0).unwrap(), PI / 2.0);
        assert_relative_eq!(mixing_angle(1.0, -1.0).unwrap(), 3.0 * PI / 4.0);
        assert_eq!(mixing_angle(0.0, 0.0), Err(ScheduleError::UndefinedAngle));
    }

    #[test]
    fn theta_jumps_to_its_supplement_across_the_flip() {
        let p = fig2();
        let left = p.effective_schedule(0.0, Some(Side::Left)).unwrap().theta;
        let right = p.effective_schedule(0.0, Some(Side::Right)).unwrap().theta;
        assert_relative_eq!(right, PI - left, epsilon = 1e-15);
    }

    #[test]
    fn cd_coupling_matches_finite_difference_of_theta() {
        let p = fig2();
        let l = p.half_length;
        let h = 1e-6 * l;
        let z = -l / 4.0;
        let fd = (theta_at(&p, z + h) - theta_at(&p, z - h)) / (4.0 * h);
        let closed = p.cd_coupling(z, None).unwrap();
        assert!(closed > 0.0);
        assert_relative_eq!(closed, fd, max_relative = 1e-6);
    }

    fn five_point(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
        (f(z - 2.0 * h) - 8.0 * f(z - h) + 8.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn cd_coupling_random_positions_against_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(o0, d0, total) in &[(1.5, 0.1, 25.0), (5.0, 1.0, 0.7), (0.3, 2.0, 3.0)] {
            let p = ModelParams::with_total_length(o0, d0, total, true).unwrap();
            let l = p.half_length;
            let h = 1e-6 * l;
            let mut checked = 0;
            while checked < 100 {
                let z: f64 = rng.gen_range(-0.997 * l..0.997 * l);
                if z.abs() < 3e-3 * l {
                    continue;
                }
                let fd = (theta_at(&p, z + h) - theta_at(&p, z - h)) / (4.0 * h);
                let closed = p.cd_coupling(z, None).unwrap();
                assert!(
                    (closed - fd).abs() / closed.abs().max(1e-12) <= 1e-6,
                    "z={z} closed={closed} fd={fd}"
                );

                // φ̇ enters Δ_eff; check it the same way.
                let pt = p.effective_schedule(z, None).unwrap();
                let phi_dot = 2.0 * (pt.delta - pt.delta_eff);
                let fd_phi = five_point(|x| phi_at(&p, x), z, 1e-3 * l);
                assert!(
                    (phi_dot - fd_phi).abs() / phi_dot.abs().max(1e-12) <= 1e-6,
                    "z={z} phi_dot={phi_dot} fd={fd_phi}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn cd_coupling_vanishes_at_the_flip() {
        let p = fig2();
        let eps = 1e-8 * p.half_length;
        for z in [-eps, eps] {
            let pt = p.effective_schedule(z, None).unwrap();
            assert!(pt.omega_a.abs() <= 1e-6 * p.omega0);
            assert!((pt.omega_eff - p.omega0).abs() <= 1e-6 * p.omega0);
        }
        for side in [Side::Left, Side::Right] {
            let pt = p.effective_schedule(0.0, Some(side)).unwrap();
            assert_eq!(pt.omega_a, 0.0);
            assert_eq!(pt.omega_eff, p.omega0);
        }
    }

    #[test]
    fn zero_mismatch_makes_the_correction_vanish() {
        let p = ModelParams::with_total_length(1.5, 0.0, 4.0, true).unwrap();
        for k in 0..=40 {
            let z = -2.0 + 0.1 * k as f64;
            let side = if z == 0.0 { Some(Side::Left) } else { None };
            let (o, d) = p.raw_schedule(z, side).unwrap();
            let pt = p.effective_schedule(z, side).unwrap();
            assert_eq!(pt.omega_a, 0.0);
            assert_eq!(pt.omega_eff, o);
            assert_eq!(pt.delta_eff, d);
        }
    }

    #[test]
    fn effective_schedule_symmetries() {
        let p = fig2();
        for k in 1..=200 {
            let z = p.half_length * k as f64 / 200.0;
            let a = p.effective_schedule(-z, None).unwrap();
            let b = p.effective_schedule(z, None).unwrap();
            assert!((a.omega - b.omega).abs() <= 1e-12);
            assert!((a.omega_a - b.omega_a).abs() <= 1e-12);
            assert!((a.delta + b.delta).abs() <= 1e-12);
            assert!((a.delta_eff + b.delta_eff).abs() <= 1e-12);
            assert!(a.omega_a >= 0.0 && b.omega_a >= 0.0);
        }
        let l = p.effective_schedule(0.0, Some(Side::Left)).unwrap();
        let r = p.effective_schedule(0.0, Some(Side::Right)).unwrap();
        assert!((l.delta_eff + r.delta_eff).abs() <= 1e-12);
    }

    #[test]
    fn diagnostics_rejects_short_grids() {
        assert_eq!(fig2().diagnostics(1), Err(ScheduleError::TooFewSamples(1)));
    }

    #[test]
    fn diagnostics_without_mismatch() {
        let p = ModelParams::with_total_length(1.5, 0.0, 25.0, false).unwrap();
        let d = p.diagnostics(101).unwrap();
        assert_eq!(d.max_cd_ratio, 0.0);
        assert!(d.bound_satisfied);
    }

    #[test]
    fn diagnostics_short_device_violates_bound() {
        let p = ModelParams::with_total_length(1.5, 0.1, 0.5, true).unwrap();
        let d = p.diagnostics(2001).unwrap();
        assert!(d.max_cd_ratio > 1.0);
        assert!(!d.bound_satisfied);
    }

    #[test]
    fn diagnostics_cd_ratio_shrinks_with_length() {
        let mut last = f64::INFINITY;
        for l in [1.0, 2.0, 5.0, 10.0, 25.0] {
            let d = ModelParams::new(1.5, 0.1, l, true)
                .unwrap()
                .diagnostics(1001)
                .unwrap();
            assert!(d.max_cd_ratio <= last);
            last = d.max_cd_ratio;
        }
    }

    #[test]
    fn geometry_from_calibration() {
        let calib = GeometryCalibration {
            contact_coupling: 5.0,
            decay_rate: 2.0,
            width_slope: 0.5,
        };
        let mut pt = fig2().effective_schedule(-3.0, None).unwrap();
        pt.omega_eff = 5.0 * (-2.0f64).exp();
        pt.delta_eff = 0.0;
        let g = geometry_synthesis(&pt, &calib).unwrap();
        assert_relative_eq!(g.separation, 1.0, max_relative = 1e-14);
        assert_eq!(g.width_difference, 0.0);

        pt.omega_eff = 5.0;
        pt.delta_eff = 0.25;
        let g = geometry_synthesis(&pt, &calib).unwrap();
        assert_eq!(g.separation, 0.0);
        assert_relative_eq!(g.width_difference, 0.5);

        pt.omega_eff = 0.0;
        assert_eq!(
            geometry_synthesis(&pt, &calib),
            Err(ScheduleError::InfiniteSeparation)
        );
        pt.omega_eff = 6.0;
        assert!(matches!(
            geometry_synthesis(&pt, &calib),
            Err(ScheduleError::CalibrationDomain { .. })
        ));
        let bad = GeometryCalibration {
            decay_rate: 0.0,
            ..calib
        };
        assert!(matches!(
            geometry_synthesis(&pt, &bad),
            Err(ScheduleError::InvalidCalibration(_))
        ));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(-1.0, 0.1, 1.0, true).is_err());
        assert!(ModelParams::new(1.0, -0.1, 1.0, true).is_err());
        assert!(ModelParams::new(1.0, 0.1, 0.0, true).is_err());
        assert!(ModelParams::new(1.0, f64::NAN, 1.0, true).is_err());
        assert!(ModelParams::new(0.0, 0.1, 1.0, true).is_ok());
    }
}
