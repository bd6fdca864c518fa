use num_complex::Complex64;
use proptest::prelude::*;
use sta_coupler::propagator::Amplitudes;
use sta_coupler::splitter::reduce_bright_dark;
use sta_coupler::{ModelParams, Side};

fn params() -> impl Strategy<Value = ModelParams> {
    (0.05f64..6.0, 0.01f64..4.0, 0.05f64..15.0)
        .prop_map(|(o, d, l)| ModelParams::new(o, d, l, true).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mirror_symmetries(p in params(), t in 0.0f64..=1.0) {
        let z = t * p.half_length;
        let right = p.effective_schedule(z, Some(Side::Right)).unwrap();
        let left = p.effective_schedule(-z, Some(Side::Left)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(right.omega, left.omega));
        prop_assert!(close(right.omega_a, left.omega_a));
        prop_assert!(close(right.omega_eff, left.omega_eff));
        prop_assert!(close(right.delta, -left.delta));
        prop_assert!(close(right.delta_eff, -left.delta_eff));
    }

    #[test]
    fn schedule_signs_and_ranges(p in params(), t in -1.0f64..=1.0) {
        let z = t * p.half_length;
        let pt = p.effective_schedule(z, Some(Side::Left)).unwrap();
        prop_assert!(pt.omega >= 0.0);
        prop_assert!(pt.omega_a >= 0.0);
        prop_assert!(pt.theta > 0.0 && pt.theta < std::f64::consts::PI);
        prop_assert!(pt.omega_eff >= pt.omega);
    }

    #[test]
    fn flag_off_is_the_bare_schedule(p in params(), t in -1.0f64..=1.0) {
        let z = t * p.half_length;
        let bare = p.with_sta(false);
        let (o, d) = bare.raw_schedule(z, Some(Side::Right)).unwrap();
        prop_assert_eq!(bare.coefficients(z, Side::Right), (o, d));
    }

    #[test]
    fn no_mismatch_no_correction(o in 0.05f64..6.0, l in 0.05f64..15.0, t in -1.0f64..=1.0) {
        let p = ModelParams::new(o, 0.0, l, true).unwrap();
        let z = t * l;
        prop_assert_eq!(p.coefficients(z, Side::Left), p.with_sta(false).coefficients(z, Side::Left));
        prop_assert_eq!(p.cd_coupling(z, Some(Side::Left)).unwrap(), 0.0);
    }

    #[test]
    fn bright_dark_round_trip(v in proptest::array::uniform6(-1.0f64..1.0)) {
        let c = Amplitudes::<3>::new(
            Complex64::new(v[0], v[1]),
            Complex64::new(v[2], v[3]),
            Complex64::new(v[4], v[5]),
        );
        let bd = reduce_bright_dark(&c);
        prop_assert!((bd.to_guides() - c).camax() <= 1e-15);
        let total = bd.bright.norm_sqr() + bd.middle.norm_sqr() + bd.dark.norm_sqr();
        prop_assert!((total - c.norm_squared()).abs() <= 1e-14);
    }
}
