use proptest::prelude::*;
use vidgp::darcy::DarcySolver;
use vidgp::fieldio::{field_to_string, parse_field};
use vidgp::grid::{Grid2D, ObservationPlan, ScalarField};
use vidgp::prior::Normalization;
use vidgp::vae::kl_diag_gaussian;
use vidgp::vi::{entropy_closed_form, smoothed};

fn field(nx: usize, ny: usize, vals: &[f64]) -> ScalarField {
    let g = Grid2D::new(nx, ny).unwrap();
    ScalarField::new(g, vals.iter().cycle().take(g.len()).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sourceless_pressure_obeys_the_maximum_principle(
        nx in 2usize..9, ny in 2usize..9, vals in prop::collection::vec(-2.0f64..2.0, 1..64)
    ) {
        let k = field(nx, ny, &vals);
        let sol = DarcySolver::new(0.0).solve_pressure(&k).unwrap();
        for &p in sol.p.values() {
            prop_assert!((-1e-10..=1.0 + 1e-10).contains(&p));
        }
    }

    #[test]
    fn positive_source_raises_pressure(
        nx in 2usize..7, ny in 2usize..7, vals in prop::collection::vec(-1.0f64..1.0, 1..36)
    ) {
        let k = field(nx, ny, &vals);
        let a = DarcySolver::new(0.0).solve_pressure(&k).unwrap();
        let b = DarcySolver::new(3.0).solve_pressure(&k).unwrap();
        for (x, y) in a.p.values().iter().zip(b.p.values()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn forward_observations_are_pressure_interpolants(
        vals in prop::collection::vec(-1.0f64..1.0, 1..25), n in 1usize..5
    ) {
        let k = field(5, 5, &vals);
        let s = DarcySolver::new(3.0);
        let sol = s.solve_pressure(&k).unwrap();
        let (lo, hi) = sol.p.min_max();
        for v in s.forward(&k, &ObservationPlan::uniform(n)).unwrap() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn field_text_round_trips_exactly(
        nx in 2usize..6, ny in 2usize..6, vals in prop::collection::vec(-1e6f64..1e6, 1..36)
    ) {
        let f = field(nx, ny, &vals);
        prop_assert_eq!(parse_field(&field_to_string(&f)).unwrap(), f);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-3.0f64..3.0, 1..8), lv in prop::collection::vec(-3.0f64..3.0, 8)
    ) {
        let lv = &lv[..mu.len()];
        let kl = kl_diag_gaussian(&mu, lv).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl_diag_gaussian(&vec![0.0; mu.len()], &vec![0.0; mu.len()]).unwrap() == 0.0);
    }

    #[test]
    fn entropy_grows_with_log_variance(lv in prop::collection::vec(-4.0f64..4.0, 1..8), bump in 0.01f64..2.0) {
        let mut up = lv.clone();
        up[0] += bump;
        prop_assert!(entropy_closed_form(&up) > entropy_closed_form(&lv));
    }

    #[test]
    fn affine_normalization_inverts(low in -5.0f64..5.0, span in 0.1f64..10.0, k in -20.0f64..20.0) {
        let n = Normalization::Affine { low, high: low + span };
        prop_assert!((n.denormalize(n.normalize(k)) - k).abs() < 1e-9 * (1.0 + k.abs()));
    }

    #[test]
    fn smoothing_stays_within_the_data_range(vals in prop::collection::vec(-10.0f64..10.0, 1..50), w in 1usize..20) {
        let s = smoothed(&vals, w);
        let lo = vals.iter().copied().fold(f64::MAX, f64::min);
        let hi = vals.iter().copied().fold(f64::MIN, f64::max);
        prop_assert_eq!(s.len(), vals.len());
        prop_assert!(s.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }
}
