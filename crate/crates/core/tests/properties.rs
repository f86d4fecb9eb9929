use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ofo_recsys::controller::{polarization_cost, polarization_gradient, projected_update, ClickSurrogate, grad_ctr_forward_diff};
use ofo_recsys::filter::SensitivityFilter;
use ofo_recsys::harness::{generate_scenario, ScenarioConfig};
use ofo_recsys::metrics::sign_test_p_value;
use ofo_recsys::platform::{fj_step, fj_steady_state, fj_true_sensitivity, ClickBehaviour};

fn scenario(n: usize, seed: u64) -> ofo_recsys::platform::Platform {
    let cfg = ScenarioConfig {
        n,
        behaviour_split: n / 2,
        ..ScenarioConfig::default()
    };
    generate_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..=1.0, n)
}

/// Affine surrogate `g_i = 1/2 + s_i p_i + t_i x_i`.
struct Affine {
    s: Vec<f64>,
    t: Vec<f64>,
}

impl ClickSurrogate for Affine {
    fn users(&self) -> usize {
        self.s.len()
    }

    fn raw(&self, i: usize, p: f64, x: f64) -> f64 {
        0.5 + self.s[i] * p + self.t[i] * x
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn opinions_stay_in_the_box(seed in 0u64..10_000, x in unit_vec(6), p in unit_vec(6)) {
        let platform = scenario(6, seed);
        let next = fj_step(&DVector::from_vec(x), &DVector::from_vec(p), &platform.params).unwrap();
        prop_assert!(next.amax() <= 1.0);
    }

    #[test]
    fn steady_state_is_affine(seed in 0u64..10_000, a in unit_vec(5), b in unit_vec(5)) {
        let platform = scenario(5, seed);
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let h = fj_true_sensitivity(&platform.params).unwrap();
        let lhs = fj_steady_state(&a, &platform.params).unwrap() - fj_steady_state(&b, &platform.params).unwrap();
        prop_assert!((lhs - h * (a - b)).amax() < 1e-10);
    }

    #[test]
    fn click_probabilities_are_probabilities(p in -1.0f64..=1.0, x in -1.0f64..=1.0) {
        for b in [ClickBehaviour::ExtremityBias, ClickBehaviour::ProximityBias] {
            let g = b.probability(p, x);
            prop_assert!((0.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn projected_update_stays_feasible(p in unit_vec(4), phi in proptest::collection::vec(-50.0f64..50.0, 4), eta in 0.001f64..1.0) {
        let next = projected_update(&DVector::from_vec(p), &DVector::from_vec(phi), eta, true);
        prop_assert!(next.amax() <= 1.0);
    }

    #[test]
    fn polarization_cost_vanishes_exactly_inside_the_band(x in proptest::collection::vec(-1.0f64..=1.0, 5)) {
        let x = DVector::from_vec(x);
        let cost = polarization_cost(&x, -0.5, 0.5);
        prop_assert!(cost >= 0.0);
        let inside = x.iter().all(|v| (-0.5..=0.5).contains(v));
        prop_assert_eq!(cost == 0.0, inside);
        let grad = polarization_gradient(&x, -0.5, 0.5);
        for (g, v) in grad.iter().zip(x.iter()) {
            prop_assert!(g * v >= 0.0);
        }
    }

    #[test]
    fn forward_difference_is_exact_on_affine_surrogates(
        s in proptest::collection::vec(-0.4f64..0.4, 3),
        t in proptest::collection::vec(-0.4f64..0.4, 3),
        p in unit_vec(3),
        x in unit_vec(3),
        mu in 0.01f64..0.5,
    ) {
        let f = Affine { s: s.clone(), t: t.clone() };
        let (gp, gx) = grad_ctr_forward_diff(&f, &DVector::from_vec(p), &DVector::from_vec(x), mu);
        for i in 0..3 {
            prop_assert!((gp[i] + s[i]).abs() < 1e-9);
            prop_assert!((gx[i] + t[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_covariance_stays_symmetric_psd(steps in proptest::collection::vec((unit_vec(3), unit_vec(3)), 1..30)) {
        let mut f = SensitivityFilter::new(3, 10.0).unwrap();
        for (dx, dp) in steps {
            f.observe(&DVector::from_vec(dx), &(DVector::from_vec(dp) * 0.1)).unwrap();
        }
        let s: &DMatrix<f64> = f.covariance();
        prop_assert!((s - s.transpose()).amax() <= 1e-9);
        let min = s.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-9);
    }

    #[test]
    fn sign_test_is_monotone(trials in 1usize..60, wins in 0usize..60) {
        let wins = wins.min(trials);
        let p = sign_test_p_value(wins, trials);
        prop_assert!((0.0..=1.0).contains(&p));
        if wins < trials {
            prop_assert!(sign_test_p_value(wins + 1, trials) <= p);
        }
    }
}
