use proptest::prelude::*;
use stopgame_core::*;

/// Strictly increasing grid and values on it.
fn grid_and_values(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(-2.0f64..2.0, n),
        )
            .prop_map(|(steps, f)| {
                let y = steps
                    .iter()
                    .scan(0.0, |acc, s| {
                        *acc += s;
                        Some(*acc)
                    })
                    .collect();
                (y, f)
            })
    })
}

fn lcm(y: &[f64], f: &[f64]) -> Vec<f64> {
    least_concave_majorant(y, f, End::Free, End::Free)
        .unwrap()
        .values
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn majorant_is_concave_and_touches_the_ends((y, f) in grid_and_values(48)) {
        let v = lcm(&y, &f);
        for i in 0..y.len() {
            prop_assert!(v[i] >= f[i] - 1e-12);
        }
        prop_assert!((v[0] - f[0]).abs() < 1e-12 && (v[y.len() - 1] - f[y.len() - 1]).abs() < 1e-12);
        let slopes: Vec<f64> = (1..y.len()).map(|i| (v[i] - v[i - 1]) / (y[i] - y[i - 1])).collect();
        for w in slopes.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "slopes {} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn majorant_is_idempotent((y, f) in grid_and_values(48)) {
        let v = lcm(&y, &f);
        prop_assert!(sup_diff(&lcm(&y, &v), &v) <= 1e-12);
    }

    #[test]
    fn majorant_is_monotone((y, f) in grid_and_values(48), bumps in prop::collection::vec(0.0f64..1.0, 48)) {
        let g: Vec<f64> = f.iter().zip(&bumps).map(|(a, b)| a + b).collect();
        let (vf, vg) = (lcm(&y, &f), lcm(&y, &g));
        for i in 0..y.len() {
            prop_assert!(vf[i] <= vg[i] + 1e-12);
        }
    }

    #[test]
    fn majorant_equals_the_biconjugate((y, f) in grid_and_values(24)) {
        let mut slopes = Vec::new();
        for i in 0..y.len() {
            for j in i + 1..y.len() {
                slopes.push((f[j] - f[i]) / (y[j] - y[i]));
            }
        }
        let b = biconjugate_from_conjugate(&y, &f, &slopes);
        prop_assert!(sup_diff(&b, &lcm(&y, &f)) <= 1e-9);
    }

    #[test]
    fn taut_string_stays_in_the_corridor_and_matches_the_fixpoint(
        (y, lo) in grid_and_values(40),
        gaps in prop::collection::vec(0.0f64..1.5, 40),
        ends in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let n = y.len();
        let hi: Vec<f64> = lo.iter().zip(&gaps).map(|(l, g)| l + g).collect();
        let pin = |i: usize, t: f64| CorridorEnd::Pinned(lo[i] + t * (hi[i] - lo[i]));
        let c = Corridor { y: y.clone(), lo: lo.clone(), hi: hi.clone(), left: pin(0, ends.0), right: pin(n - 1, ends.1) };
        let t = taut_string(&c).unwrap();
        for i in 0..n {
            prop_assert!(lo[i] <= t.values[i] && t.values[i] <= hi[i]);
            prop_assert!((t.eps_star[i] + t.delta_star[i] - (hi[i] - lo[i])).abs() <= 1e-12);
        }
        let fix = double_obstacle_fixpoint(&c, 1e-13, 2_000_000).unwrap();
        prop_assert!(sup_diff(&t.values, &fix.values) <= 1e-8);
    }

    #[test]
    fn unreachable_upper_obstacle_gives_the_concave_majorant((y, f) in grid_and_values(40)) {
        let n = y.len();
        let hi: Vec<f64> = f.iter().map(|v| v + 1e12).collect();
        let c = Corridor { y: y.clone(), lo: f.clone(), hi, left: CorridorEnd::Pinned(f[0]), right: CorridorEnd::Pinned(f[n - 1]) };
        let t = taut_string(&c).unwrap();
        prop_assert!(sup_diff(&t.values, &lcm(&y, &f)) <= 1e-9);
    }

    #[test]
    fn scale_round_trips(r in 0.01f64..0.2, sigma in 0.1f64..0.6, u in 0.0f64..1.0) {
        let spec = DiffusionSpec::gbm(r, sigma).with_window(1.0, 200.0);
        let fund = fundamental_solutions(&spec).unwrap();
        for dir in [Direction::PsiScale, Direction::PhiScale] {
            let st = build_scale(&fund, 257, Spacing::UniformX, dir).unwrap();
            let x = 1.0 + 199.0 * u;
            let back = st.from_natural(st.to_natural(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-10 * 199.0, "{x} -> {back}");
        }
    }

    #[test]
    fn exit_probabilities_are_sub_stochastic_and_monotone(
        drift in -1.0f64..1.0,
        sigma in 0.2f64..2.0,
        r in 0.01f64..1.0,
        (a, b, c, d) in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let fund = fundamental_solutions(&DiffusionSpec::brownian(drift, sigma, r).with_window(-5.0, 5.0)).unwrap();
        let mut p = [a, b, c, d].map(|t| -3.0 + 6.0 * t);
        p.sort_by(f64::total_cmp);
        let [y, x1, x2, z] = p;
        prop_assume!(z - y > 1e-6);
        let (l1, u1) = exit_laplace(&fund, x1, y, z).unwrap();
        let (l2, u2) = exit_laplace(&fund, x2, y, z).unwrap();
        for q in [l1, u1, l2, u2] {
            prop_assert!((0.0..=1.0).contains(&q));
        }
        prop_assert!(l1 + u1 <= 1.0 + 1e-12 && l2 + u2 <= 1.0 + 1e-12);
        prop_assert!(l2 <= l1 + 1e-12 && u2 >= u1 - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn monte_carlo_is_reproducible(seed in any::<u64>(), antithetic in any::<bool>()) {
        let spec = DiffusionSpec::gbm(0.05, 0.3);
        let put = PayoffSpec::parse("pos(100 - x)", None, Default::default()).unwrap();
        let cfg = McConfig { paths: 64, dt: 1e-2, horizon: Some(20.0), seed, antithetic, ..Default::default() };
        let run = || simulate_R(&spec, &put, 80.0, (60.0, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY), &cfg).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        prop_assert_eq!(a.truncation_mass.to_bits(), b.truncation_mass.to_bits());
    }
}
