use mcgdiff::metrics::sliced_wasserstein;
use mcgdiff::sampler::{k_coeff, resample_multinomial, resample_systematic};
use mcgdiff::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    (2usize..300, 1e-5f64..1e-2, 1e-3f64..0.3, 0.0f64..=1.0)
        .prop_map(|(n, b0, b1, eta)| Schedule::linear(n, b0, b1, eta).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_bar_is_decreasing_in_unit_interval(s in schedule_strategy()) {
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=s.n() {
            prop_assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn bridge_reproduces_forward_marginal(s in schedule_strategy(), frac in 0.0f64..1.0) {
        let t = 1 + ((s.n() - 1) as f64 * frac) as usize;
        let (a, b) = s.bridge_coefficients(t);
        let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let sig = s.sigma(t);
        prop_assert!(sig * sig <= 1.0 - ab_prev + 1e-12);
        prop_assert!((a + b * ab.sqrt() - ab_prev.sqrt()).abs() < 1e-10);
        prop_assert!((b * b * (1.0 - ab) + sig * sig - (1.0 - ab_prev)).abs() < 1e-10);
    }

    #[test]
    fn blend_factor_is_a_probability(s in schedule_strategy(), frac in 0.0f64..=1.0) {
        let t = ((s.n() as f64) * frac) as usize;
        let k = k_coeff(&s, t);
        prop_assert!((0.0..=1.0).contains(&k));
    }

    #[test]
    fn resampled_indices_hit_only_positive_weights(
        w in prop::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), -20.0f64..5.0], 1..40),
        n in 1usize..200,
        seed in any::<u64>(),
    ) {
        prop_assume!(w.iter().any(|v| v.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for a in [resample_multinomial(&w, n, &mut rng).unwrap(), resample_systematic(&w, n, &mut rng).unwrap()] {
            prop_assert_eq!(a.len(), n);
            prop_assert!(a.iter().all(|&i| i < w.len() && w[i].is_finite()));
        }
    }

    #[test]
    fn systematic_counts_are_floor_or_ceil(w in prop::collection::vec(-3.0f64..3.0, 1..30), n in 1usize..300, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = resample_systematic(&w, n, &mut rng).unwrap();
        let z: f64 = w.iter().map(|v| v.exp()).sum();
        for (i, v) in w.iter().enumerate() {
            let expected = n as f64 * v.exp() / z;
            let count = a.iter().filter(|&&j| j == i).count() as f64;
            prop_assert!(count >= expected.floor() - 1e-9 - 1.0 && count <= expected.ceil() + 1.0, "{} vs {}", count, expected);
        }
    }

    #[test]
    fn spectral_basis_round_trips(seed in any::<u64>(), dy in 1usize..4, sigma in prop_oneof![Just(0.0), 0.01f64..1.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let a = DMatrix::from_fn(dy, d, |_, _| f64::std_normal(&mut rng));
        let y = DVector::from_fn(dy, |_, _| f64::std_normal(&mut rng));
        let prob = Problem::new(a.clone(), sigma, y.clone()).unwrap();
        let sched = Schedule::linear(1000, 0.2, 1e-4, 1.0).unwrap();
        let spec = decompose(&prob, &sched).unwrap();
        let vtv = spec.v.transpose() * &spec.v;
        prop_assert!((vtv - DMatrix::identity(d, d)).norm() < 1e-10);
        prop_assert!(spec.singular.windows(2).all(|s| s[0] >= s[1]));
        let x: Vec<f64> = (0..d).map(|_| f64::std_normal(&mut rng)).collect();
        let back = spec.from_spectral(&spec.to_spectral(&x));
        for (u, v) in x.iter().zip(&back) {
            prop_assert!((u - v).abs() < 1e-10);
        }
        let z = spec.to_spectral(&x);
        let ax = &a * DVector::from_column_slice(&x);
        let uz = &spec.u * DVector::from_iterator(dy, (0..dy).map(|i| spec.singular[i] * z[i]));
        prop_assert!((ax - uz).norm() < 1e-9);
        if sigma > 0.0 {
            let taus = spec.tau.as_ref().unwrap();
            for (i, &t) in taus.iter().enumerate() {
                prop_assert_eq!(t, match_tau(&sched, sigma, spec.singular[i]));
            }
        }
    }

    #[test]
    fn timesteps_are_increasing_and_contain_matched_steps(
        r in 5usize..200,
        sigma in 0.0f64..1.0,
        s in prop::collection::vec(0.01f64..1.0, 1..4),
    ) {
        let sched = Schedule::linear(1000, 0.2, 1e-4, 1.0).unwrap();
        let steps = select_timesteps(&sched, r, sigma, &s).unwrap();
        prop_assert_eq!(steps[0], 1);
        prop_assert_eq!(*steps.last().unwrap(), 1000);
        prop_assert!(steps.windows(2).all(|w| w[0] < w[1]));
        if sigma > 0.0 {
            for &sj in &s {
                prop_assert!(steps.contains(&match_tau(&sched, sigma, sj)));
            }
        }
    }

    #[test]
    fn responsibilities_form_a_distribution(seed in any::<u64>(), t in 1usize..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
        let sched = Schedule::linear(1000, 0.2, 1e-4, 1.0).unwrap();
        let x: Vec<f64> = (0..4).map(|_| 20.0 * f64::std_normal(&mut rng)).collect();
        let r = prior.responsibilities(&sched, &x, t);
        prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sliced_wasserstein_is_a_symmetric_non_negative_distance(seed in any::<u64>(), n in 2usize..60, shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Samples::new(3, (0..3 * n).map(|_| f64::std_normal(&mut rng)).collect(), "a").unwrap();
        let b = Samples::new(3, (0..3 * n).map(|_| shift + f64::std_normal(&mut rng)).collect(), "b").unwrap();
        let ab = sliced_wasserstein(&a, &b, 16, 2, StreamSeed(seed)).unwrap();
        let ba = sliced_wasserstein(&b, &a, 16, 2, StreamSeed(seed)).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert_eq!(ab.value, ba.value);
        prop_assert_eq!(sliced_wasserstein(&a, &a, 16, 2, StreamSeed(seed)).unwrap().value, 0.0);
    }

    #[test]
    fn sample_csv_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20)) {
        let s = Samples::from_rows(3, rows.iter().map(|r| r.clone()), "x").unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Samples::read_csv(buf.as_slice(), "x").unwrap();
        prop_assert_eq!(s.as_slice(), back.as_slice());
    }
}
