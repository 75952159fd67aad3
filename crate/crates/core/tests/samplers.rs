use mcgdiff::sampler::weight_bounded_variant;
use mcgdiff::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn standard() -> Schedule {
    Schedule::linear(1000, 1e-4, 0.02, 1.0).unwrap()
}

fn systematic(n: usize) -> GuidanceConfig {
    GuidanceConfig { scheme: ResamplingScheme::Systematic, ..GuidanceConfig::with_particles(n) }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn noiseless_output_pins_observed_block() {
    let sched = Schedule::linear(50, 2e-3, 0.4, 1.0).unwrap();
    let prior = Prior::standard_normal(3);
    let y = [0.4, -1.1];
    let out = mcgdiff_noiseless(&sched, &prior, &y, &GuidanceConfig::with_particles(64), StreamSeed(1)).unwrap();
    assert_eq!(out.samples.len(), 64);
    for x in out.samples.rows() {
        assert_eq!(&x[..2], &y);
        assert!(x[2].is_finite());
    }
    assert_eq!(out.diagnostics.steps.len(), 50);
}

#[test]
fn noiseless_gaussian_moments() {
    let sched = Schedule::linear(100, 1e-4, 0.02, 1.0).unwrap();
    let prior = Prior::standard_normal(2);
    let mut all = Vec::new();
    for seed in 0..10 {
        let out = mcgdiff_noiseless(&sched, &prior, &[0.7], &systematic(1024), StreamSeed(seed)).unwrap();
        all.extend(out.samples.column(1));
    }
    let (m, v) = mean_var(&all);
    assert!(m.abs() < 0.06, "mean {m}");
    assert!((v - 1.0).abs() < 0.12, "variance {v}");
}

#[test]
fn bimodal_posterior_keeps_both_modes() {
    let prior = Prior::new(vec![0.5, 0.5], vec![vec![0.5, 3.0], vec![-0.5, -3.0]]).unwrap();
    let y = 0.3_f64;
    let (l1, l2) = (-0.5 * (y - 0.5).powi(2), -0.5 * (y + 0.5).powi(2));
    let w1 = 1.0 / (1.0 + (l2 - l1).exp());
    let n = 4096;
    let out = mcgdiff_noiseless(&standard(), &prior, &[y], &systematic(n), StreamSeed(0)).unwrap();
    let upper = out.samples.rows().filter(|x| x[1] > 0.0).count() as f64 / n as f64;
    let sd = (w1 * (1.0 - w1) / n as f64).sqrt();
    assert!((upper - w1).abs() < 3.0 * sd, "upper mode frequency {upper} vs {w1}");
}

fn conjugate_problem() -> (Prior, Problem, Posterior) {
    let prior = Prior::standard_normal(2);
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let prob = Problem::new(a.clone(), 0.5, DVector::from_vec(vec![0.7])).unwrap();
    let post = prior.exact_posterior(&a, 0.5, &prob.y).unwrap();
    (prior, prob, post)
}

#[test]
fn noisy_gaussian_moments() {
    let (prior, prob, post) = conjugate_problem();
    let plan = DdimPlan::new(&Schedule::linear(200, 1e-4, 0.02, 1.0).unwrap(), &prob, None).unwrap();
    let pred = prior.transformed(&plan.spectral.v.transpose()).unwrap();
    let cfg = GuidanceConfig { final_weighting: FinalWeighting::Uniform, ..systematic(2048) };
    let mut pool: Option<Samples> = None;
    for seed in 0..5 {
        let out = mcgdiff_spectral(&plan.schedule, &pred, &plan.spectral, &cfg, StreamSeed(seed)).unwrap();
        match pool.as_mut() {
            None => pool = Some(out.samples),
            Some(p) => p.extend(&out.samples).unwrap(),
        }
    }
    let p = pool.unwrap();
    let (m, c) = (p.mean(), p.covariance());
    let exact = post.covariance();
    for i in 0..2 {
        assert!((m[i] - post.mean(0)[i]).abs() < 0.05, "mean {m:?}");
        for j in 0..2 {
            assert!((c[2 * i + j] - exact[(i, j)]).abs() < 0.1, "covariance {c:?}");
        }
    }
}

#[test]
fn general_driver_matches_spectral_driver() {
    let (prior, prob, _) = conjugate_problem();
    let sched = Schedule::linear(60, 1e-3, 0.2, 1.0).unwrap();
    let cfg = GuidanceConfig::with_particles(128);
    let a = mcgdiff_general(&sched, &prior, &prob, &cfg, StreamSeed(4)).unwrap();
    let plan = DdimPlan::new(&sched, &prob, None).unwrap();
    let pred = RotatedPredictor::new(&prior, plan.spectral.v.clone());
    let b = mcgdiff_spectral(&plan.schedule, &pred, &plan.spectral, &cfg, StreamSeed(4)).unwrap();
    for (x, z) in a.samples.as_slice().iter().zip(b.samples.as_slice()) {
        assert!((x - z).abs() < 1e-9);
    }
}

#[test]
fn noiseless_general_problem_satisfies_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
    let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, -1.0]);
    let y = DVector::from_vec(vec![3.0, -1.0]);
    let prob = Problem::new(a.clone(), 0.0, y.clone()).unwrap();
    let out = mcgdiff_general(&Schedule::linear(100, 1e-3, 0.2, 1.0).unwrap(), &prior, &prob, &GuidanceConfig::with_particles(64), StreamSeed(3)).unwrap();
    for x in out.samples.rows() {
        let r = &a * DVector::from_column_slice(x) - &y;
        assert!(r.norm() < 1e-9, "residual {}", r.norm());
    }
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let (prior, prob, _) = conjugate_problem();
    let sched = Schedule::linear(50, 1e-3, 0.3, 1.0).unwrap();
    let cfg = GuidanceConfig::with_particles(300);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mcgdiff_general(&sched, &prior, &prob, &cfg, StreamSeed(9)).unwrap())
    };
    let a = run(1);
    let b = run(6);
    assert_eq!(a.samples.as_slice(), b.samples.as_slice());
    let c = mcgdiff_general(&sched, &prior, &prob, &cfg, StreamSeed(10)).unwrap();
    assert_ne!(a.samples.as_slice(), c.samples.as_slice());
}

#[test]
fn bounded_weights_respect_their_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sched = Schedule::linear(100, 1e-3, 0.2, 1.0).unwrap();
    let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
    let y = [2.0, -3.0];
    for &delta in &[1e-6, 1e-2, 1.0] {
        let mut max_gamma = f64::NEG_INFINITY;
        let mut max_w = f64::NEG_INFINITY;
        for k in 0..2000 {
            let t = k % 100;
            let x: Vec<f64> = (0..4).map(|_| 6.0 * f64::std_normal(&mut rng)).collect();
            let w = weight_bounded_variant(&sched, &prior, &x, t, &y, delta).unwrap();
            assert!((0.0..=1.0).contains(&w.guided_probability));
            max_gamma = max_gamma.max(w.log_gamma);
            max_w = max_w.max(w.log_weight);
        }
        let bound = (max_gamma.exp() + delta) / delta;
        assert!(max_w.exp() <= bound * (1.0 + 1e-12), "delta {delta}: {} > {bound}", max_w.exp());
    }
}

#[test]
fn bounded_variant_requires_positive_delta() {
    let sched = Schedule::linear(10, 1e-2, 0.2, 1.0).unwrap();
    let prior = Prior::standard_normal(2);
    let cfg = GuidanceConfig::with_particles(8);
    assert!(mcgdiff_bounded(&sched, &prior, &[0.0], &cfg, StreamSeed(0)).is_err());
    assert!(weight_bounded_variant(&sched, &prior, &[0.0, 0.0], 0, &[0.0], 0.0).is_err());
}

#[test]
fn smcdiff_extension_recovers_conjugate_posterior() {
    let (prior, prob, post) = conjugate_problem();
    let plan = DdimPlan::new(&Schedule::linear(200, 1e-4, 0.02, 1.0).unwrap(), &prob, None).unwrap();
    let pred = prior.transformed(&plan.spectral.v.transpose()).unwrap();
    let mut pool: Option<Samples> = None;
    for seed in 0..5 {
        let out = smcdiff_extended(&plan.schedule, &pred, &plan.spectral, &systematic(2048), StreamSeed(seed)).unwrap();
        match pool.as_mut() {
            None => pool = Some(out.samples),
            Some(p) => p.extend(&out.samples).unwrap(),
        }
    }
    let p = pool.unwrap();
    let m = p.mean();
    for i in 0..2 {
        assert!((m[i] - post.mean(0)[i]).abs() < 0.08, "mean {m:?} vs {:?}", post.mean(0));
    }
}

#[test]
fn single_precision_sampler_runs() {
    let sched = DiffusionSchedule::<f32>::linear(50, 2e-3, 0.4, 1.0).unwrap();
    let prior = GaussianMixturePrior::<f32>::standard_normal(2);
    let out = mcgdiff_noiseless(&sched, &prior, &[0.5f32], &GuidanceConfig::with_particles(256), StreamSeed(2)).unwrap();
    assert!(out.samples.rows().all(|x| x[0] == 0.5 && x[1].is_finite()));
}

#[test]
fn invalid_configurations_are_rejected() {
    let sched = Schedule::linear(10, 1e-2, 0.2, 1.0).unwrap();
    let prior = Prior::standard_normal(2);
    let bad = [
        GuidanceConfig::with_particles(0),
        GuidanceConfig { kappa: 0.0, ..GuidanceConfig::with_particles(4) },
        GuidanceConfig { resampling: Resampling::Ess(1.5), ..GuidanceConfig::with_particles(4) },
    ];
    for cfg in &bad {
        assert!(mcgdiff_noiseless(&sched, &prior, &[0.0], cfg, StreamSeed(0)).is_err());
    }
    let deterministic = Schedule::linear(10, 1e-2, 0.2, 0.0).unwrap();
    assert!(mcgdiff_noiseless(&deterministic, &prior, &[0.0], &GuidanceConfig::with_particles(4), StreamSeed(0)).is_err());
    assert!(mcgdiff_noiseless(&sched, &prior, &[0.0, 1.0], &GuidanceConfig::with_particles(4), StreamSeed(0)).is_err());
}

#[test]
fn estimation_error_decays_like_inverse_square_root() {
    let prior = Prior::new(vec![0.5, 0.5], vec![vec![0.0, 1.5], vec![2.0, -1.5]]).unwrap();
    let steps: Vec<usize> = (0..40).map(|k| 1 + k * 999 / 39).collect();
    let sched = standard().subsample(&steps).unwrap();
    let y = [-0.5];
    let estimate = |n: usize, seed: u64| {
        let out = mcgdiff_noiseless(&sched, &prior, &y, &GuidanceConfig::with_particles(n), StreamSeed(seed)).unwrap();
        out.samples.column(1).iter().sum::<f64>() / n as f64
    };
    let reference = (0..32).map(|k| estimate(8192, 5_000_000 + k)).sum::<f64>() / 32.0;
    let ns = [8usize, 32, 128, 512];
    let errors: Vec<f64> = ns
        .iter()
        .map(|&n| (0..200).map(|r| (estimate(n, r + 10_000 * n as u64) - reference).abs()).sum::<f64>() / 200.0)
        .collect();
    let slope = metrics::loglog_slope(&ns, &errors).unwrap();
    assert!((-0.8..=-0.2).contains(&slope), "slope {slope}, errors {errors:?}");
}

#[test]
fn bounded_mixture_probability_matches_hand_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sched = Schedule::linear(100, 1e-3, 0.2, 1.0).unwrap();
    let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
    let y = [1.0, 2.0];
    for k in 0..200 {
        let t = 1 + k % 99;
        let x: Vec<f64> = (0..4).map(|_| 4.0 * f64::std_normal(&mut rng)).collect();
        let delta = 10f64.powi(k as i32 % 7 - 3);
        let w = weight_bounded_variant(&sched, &prior, &x, t, &y, delta).unwrap();
        let gamma = w.log_gamma.exp();
        assert!((w.guided_probability - gamma / (gamma + delta)).abs() < 1e-12);
        let huge = weight_bounded_variant(&sched, &prior, &x, t, &y, 1e300).unwrap();
        assert!(huge.log_weight.abs() < 1e-12 && huge.guided_probability < 1e-200);
    }
}

#[test]
fn smcdiff_single_particle_is_finite() {
    let (prior, prob, _) = conjugate_problem();
    let plan = DdimPlan::new(&Schedule::linear(50, 1e-3, 0.3, 1.0).unwrap(), &prob, None).unwrap();
    let pred = prior.transformed(&plan.spectral.v.transpose()).unwrap();
    let out = smcdiff_extended(&plan.schedule, &pred, &plan.spectral, &GuidanceConfig::with_particles(1), StreamSeed(0)).unwrap();
    assert_eq!(out.samples.len(), 1);
    assert!(out.samples.as_slice().iter().all(|v| v.is_finite()));
}
