use mcgdiff::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn paper_schedule() -> Schedule {
    Schedule::linear(1000, 0.2, 1e-4, 1.0).unwrap()
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Checks that a sample of `n` draws has mean `mu` and variance `var` within
/// four standard errors, using the Gaussian fourth moment for the variance.
fn assert_gaussian_moments(draws: &[f64], mu: f64, var: f64, what: &str) {
    let n = draws.len() as f64;
    let (m, v) = moments(draws);
    let se_m = (var / n).sqrt();
    let se_v = var * (2.0 / (n - 1.0)).sqrt();
    assert!((m - mu).abs() < 4.0 * se_m, "{what}: mean {m} vs {mu} (se {se_m})");
    assert!((v - var).abs() < 4.0 * se_v, "{what}: variance {v} vs {var} (se {se_v})");
}

#[test]
fn bridge_composes_with_forward_marginal() {
    let cases: [(f64, usize, f64); 3] = [(1.3, 2, 1.0), (-0.7, 400, 0.5), (2.5, 1000, 0.0)];
    for (case, &(x0, t, eta)) in cases.iter().enumerate() {
        let sched = Schedule::linear(1000, 1e-4, 0.02, eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70 + case as u64);
        let (c, v) = (sched.sqrt_alpha_bar(t), 1.0 - sched.alpha_bar(t));
        let sd = sched.sigma(t);
        let mut mu = [0.0];
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let xt = c * x0 + v.sqrt() * f64::std_normal(&mut rng);
                sched.bridge_mean(&[x0], &[xt], t, &mut mu).unwrap();
                mu[0] + sd * f64::std_normal(&mut rng)
            })
            .collect();
        let ab_prev = sched.alpha_bar(t - 1);
        assert_gaussian_moments(&draws, ab_prev.sqrt() * x0, 1.0 - ab_prev, &format!("case {case}"));
    }
}

#[test]
fn forward_steps_compose() {
    let sched = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (s, t, x0) = (5, 40, 0.8);
    let (c1, v1) = sched.forward_params(0, s).unwrap();
    let (c2, v2) = sched.forward_params(s, t).unwrap();
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let xs = c1 * x0 + v1.sqrt() * f64::std_normal(&mut rng);
            c2 * xs + v2.sqrt() * f64::std_normal(&mut rng)
        })
        .collect();
    assert_gaussian_moments(&draws, sched.sqrt_alpha_bar(t) * x0, 1.0 - sched.alpha_bar(t), "q(t|0)");
}

/// `E[x0 | xt]` for a unit-covariance mixture, computed from component
/// responsibilities without the noise predictor.
fn conditional_mean(prior: &Prior, sched: &Schedule, x: &[f64], t: usize) -> Vec<f64> {
    let c = sched.sqrt_alpha_bar(t);
    let logs: Vec<f64> = prior
        .means()
        .zip(prior.weights())
        .map(|(m, w)| w.ln() - 0.5 * x.iter().zip(m).map(|(a, b)| (a - c * b).powi(2)).sum::<f64>())
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = r.iter().sum();
    let mut out = vec![0.0; x.len()];
    for (m, ri) in prior.means().zip(&r) {
        for k in 0..x.len() {
            out[k] += ri / z * (m[k] + c * (x[k] - c * m[k]));
        }
    }
    out
}

#[test]
fn noise_prediction_gives_conditional_mean() {
    let sched = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
    let steps: Vec<usize> = (1..=1000).filter(|&t| sched.alpha_bar(t) > 1e-6).step_by(7).collect();
    assert!(steps.len() > 3);
    for &t in &steps {
        for _ in 0..5 {
            let x: Vec<f64> = (0..4).map(|_| 10.0 * f64::std_normal(&mut rng)).collect();
            let mut eps = vec![0.0; 4];
            let mut x0 = vec![0.0; 4];
            prior.eps_star(&sched, &x, t, &mut eps);
            sched.predict_x0(&x, t, &eps, &mut x0).unwrap();
            let want = conditional_mean(&prior, &sched, &x, t);
            for k in 0..4 {
                assert!((x0[k] - want[k]).abs() < 1e-8 * (1.0 + want[k].abs()), "t={t}: {x0:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn score_matches_finite_differences() {
    let sched = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for &d in &[2usize, 8] {
        let prior: Prior = gmm_grid_prior(d, 1.0, &mut rng).unwrap();
        for _ in 0..100 {
            let t = rng.random_range(1..=1000);
            let diffused = prior.diffused_marginal(&sched, t);
            let mut x = diffused.sample(1, &mut rng).into_vec();
            x.iter_mut().for_each(|v| *v += 0.5 * f64::std_normal(&mut rng));
            let mut score = vec![0.0; d];
            prior.score(&sched, &x, t, &mut score);
            let h = 1e-5;
            let fd: Vec<f64> = (0..d)
                .map(|k| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    (prior.log_density(&sched, &xp, t) - prior.log_density(&sched, &xm, t)) / (2.0 * h)
                })
                .collect();
            let err = fd.iter().zip(&score).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = score.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * norm.max(1.0), "d={d} t={t}: |fd - score| = {err}, |score| = {norm}");
        }
    }
}

#[test]
fn posterior_matches_importance_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let prior = Prior::new(vec![0.3, 0.7], vec![vec![-2.0, 1.0, 0.0], vec![2.0, -1.0, 1.0]]).unwrap();
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -1.0]);
    let sigma = 0.8;
    let y = DVector::from_vec(vec![0.5, -0.3]);
    let post = prior.exact_posterior(&a, sigma, &y).unwrap();
    let draws = prior.sample(400_000, &mut rng);
    let mut wsum = 0.0;
    let mut acc = [0.0; 3];
    let mut acc2 = [0.0; 3];
    for x in draws.rows() {
        let r = &a * DVector::from_column_slice(x) - &y;
        let w = (-0.5 * r.norm_squared() / (sigma * sigma)).exp();
        wsum += w;
        for k in 0..3 {
            acc[k] += w * x[k];
            acc2[k] += w * x[k] * x[k];
        }
    }
    let exact = post.overall_mean();
    let samples = post.sample(200_000, &mut rng);
    let sm = samples.mean();
    let cov = samples.covariance();
    for k in 0..3 {
        let m = acc[k] / wsum;
        let v = acc2[k] / wsum - m * m;
        assert!((m - exact[k]).abs() < 0.02, "coordinate {k}: IS mean {m} vs {}", exact[k]);
        assert!((sm[k] - exact[k]).abs() < 0.01);
        assert!((cov[k * 3 + k] - v).abs() < 0.03, "coordinate {k}: variance {} vs IS {v}", cov[k * 3 + k]);
    }
}

#[test]
fn posterior_density_integrates_like_its_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior: Prior = gmm_grid_prior(2, 1.0, &mut rng).unwrap();
    let a = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
    let post = prior.exact_posterior(&a, 0.3, &DVector::from_vec(vec![4.0])).unwrap();
    let s = post.sample(1, &mut rng);
    assert!(post.log_density(s.row(0)).unwrap().is_finite());
    let total: f64 = post.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

fn tau_scan(sched: &Schedule, sigma: f64, s: f64) -> usize {
    let gaps: Vec<f64> = (1..=sched.n())
        .map(|l| (sigma * sched.alpha_bar(l).sqrt() - (1.0 - sched.alpha_bar(l)).sqrt() * s).abs())
        .collect();
    let best = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    1 + gaps.iter().position(|&g| g == best).unwrap()
}

#[test]
fn match_tau_equals_exhaustive_scan() {
    let sched = paper_schedule();
    let std = Schedule::linear(1000, 1e-4, 0.02, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let sigma: f64 = rng.random_range(1e-3..2.0);
        let s: f64 = rng.random_range(1e-3..1.0);
        assert_eq!(match_tau(&sched, sigma, s), tau_scan(&sched, sigma, s));
        assert_eq!(match_tau(&std, sigma, s), tau_scan(&std, sigma, s));
    }
}

/// Step grid written directly from the appendix loop, with `√ᾱ` read from a
/// plain vector.
fn timesteps_reference(alpha: &[f64], r: usize, sigma: f64, s: &[f64]) -> Vec<usize> {
    let n = alpha.len() - 1;
    let mut set: Vec<usize> = Vec::new();
    for &sj in s {
        let mut best = (f64::INFINITY, 0);
        for (l, &a) in alpha.iter().enumerate().skip(1) {
            let g = (sigma * a.sqrt() - (1.0 - a).sqrt() * sj).abs();
            if g < best.0 {
                best = (g, l);
            }
        }
        if !set.contains(&best.1) {
            set.push(best.1);
        }
    }
    let n_m = (r - set.len() - 1) as f64;
    let delta = (alpha[1].sqrt() - alpha[n].sqrt()) / n_m;
    let mut out = vec![1];
    let mut e = 1;
    for l in 2..=n {
        if alpha[e].sqrt() - alpha[l].sqrt() > delta || set.contains(&l) {
            e = l;
            out.push(l);
        }
    }
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

#[test]
fn timesteps_equal_reference_on_paper_schedule() {
    let sched = paper_schedule();
    let alpha = sched.alpha_bars().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &r in &[20usize, 100] {
        for case in 0..20 {
            let dy = 1 + case % 4;
            let s: Vec<f64> = (0..dy).map(|_| rng.random_range(0.01..1.0)).collect();
            let sigma = if case == 0 { 0.0 } else { rng.random_range(0.0..s[0]) };
            let got = select_timesteps(&sched, r, sigma, &s).unwrap();
            let want = if sigma > 0.0 {
                timesteps_reference(&alpha, r, sigma, &s)
            } else {
                timesteps_reference(&alpha, r, sigma, &[])
            };
            assert_eq!(got, want, "R={r} sigma={sigma} s={s:?}");
        }
    }
}

#[test]
fn timesteps_on_standard_schedule_have_requested_length() {
    let sched = Schedule::linear(1000, 1e-4, 0.02, 1.0).unwrap();
    let steps = select_timesteps(&sched, 20, 0.0, &[]).unwrap();
    assert!(steps.len() >= 19 && steps.len() <= 21, "{steps:?}");
    assert_eq!(steps[0], 1);
    assert_eq!(*steps.last().unwrap(), 1000);
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}
