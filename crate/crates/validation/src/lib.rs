//! Acceptance criteria. Each returns whether it passed and a one-line account
//! of what was measured.

use mcgdiff::metrics::sliced_wasserstein;
use mcgdiff::sampler::weight_bounded_variant;
use mcgdiff::*;
use mcgdiff_cli::config::{SchemeArg, WeightingArg};
use mcgdiff_cli::experiments::{self, exhaustive_tau, pooled_runs, reference_timesteps};
use mcgdiff_cli::{ExperimentKind, Manifest, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

pub type Outcome = (bool, String);

fn paper_schedule() -> Schedule {
    Schedule::linear(1000, 0.2, 1e-4, 1.0).unwrap()
}

fn config(kind: ExperimentKind, seed: u64, dir: &Path) -> RunConfig {
    RunConfig { seed: Some(seed), out_dir: Some(dir.to_path_buf()), ..RunConfig::defaults(kind) }
}

fn check<'a>(m: &'a Manifest, name: &str) -> &'a mcgdiff_cli::Check {
    m.checks.iter().find(|c| c.name == name).expect("check present")
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn conjugate(part: &str, limit_s: f64) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = experiments::run_conjugate_check(&config(ExperimentKind::ConjugateCheck, 0, dir.path())).unwrap();
    let c = check(&m, part);
    let fast = m.wall_time_s < limit_s;
    (c.passed && fast, format!("{}; both checks ran in {:.1} s (< {limit_s} s)", c.detail, m.wall_time_s))
}

pub fn criterion_1() -> Outcome {
    conjugate("noiseless", 10.0)
}

pub fn criterion_2() -> Outcome {
    conjugate("noisy", 20.0)
}

pub fn criterion_3() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut passed = 0;
    let mut total = 0;
    for d_y in [1usize, 2, 4] {
        for case in 0..5u64 {
            let cfg = RunConfig {
                d_y,
                particles: 512,
                scheme: SchemeArg::Systematic,
                final_weighting: WeightingArg::ForwardRatio,
                keep_per_run: Some(32),
                max_sw_ratio: Some(3.0),
                ..config(ExperimentKind::Gmm, 1000 * d_y as u64 + case, &dir.path().join(format!("{d_y}-{case}")))
            };
            let m = experiments::run_gmm(&cfg).unwrap();
            let ok = m.passed();
            passed += ok as usize;
            total += 1;
            lines.push(format!("({d_y},{case}) {:.2}", m.summary["sw"] / m.summary["sw_noise_floor"]));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let ok = passed * 5 >= total * 4 && secs < 300.0;
    (ok, format!("{passed}/{total} cases within 3x noise floor (need 80%) in {secs:.0} s; ratios {}", lines.join(" ")))
}

pub fn criterion_4() -> Outcome {
    let root = StreamSeed(4242);
    let prior: Prior = gmm_grid_prior(8, 1.0, &mut root.stream(Purpose::PRIOR, 0, 0)).unwrap();
    let (prob, _) = random_problem(&prior, 2, &mut root.stream(Purpose::PROBLEM, 0, 0)).unwrap();
    let plan = DdimPlan::new(&paper_schedule(), &prob, None).unwrap();
    let pred = prior.transformed(&plan.spectral.v.transpose()).unwrap();
    let post = prior.exact_posterior(&prob.a, prob.sigma_y, &prob.y).unwrap();
    let ns = [2usize, 32, 256];
    let mut medians = Vec::new();
    let mut floors = Vec::new();
    for &n in &ns {
        let cfg = GuidanceConfig {
            scheme: ResamplingScheme::Systematic,
            final_weighting: FinalWeighting::ForwardRatio,
            ..GuidanceConfig::with_particles(n)
        };
        let mut sws = Vec::new();
        for seed in 0..10u64 {
            let run_seed = root.child(seed).child(n as u64);
            let pool = pooled_runs(10_000, n, |k| {
                Ok(mcgdiff_spectral(&plan.schedule, &pred, &plan.spectral, &cfg, run_seed.child(k))?.samples)
            })
            .unwrap();
            let exact = post.sample(10_000, &mut root.child(seed).stream(Purpose::SAMPLES, 0, 0));
            let proj = root.child(seed).child(Purpose::PROJECTION);
            sws.push(sliced_wasserstein(&pool, &exact, 128, 2, proj).unwrap().value);
            if n == ns[0] {
                let exact2 = post.sample(10_000, &mut root.child(seed).stream(Purpose::SAMPLES, 1, 0));
                floors.push(sliced_wasserstein(&exact2, &exact, 128, 2, proj).unwrap().value);
            }
        }
        sws.sort_by(f64::total_cmp);
        medians.push(0.5 * (sws[4] + sws[5]));
    }
    let (floor, floor_se) = mean_se(&floors);
    let floor_sd = floor_se * (floors.len() as f64).sqrt();
    let rises: Vec<f64> = medians.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let ok = rises.is_empty() || (rises.len() == 1 && rises[0] <= floor_sd);
    let shown: Vec<String> = ns.iter().zip(&medians).map(|(n, m)| format!("N={n} {m:.3}")).collect();
    (ok, format!("median SW {}; noise floor {floor:.3} (sd {floor_sd:.3})", shown.join(", ")))
}

pub fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = experiments::run_bias_sweep(&config(ExperimentKind::BiasSweep, 0, dir.path())).unwrap();
    let c = check(&m, "bias-slope");
    (c.passed && m.wall_time_s < 600.0, format!("{} ({:.1} s)", c.detail, m.wall_time_s))
}

pub fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let sched = Schedule::linear(100, 1e-3, 0.2, 1.0).unwrap();
    let prior: Prior = gmm_grid_prior(4, 1.0, &mut rng).unwrap();
    let y = [2.0, -3.0];
    let mut worst = 0.0f64;
    let mut evals = 0;
    for &delta in &[1e-6, 1e-3, 1.0, 1e3] {
        let mut gammas = Vec::with_capacity(25_000);
        let mut weights = Vec::with_capacity(25_000);
        for k in 0..25_000 {
            let x: Vec<f64> = (0..4).map(|_| 8.0 * f64::std_normal(&mut rng)).collect();
            let w = weight_bounded_variant(&sched, &prior, &x, k % 100, &y, delta).unwrap();
            gammas.push(w.log_gamma);
            weights.push(w.log_weight);
            evals += 1;
        }
        let max_gamma = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bound = (max_gamma.exp() + delta) / delta;
        for w in weights {
            worst = worst.max(w.exp() / bound);
        }
    }
    let bounded = worst <= 1.0 + 1e-12;

    let sched = Schedule::linear(100, 1e-4, 0.02, 1.0).unwrap();
    let gaussian = Prior::standard_normal(2);
    let cfg = GuidanceConfig { delta: 1e12, ..GuidanceConfig::with_particles(1000) };
    let (mut m1, mut m2) = (Vec::new(), Vec::new());
    for run in 0..100u64 {
        let out = mcgdiff_bounded(&sched, &gaussian, &[0.7], &cfg, StreamSeed(run)).unwrap();
        let col = out.samples.column(1);
        m1.push(col.iter().sum::<f64>() / col.len() as f64);
        m2.push(col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64);
    }
    let mut free = Vec::with_capacity(100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let (mut eps, mut mean) = ([0.0; 2], [0.0; 2]);
    for _ in 0..100_000 {
        let mut x = [f64::std_normal(&mut rng), f64::std_normal(&mut rng)];
        for t in (0..sched.n()).rev() {
            sched.backward_mean(&gaussian, &x, t + 1, &mut eps, &mut mean).unwrap();
            let sd = sched.step_variance(t + 1).sqrt();
            for j in 0..2 {
                x[j] = mean[j] + sd * f64::std_normal(&mut rng);
            }
        }
        free.push(x[1]);
    }
    let (a1, s1) = mean_se(&m1);
    let (a2, s2) = mean_se(&m2);
    let (b1, t1) = mean_se(&free);
    let (b2, t2) = mean_se(&free.iter().map(|v| v * v).collect::<Vec<_>>());
    let z1 = (a1 - b1).abs() / (s1 * s1 + t1 * t1).sqrt();
    let z2 = (a2 - b2).abs() / (s2 * s2 + t2 * t2).sqrt();
    let ok = bounded && z1 < 4.0 && z2 < 4.0;
    (
        ok,
        format!(
            "{evals} weights, max weight/bound {worst:.3}; delta=1e12 vs unguided chain: \
             E[x] {a1:.4} vs {b1:.4} ({z1:.1} SE), E[x^2] {a2:.4} vs {b2:.4} ({z2:.1} SE)"
        ),
    )
}

pub fn criterion_7() -> Outcome {
    let cases: [(f64, usize, f64); 3] = [(1.3, 2, 1.0), (-0.7, 400, 0.5), (2.5, 1000, 0.0)];
    let mut worst = 0.0f64;
    for (case, &(x0, t, eta)) in cases.iter().enumerate() {
        let sched = Schedule::linear(1000, 1e-4, 0.02, eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(700 + case as u64);
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
        let n = draws.len() as f64;
        let ab_prev = sched.alpha_bar(t - 1);
        let (mu0, var0) = (ab_prev.sqrt() * x0, 1.0 - ab_prev);
        let (m, _) = mean_se(&draws);
        let var = draws.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max((m - mu0).abs() / (var0 / n).sqrt());
        worst = worst.max((var - var0).abs() / (var0 * (2.0 / (n - 1.0)).sqrt()));
    }
    (worst < 4.0, format!("3 cases at 1e5 draws, largest deviation {worst:.2} SE (< 4)"))
}

pub fn criterion_8() -> Outcome {
    let sched = paper_schedule();
    let ab = sched.alpha_bars().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut tau_ok = 0;
    for _ in 0..100 {
        let sigma: f64 = rng.random_range(1e-3..2.0);
        let s: f64 = rng.random_range(1e-3..1.0);
        tau_ok += (match_tau(&sched, sigma, s) == exhaustive_tau(&ab, sigma, s)) as usize;
    }
    let mut grid_ok = 0;
    let mut grids = 0;
    for &r in &[20usize, 100] {
        for case in 0..20 {
            let dy = 1 + case % 4;
            let s: Vec<f64> = (0..dy).map(|_| rng.random_range(0.01..1.0)).collect();
            let sigma = if case == 0 { 0.0 } else { rng.random_range(0.0..s[0]) };
            let matched: Vec<usize> =
                if sigma > 0.0 { s.iter().map(|&v| exhaustive_tau(&ab, sigma, v)).collect() } else { Vec::new() };
            let got = select_timesteps(&sched, r, sigma, &s).unwrap();
            grid_ok += (got == reference_timesteps(&ab, r, &matched)) as usize;
            grids += 1;
        }
    }
    (tau_ok == 100 && grid_ok == grids, format!("match_tau {tau_ok}/100, select_timesteps {grid_ok}/{grids} (R in {{20, 100}})"))
}

pub fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let in_pool = |threads: usize, cfg: &RunConfig| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| experiments::run_gmm(cfg))
    };
    let first = RunConfig { particles: 256, workers: Some(1), ..config(ExperimentKind::Gmm, 7, &a) };
    let ma = in_pool(1, &first).unwrap();
    let mut replay = RunConfig::from_file(ExperimentKind::Gmm, &a.join(mcgdiff_cli::manifest::MANIFEST_FILE)).unwrap();
    replay.out_dir = Some(b.clone());
    replay.workers = Some(8);
    let mb = in_pool(8, &replay).unwrap();
    let mut same = 0;
    for name in ma.outputs.keys() {
        same += (std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap()) as usize;
    }
    let ok = same == ma.outputs.len() && ma.outputs == mb.outputs;
    (ok, format!("{same}/{} output files bitwise identical after replay with 1 and 8 workers", ma.outputs.len()))
}

pub fn criterion_10() -> Outcome {
    let sched = paper_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    for &d in &[2usize, 8] {
        let prior: Prior = gmm_grid_prior(d, 1.0, &mut rng).unwrap();
        for _ in 0..100 {
            let t = rng.random_range(1..=1000);
            let mut x = prior.diffused_marginal(&sched, t).sample(1, &mut rng).into_vec();
            x.iter_mut().for_each(|v| *v += 0.5 * f64::std_normal(&mut rng));
            let mut score = vec![0.0; d];
            prior.score(&sched, &x, t, &mut score);
            let h = 1e-5;
            let fd: Vec<f64> = (0..d)
                .map(|k| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[k] += h;
                    xm[k] -= h;
                    (prior.log_density(&sched, &xp, t) - prior.log_density(&sched, &xm, t)) / (2.0 * h)
                })
                .collect();
            let err = fd.iter().zip(&score).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = score.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(err / norm.max(1.0));
        }
    }
    (worst <= 1e-5, format!("200 points in d in {{2, 8}}, largest relative error {worst:.2e} (<= 1e-5)"))
}

