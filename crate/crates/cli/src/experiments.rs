//! Drivers behind the subcommands. Each writes its files and a manifest into
//! the configured output directory and returns the manifest.

use crate::config::RunConfig;
use crate::manifest::{Check, Manifest};
use anyhow::{bail, Context, Result};
use mcgdiff::metrics::{bias_sweep, loglog_slope, sliced_wasserstein, write_bias_table, write_metrics, MetricRow};
use mcgdiff::{
    decompose, gmm_grid_prior, match_tau, mcgdiff_noiseless, mcgdiff_spectral, random_problem, select_timesteps,
    DdimPlan, Prior, Problem, Purpose, Samples, Schedule, StreamSeed,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

const NOISY_TAG: u64 = 1 << 40;
const REFERENCE_TAG: u64 = 1 << 41;

fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn finish(mut m: Manifest, dir: &Path, files: &[&str], started: Instant) -> Result<Manifest> {
    for f in files {
        m.record_output(dir, f)?;
    }
    m.wall_time_s = started.elapsed().as_secs_f64();
    m.write(dir)?;
    Ok(m)
}

/// Concatenates the first `per_run` rows of `run(0), run(1), …` until
/// `target` rows are collected. Runs execute in parallel; the result does not
/// depend on the thread count.
pub fn pooled_runs<F>(target: usize, per_run: usize, run: F) -> Result<Samples>
where
    F: Fn(u64) -> Result<Samples> + Sync,
{
    let n_runs = target.div_ceil(per_run.max(1)) as u64;
    let parts: Vec<Samples> = (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let mut s = run(k)?;
            s.truncate(per_run);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let mut pool = parts.next().context("no runs requested")?;
    for p in parts {
        pool.extend(&p)?;
    }
    if pool.len() < target {
        bail!("runs produced {} of {target} rows", pool.len());
    }
    pool.truncate(target);
    Ok(pool)
}

fn metric(name: &str, est: mcgdiff::metrics::SwEstimate, seed: u64) -> MetricRow {
    MetricRow {
        metric: name.into(),
        value: est.value,
        se: est.se,
        n_samples: est.n_samples,
        n_proj: est.n_proj,
        seed,
    }
}

/// Grid prior, random measurement model, sampler output against exact
/// posterior samples.
pub fn run_gmm(cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let root = StreamSeed(cfg.seed());
    let prior: Prior = gmm_grid_prior(cfg.d_x, cfg.chi2_dof, &mut root.stream(Purpose::PRIOR, 0, 0))?;
    let (prob, _) = random_problem(&prior, cfg.d_y, &mut root.stream(Purpose::PROBLEM, 0, 0))?;
    let dense = cfg.schedule()?;
    let plan = DdimPlan::new(&dense, &prob, cfg.ddim_steps)?;
    let pred = prior.transformed(&plan.spectral.v.transpose())?;
    let guidance = cfg.guidance();
    let per_run = cfg.keep_per_run.unwrap_or(cfg.particles).min(cfg.particles);
    let samples = pooled_runs(cfg.samples, per_run, |k| {
        Ok(mcgdiff_spectral(&plan.schedule, &pred, &plan.spectral, &guidance, root.child(k))?.samples)
    })?;
    let post = prior.exact_posterior(&prob.a, prob.sigma_y, &prob.y)?;
    let exact = post.sample(cfg.samples, &mut root.stream(Purpose::SAMPLES, 0, 0));
    let exact2 = post.sample(cfg.samples, &mut root.stream(Purpose::SAMPLES, 1, 0));
    let proj = root.child(Purpose::PROJECTION);
    let sw = sliced_wasserstein(&samples, &exact, cfg.n_proj, cfg.sw_order, proj)?;
    let floor = sliced_wasserstein(&exact2, &exact, cfg.n_proj, cfg.sw_order, proj)?;

    prior.to_json(create(&dir, "prior.json")?)?;
    prob.to_json(create(&dir, "problem.json")?, Some(cfg.seed()))?;
    samples.write_csv(create(&dir, "samples.csv")?)?;
    exact.write_csv(create(&dir, "exact.csv")?)?;
    write_metrics(
        &[metric("sw", sw, cfg.seed()), metric("sw_noise_floor", floor, cfg.seed())],
        create(&dir, "metrics.csv")?,
    )?;

    let mut m = Manifest::new("run-gmm", cfg);
    m.tau = decompose(&prob, &dense)?.tau;
    m.steps = Some(plan.steps.clone());
    m.summary.insert("sigma_y".into(), prob.sigma_y);
    m.summary.insert("sw".into(), sw.value);
    m.summary.insert("sw_se".into(), sw.se);
    m.summary.insert("sw_noise_floor".into(), floor.value);
    if let Some(r) = cfg.max_sw_ratio {
        m.checks.push(Check {
            name: "sw".into(),
            passed: sw.value <= r * floor.value,
            detail: format!("sw {:.4} vs {r} x noise floor {:.4}", sw.value, floor.value),
        });
    }
    finish(m, &dir, &["prior.json", "problem.json", "samples.csv", "exact.csv", "metrics.csv"], started)
}

#[derive(Serialize)]
struct ErrorRow<'a> {
    check: &'a str,
    quantity: String,
    estimate: f64,
    exact: f64,
    error: f64,
    tolerance: f64,
}

fn sample_moments(s: &Samples) -> (Vec<f64>, Vec<f64>) {
    (s.mean(), s.covariance())
}

/// Gaussian prior `N(0, I_2)` with `y = 0.7`: a noiseless check observing
/// the first coordinate and a noisy one through `A = [1, 0.5]`.
pub fn run_conjugate_check(cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let root = StreamSeed(cfg.seed());
    let prior = Prior::standard_normal(2);
    let y = 0.7;
    let guidance = cfg.guidance();
    let mut rows = Vec::new();
    let mut m = Manifest::new("conjugate-check", cfg);

    let sched = cfg.schedule()?;
    let pool = pooled_runs(cfg.runs * cfg.particles, cfg.particles, |k| {
        Ok(mcgdiff_noiseless(&sched, &prior, &[y], &guidance, root.child(k))?.samples)
    })?;
    let (mean, cov) = sample_moments(&pool);
    let (me, ve) = (mean[1].abs(), (cov[3] - 1.0).abs());
    rows.push(ErrorRow { check: "noiseless", quantity: "mean[1]".into(), estimate: mean[1], exact: 0.0, error: me, tolerance: 0.05 });
    rows.push(ErrorRow { check: "noiseless", quantity: "var[1]".into(), estimate: cov[3], exact: 1.0, error: ve, tolerance: 0.1 });
    m.checks.push(Check {
        name: "noiseless".into(),
        passed: me < 0.05 && ve < 0.1,
        detail: format!("mean error {me:.4} (< 0.05), variance error {ve:.4} (< 0.1)"),
    });

    let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let prob = Problem::new(a.clone(), cfg.sigma_y, DVector::from_vec(vec![y]))?;
    let post = prior.exact_posterior(&a, cfg.sigma_y, &prob.y)?;
    let dense = Schedule::linear(cfg.noisy_n_steps, cfg.beta_start, cfg.beta_end, cfg.eta)?;
    let plan = DdimPlan::new(&dense, &prob, cfg.ddim_steps)?;
    let pred = prior.transformed(&plan.spectral.v.transpose())?;
    let noisy_cfg = mcgdiff::GuidanceConfig { n_particles: cfg.noisy_particles, ..guidance };
    let out = mcgdiff_spectral(&plan.schedule, &pred, &plan.spectral, &noisy_cfg, root.child(NOISY_TAG))?;
    let (mean, cov) = sample_moments(&out.samples);
    let (pm, pc) = (post.mean(0), post.covariance());
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..2 {
        let e = (mean[i] - pm[i]).abs();
        worst.0 = worst.0.max(e);
        rows.push(ErrorRow { check: "noisy", quantity: format!("mean[{i}]"), estimate: mean[i], exact: pm[i], error: e, tolerance: 0.05 });
    }
    for i in 0..2 {
        for j in 0..2 {
            let e = (cov[2 * i + j] - pc[(i, j)]).abs();
            worst.1 = worst.1.max(e);
            rows.push(ErrorRow {
                check: "noisy",
                quantity: format!("cov[{i}][{j}]"),
                estimate: cov[2 * i + j],
                exact: pc[(i, j)],
                error: e,
                tolerance: 0.1,
            });
        }
    }
    m.checks.push(Check {
        name: "noisy".into(),
        passed: worst.0 < 0.05 && worst.1 < 0.1,
        detail: format!("mean error {:.4} (< 0.05), covariance error {:.4} (< 0.1)", worst.0, worst.1),
    });
    m.tau = plan.spectral.tau.as_ref().map(|t| t.iter().map(|&c| plan.steps[c - 1]).collect());
    m.steps = Some(plan.steps.clone());
    m.summary.insert("noiseless_mean_error".into(), me);
    m.summary.insert("noiseless_variance_error".into(), ve);
    m.summary.insert("noisy_mean_error".into(), worst.0);
    m.summary.insert("noisy_covariance_error".into(), worst.1);
    write_rows(&dir, "conjugate.csv", &rows)?;
    finish(m, &dir, &["conjugate.csv"], started)
}

/// `E[tanh(Z)]` for `Z ~ N(mu, 1)` by the trapezoid rule on `mu ± 10`.
fn expected_tanh(mu: f64) -> f64 {
    let n = 20_001;
    let h = 20.0 / (n - 1) as f64;
    let sum: f64 = (0..n)
        .map(|i| {
            let z = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * (mu + z).tanh() * (-0.5 * z * z).exp()
        })
        .sum();
    sum * h / (2.0 * std::f64::consts::PI).sqrt()
}

/// Evenly spaced coarse grid `1 + k(n − 1)/(r − 1)`; the full grid when `r` is `None`.
fn even_grid(n: usize, r: Option<usize>) -> Vec<usize> {
    match r {
        Some(r) if r < n => {
            let mut v: Vec<usize> = (0..r).map(|k| 1 + k * (n - 1) / (r - 1)).collect();
            v.dedup();
            v
        }
        _ => (1..=n).collect(),
    }
}

/// Bias of the noiseless sampler's estimate of `E[tanh(x_2) | x_1 = y]` for a
/// two-component prior, against a large-`N` run of the same discretized
/// sampler.
pub fn run_bias_sweep(cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let root = StreamSeed(cfg.seed());
    let means = [[0.0, 1.5], [2.0, -1.5]];
    let prior = Prior::new(vec![0.5, 0.5], means.iter().map(|m| m.to_vec()).collect())?;
    let y = -0.5;
    let ll: Vec<f64> = means.iter().map(|m| -0.5 * (y - m[0]).powi(2)).collect();
    let w1 = 1.0 / (1.0 + (ll[1] - ll[0]).exp());
    let analytic = w1 * expected_tanh(means[0][1]) + (1.0 - w1) * expected_tanh(means[1][1]);

    let steps = even_grid(cfg.n_steps, cfg.ddim_steps);
    let sched = cfg.schedule()?.subsample(&steps)?;
    let guidance = cfg.guidance();
    let estimate = |n: usize, seed: StreamSeed| -> mcgdiff::Result<f64> {
        let cfg = mcgdiff::GuidanceConfig { n_particles: n, ..guidance.clone() };
        let out = mcgdiff_noiseless(&sched, &prior, &[y], &cfg, seed)?;
        Ok(out.samples.rows().map(|x| x[1].tanh()).sum::<f64>() / n as f64)
    };
    let reference_seed = root.child(REFERENCE_TAG);
    let refs: Vec<f64> = (0..cfg.reference_runs as u64)
        .map(|k| estimate(cfg.reference_particles, reference_seed.child(k)))
        .collect::<mcgdiff::Result<_>>()?;
    let rn = refs.len() as f64;
    let reference = refs.iter().sum::<f64>() / rn;
    let reference_se = (refs.iter().map(|v| (v - reference).powi(2)).sum::<f64>() / (rn - 1.0) / rn).sqrt();

    let rows = bias_sweep(&cfg.particle_grid, cfg.replicates, &[reference], |n, rep| {
        Ok(vec![estimate(n, root.child(n as u64).child(rep as u64))?])
    })?;
    write_bias_table(&rows, create(&dir, "bias.csv")?)?;
    let biases: Vec<f64> = rows.iter().map(|r| r.bias).collect();
    let slope = loglog_slope(&cfg.particle_grid, &biases);
    let (lo, hi) = cfg.slope_range;

    let mut m = Manifest::new("bias-sweep", cfg);
    m.steps = Some(steps);
    m.summary.insert("reference".into(), reference);
    m.summary.insert("reference_se".into(), reference_se);
    m.summary.insert("analytic".into(), analytic);
    let detail = |s: &str| {
        let b: Vec<String> = rows.iter().map(|r| format!("N={} {:.4}±{:.4}", r.n_particles, r.bias, r.se)).collect();
        format!("{s}; bias {}", b.join(", "))
    };
    m.checks.push(match slope {
        Ok(s) => {
            m.summary.insert("slope".into(), s);
            Check { name: "bias-slope".into(), passed: (lo..=hi).contains(&s), detail: detail(&format!("slope {s:.3} in [{lo}, {hi}]")) }
        }
        Err(e) => Check { name: "bias-slope".into(), passed: false, detail: detail(&e.to_string()) },
    });
    finish(m, &dir, &["bias.csv"], started)
}

/// Straight transcription of the timestep-selection loop, kept separate from
/// the library version so the two can be compared.
pub fn reference_timesteps(alpha_bar: &[f64], r: usize, matched: &[usize]) -> Vec<usize> {
    let n = alpha_bar.len() - 1;
    let mut set: Vec<usize> = Vec::new();
    for &t in matched {
        if !set.contains(&t) {
            set.push(t);
        }
    }
    if r >= n {
        return (1..=n).collect();
    }
    let delta = (alpha_bar[1].sqrt() - alpha_bar[n].sqrt()) / (r - set.len() - 1) as f64;
    let mut out = vec![1];
    let mut e = 1;
    for l in 2..=n {
        if alpha_bar[e].sqrt() - alpha_bar[l].sqrt() > delta || set.contains(&l) {
            e = l;
            out.push(l);
        }
    }
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

/// Exhaustive minimizer of `|σ_y √ᾱ_t − s √(1 − ᾱ_t)|` over `t ≥ 1`.
pub fn exhaustive_tau(alpha_bar: &[f64], sigma_y: f64, s: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (t, &a) in alpha_bar.iter().enumerate().skip(1) {
        let g = (sigma_y * a.sqrt() - s * (1.0 - a).sqrt()).abs();
        if g < best.0 {
            best = (g, t);
        }
    }
    best.1
}

#[derive(Serialize)]
struct StepRow {
    index: usize,
    step: usize,
    alpha_bar: f64,
    matched: bool,
}

pub fn run_timesteps(cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let Some(r) = cfg.ddim_steps else { bail!("ddim_steps: required by timesteps") };
    let sched = cfg.schedule()?;
    let tau: Vec<usize> = if cfg.sigma_y > 0.0 {
        cfg.singular.iter().map(|&s| match_tau(&sched, cfg.sigma_y, s)).collect()
    } else {
        Vec::new()
    };
    let steps = select_timesteps(&sched, r, cfg.sigma_y, &cfg.singular)?;
    let ab = sched.alpha_bars();
    let scanned: Vec<usize> = if cfg.sigma_y > 0.0 {
        cfg.singular.iter().map(|&s| exhaustive_tau(ab, cfg.sigma_y, s)).collect()
    } else {
        Vec::new()
    };
    let want = reference_timesteps(ab, r, &scanned);
    let rows: Vec<StepRow> = steps
        .iter()
        .enumerate()
        .map(|(i, &t)| StepRow { index: i, step: t, alpha_bar: ab[t], matched: tau.contains(&t) })
        .collect();
    write_rows(&dir, "timesteps.csv", &rows)?;
    sched.write_csv(create(&dir, "schedule.csv")?)?;

    let mut m = Manifest::new("timesteps", cfg);
    m.checks.push(Check {
        name: "tau".into(),
        passed: tau == scanned,
        detail: format!("matched {tau:?}, exhaustive scan {scanned:?}"),
    });
    m.checks.push(Check {
        name: "timesteps".into(),
        passed: steps == want,
        detail: format!("{} steps, reference {} steps, equal {}", steps.len(), want.len(), steps == want),
    });
    m.summary.insert("n_selected".into(), steps.len() as f64);
    m.tau = Some(tau);
    m.steps = Some(steps);
    finish(m, &dir, &["timesteps.csv", "schedule.csv"], started)
}

pub fn run_sw_compare(cfg: &RunConfig, a: &Path, b: &Path) -> Result<Manifest> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let read = |p: &Path| -> Result<Samples> {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        Ok(Samples::read_csv(std::io::BufReader::new(f), p.display().to_string())?)
    };
    let (sa, sb) = (read(a)?, read(b)?);
    let sw = sliced_wasserstein(&sa, &sb, cfg.n_proj, cfg.sw_order, StreamSeed(cfg.seed()).child(Purpose::PROJECTION))?;
    write_metrics(&[metric("sw", sw, cfg.seed())], create(&dir, "sw.csv")?)?;
    let mut m = Manifest::new("sw", cfg);
    m.summary.insert("sw".into(), sw.value);
    m.summary.insert("sw_se".into(), sw.se);
    m.checks.push(Check {
        name: "sw".into(),
        passed: sw.value.is_finite(),
        detail: format!("{} vs {}: {:.6} ± {:.6}", a.display(), b.display(), sw.value, sw.se),
    });
    finish(m, &dir, &["sw.csv"], started)
}
