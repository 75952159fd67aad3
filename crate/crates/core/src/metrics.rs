//! Sliced Wasserstein distance, effective sample size and bias sweeps.

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamSeed};
use crate::samples::SampleSet;
use crate::scalar::Real;
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Effective sample size `(Σw)²/Σw²` of log weights; 0 when every weight is zero.
pub fn ess<T: Real>(log_weights: &[T]) -> f64 {
    let max = log_weights.iter().map(|w| w.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s, s2) = log_weights.iter().fold((0.0, 0.0), |(s, s2), w| {
        let v = (w.to_f64() - max).exp();
        (s + v, s2 + v * v)
    });
    s * s / s2
}

/// Sum with pairwise splitting; deterministic for a given input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwEstimate {
    pub value: f64,
    /// Standard error over projections, by the delta method.
    pub se: f64,
    pub n_samples: usize,
    pub n_proj: usize,
}

/// Rows of `s` as `f64`, uniformly subsampled to `n` rows without replacement
/// when larger.
fn rows_f64<T: Real>(s: &SampleSet<T>, n: usize, seed: StreamSeed, tag: u64) -> Vec<f64> {
    let d = s.dim();
    let idx: Vec<usize> = if s.len() > n {
        let mut rng = seed.stream(Purpose::SUBSAMPLE, tag, 0);
        let mut v = sample_indices(&mut rng, s.len(), n).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..s.len()).collect()
    };
    let mut out = Vec::with_capacity(idx.len() * d);
    for i in idx {
        out.extend(s.row(i).iter().map(|v| v.to_f64()));
    }
    out
}

/// Unit direction `k`: a Gaussian draw normalized to length one.
pub fn projection_direction(seed: StreamSeed, k: usize, dim: usize) -> Vec<f64> {
    let mut rng = seed.stream(Purpose::PROJECTION, k as u64, 0);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| f64::std_normal(&mut rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Sliced Wasserstein distance of order `order` over `n_proj` random directions.
///
/// Sets of different size are subsampled to the smaller size. The result is
/// `(mean_θ W_p^p(θᵀX, θᵀY))^{1/p}`, each 1-D distance computed from sorted
/// projections.
pub fn sliced_wasserstein<T: Real>(
    x: &SampleSet<T>,
    y: &SampleSet<T>,
    n_proj: usize,
    order: u32,
    seed: StreamSeed,
) -> Result<SwEstimate> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: y.dim() });
    }
    if n_proj == 0 || order == 0 {
        return Err(Error::InvalidConfig("need n_proj >= 1 and order >= 1".into()));
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidConfig("sample sets must be non-empty".into()));
    }
    let d = x.dim();
    let n = x.len().min(y.len());
    let xa = rows_f64(x, n, seed, 0);
    let ya = rows_f64(y, n, seed, 0);
    let p = order as i32;
    let per_proj: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|k| {
            let theta = projection_direction(seed, k, d);
            let project = |a: &[f64]| -> Vec<f64> {
                let mut v: Vec<f64> = a
                    .chunks_exact(d)
                    .map(|r| r.iter().zip(&theta).map(|(u, w)| u * w).sum())
                    .collect();
                v.sort_unstable_by(f64::total_cmp);
                v
            };
            let px = project(&xa);
            let py = project(&ya);
            let terms: Vec<f64> = px.iter().zip(&py).map(|(a, b)| (a - b).abs().powi(p)).collect();
            pairwise_sum(&terms) / n as f64
        })
        .collect();
    let mean = pairwise_sum(&per_proj) / n_proj as f64;
    let value = mean.powf(1.0 / order as f64);
    let se_mean = if n_proj > 1 {
        let var = per_proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_proj - 1) as f64;
        (var / n_proj as f64).sqrt()
    } else {
        0.0
    };
    let se = if value > 0.0 {
        se_mean / (order as f64 * value.powi(p - 1))
    } else {
        0.0
    };
    Ok(SwEstimate { value, se, n_samples: n, n_proj })
}

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub n_samples: usize,
    pub n_proj: usize,
    pub seed: u64,
}

/// Writes rows as CSV `metric,value,se,n_samples,n_proj,seed`.
pub fn write_metrics<W: Write>(rows: &[MetricRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["metric", "value", "se", "n_samples", "n_proj", "seed"])?;
    }
    w.flush()?;
    Ok(())
}

/// Bias of one test function at one particle count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasRow {
    pub n_particles: usize,
    pub function: usize,
    pub estimate: f64,
    pub exact: f64,
    pub bias: f64,
    pub se: f64,
    pub replicates: usize,
}

/// Replicate experiment: for each particle count, averages the estimates
/// returned by `estimator(n, replicate)` and subtracts `exact`.
///
/// `estimator` returns one estimate per test function and must be
/// deterministic in its arguments; replicates run in parallel.
pub fn bias_sweep<F>(ns: &[usize], replicates: usize, exact: &[f64], estimator: F) -> Result<Vec<BiasRow>>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    if replicates < 2 {
        return Err(Error::InvalidConfig("bias sweep needs at least two replicates".into()));
    }
    let k = exact.len();
    let mut rows = Vec::new();
    for &n in ns {
        let ests: Vec<Vec<f64>> = (0..replicates)
            .into_par_iter()
            .map(|r| estimator(n, r))
            .collect::<Result<_>>()?;
        if let Some(bad) = ests.iter().find(|e| e.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, got: bad.len() });
        }
        for (f, &ex) in exact.iter().enumerate() {
            let vals: Vec<f64> = ests.iter().map(|e| e[f]).collect();
            let mean = pairwise_sum(&vals) / replicates as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (replicates - 1) as f64;
            rows.push(BiasRow {
                n_particles: n,
                function: f,
                estimate: mean,
                exact: ex,
                bias: mean - ex,
                se: (var / replicates as f64).sqrt(),
                replicates,
            });
        }
    }
    Ok(rows)
}

pub fn write_bias_table<W: Write>(rows: &[BiasRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln|value|` against `ln n`.
pub fn loglog_slope(ns: &[usize], values: &[f64]) -> Result<f64> {
    if ns.len() != values.len() || ns.len() < 2 {
        return Err(Error::InvalidConfig("slope needs at least two matching points".into()));
    }
    if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
        return Err(Error::InvalidConfig("slope needs finite non-zero values".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
