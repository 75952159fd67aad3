//! Linear inverse problems, their spectral form, and timestep selection.

use crate::error::{Error, Result};
use crate::prior::GaussianMixturePrior;
use crate::scalar::Real;
use crate::schedule::DiffusionSchedule;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Observation model `y = A x + σ_y ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInverseProblem<T: Real> {
    pub a: DMatrix<T>,
    pub sigma_y: T,
    pub y: DVector<T>,
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    sigma_y: f64,
    y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl<T: Real> LinearInverseProblem<T> {
    pub fn new(a: DMatrix<T>, sigma_y: T, y: DVector<T>) -> Result<Self> {
        let (dy, dx) = a.shape();
        if dy == 0 || dy > dx {
            return Err(Error::InvalidProblem(format!(
                "operator shape {dy}x{dx} needs 1 <= d_y <= d_x"
            )));
        }
        if y.len() != dy {
            return Err(Error::DimensionMismatch { expected: dy, got: y.len() });
        }
        if !(sigma_y >= T::zero()) || !sigma_y.is_finite_value() {
            return Err(Error::InvalidProblem(format!("sigma_y = {sigma_y} must be finite and >= 0")));
        }
        Ok(Self { a, sigma_y, y })
    }

    pub fn d_x(&self) -> usize {
        self.a.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.a.nrows()
    }

    /// Writes `{A, sigma_y, y, seed}` as JSON, with `A` as a list of rows.
    pub fn to_json<W: Write>(&self, writer: W, seed: Option<u64>) -> Result<()> {
        let j = ProblemJson {
            a: self.a.row_iter().map(|r| r.iter().map(|v| v.to_f64()).collect()).collect(),
            sigma_y: self.sigma_y.to_f64(),
            y: self.y.iter().map(|v| v.to_f64()).collect(),
            seed,
        };
        serde_json::to_writer_pretty(writer, &j)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<(Self, Option<u64>)> {
        let j: ProblemJson = serde_json::from_reader(reader)?;
        let rows = j.a.len();
        let cols = j.a.first().map_or(0, |r| r.len());
        if j.a.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("ragged operator rows".into()));
        }
        let a = DMatrix::from_fn(rows, cols, |r, c| T::of(j.a[r][c]));
        let y = DVector::from_iterator(j.y.len(), j.y.iter().map(|&v| T::of(v)));
        Ok((Self::new(a, T::of(j.sigma_y), y)?, j.seed))
    }
}

/// The problem expressed in the SVD basis `A = U·diag(s)·V̄ᵀ`.
///
/// With `z = Vᵀx`, the first `d_y` coordinates of `z` are observed as
/// `y_spec = z̄ + σ_y S⁻¹ ε̃`.
#[derive(Clone, Debug)]
pub struct SpectralProblem<T: Real> {
    pub u: DMatrix<T>,
    pub singular: Vec<T>,
    /// Full orthonormal `d_x × d_x` basis whose first `d_y` columns are V̄.
    pub v: DMatrix<T>,
    pub y_spec: Vec<T>,
    /// Per-coordinate noise scale `σ_y / s_i`.
    pub coord_noise: Vec<T>,
    pub sigma_y: T,
    /// Matched steps `τ_i`; `None` for noiseless problems.
    pub tau: Option<Vec<usize>>,
    /// `ỹ_i = √ᾱ_{τ_i}·y_spec_i`; `None` for noiseless problems.
    pub y_tilde: Option<Vec<T>>,
}

impl<T: Real> SpectralProblem<T> {
    pub fn d_x(&self) -> usize {
        self.v.nrows()
    }

    pub fn d_y(&self) -> usize {
        self.singular.len()
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_y == T::zero()
    }

    /// Maps a state from the original basis to the spectral one (`Vᵀx`).
    pub fn to_spectral(&self, x: &[T]) -> Vec<T> {
        let d = self.d_x();
        (0..d).map(|c| (0..d).map(|r| self.v[(r, c)] * x[r]).sum()).collect()
    }

    /// Maps a spectral state back (`V z`).
    pub fn from_spectral(&self, z: &[T]) -> Vec<T> {
        let d = self.d_x();
        (0..d).map(|r| (0..d).map(|c| self.v[(r, c)] * z[c]).sum()).collect()
    }

    /// Re-expresses `tau` on the coarse schedule `sched.subsample(steps)`.
    pub fn on_grid(&self, steps: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        if let Some(tau) = &self.tau {
            out.tau = Some(
                tau.iter()
                    .map(|&t| {
                        steps.iter().position(|&s| s == t).map(|k| k + 1).ok_or_else(|| {
                            Error::InvalidConfig(format!("matched step {t} missing from the step grid"))
                        })
                    })
                    .collect::<Result<_>>()?,
            );
        }
        Ok(out)
    }
}

/// Singular value decomposition with singular values sorted in decreasing order.
fn sorted_svd<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, Vec<T>, DMatrix<T>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vbar = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    (u_sorted, order.iter().map(|&i| s[i]).collect(), vbar)
}

/// Completes the orthonormal columns of `vbar` to a full basis by Gram–Schmidt
/// against the canonical basis vectors.
fn complete_basis<T: Real>(vbar: &DMatrix<T>) -> DMatrix<T> {
    let d = vbar.nrows();
    let mut cols: Vec<DVector<T>> = vbar.column_iter().map(|c| c.into_owned()).collect();
    let threshold = T::of(1e-3);
    for k in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = DVector::<T>::zeros(d);
        v[k] = T::one();
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let norm = v.norm();
        if norm > threshold {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// SVD change of basis, per-coordinate noise levels and matched steps.
pub fn decompose<T: Real>(
    prob: &LinearInverseProblem<T>,
    sched: &DiffusionSchedule<T>,
) -> Result<SpectralProblem<T>> {
    let (u, singular, vbar) = sorted_svd(&prob.a);
    let smax = singular[0];
    let smin = *singular.last().unwrap();
    let eps = T::of(if std::mem::size_of::<T>() < 8 { 1e-6 } else { 1e-12 });
    if !(smin > eps * smax.max(T::one())) {
        return Err(Error::RankDeficient(smin.to_f64()));
    }
    for (i, w) in singular.windows(2).enumerate() {
        if w[0] - w[1] <= T::of(1e-8) * w[0] {
            log::warn!("singular values {} and {} are nearly equal ({})", i, i + 1, w[0]);
        }
    }
    let v = complete_basis(&vbar);
    let uty = u.transpose() * &prob.y;
    let y_spec: Vec<T> = uty.iter().zip(&singular).map(|(&a, &s)| a / s).collect();
    let coord_noise = singular.iter().map(|&s| prob.sigma_y / s).collect();
    let (tau, y_tilde) = if prob.sigma_y > T::zero() {
        let tau: Vec<usize> = singular.iter().map(|&s| match_tau(sched, prob.sigma_y, s)).collect();
        let yt = tau
            .iter()
            .zip(&y_spec)
            .map(|(&t, &y)| sched.sqrt_alpha_bar(t) * y)
            .collect();
        (Some(tau), Some(yt))
    } else {
        (None, None)
    };
    Ok(SpectralProblem {
        u,
        singular,
        v,
        y_spec,
        coord_noise,
        sigma_y: prob.sigma_y,
        tau,
        y_tilde,
    })
}

/// The step `ℓ ∈ [1, n]` minimizing `|σ_y√ᾱ_ℓ − √(1−ᾱ_ℓ)·s|`; ties go to the smaller `ℓ`.
pub fn match_tau<T: Real>(sched: &DiffusionSchedule<T>, sigma_y: T, s: T) -> usize {
    let mut best = 1;
    let mut best_gap = T::max_value().unwrap();
    for l in 1..=sched.n() {
        let ab = sched.alpha_bar(l);
        let gap = (sigma_y * ab.sqrt() - (T::one() - ab).sqrt() * s).abs();
        if gap < best_gap {
            best_gap = gap;
            best = l;
        }
    }
    best
}

/// Coarse step grid `1 = t_1 < … < n` that contains every matched step and
/// spaces the remaining steps roughly evenly in `√ᾱ`.
///
/// `r ≥ n` returns the full grid.
pub fn select_timesteps<T: Real>(
    sched: &DiffusionSchedule<T>,
    r: usize,
    sigma_y: T,
    singular: &[T],
) -> Result<Vec<usize>> {
    let n = sched.n();
    let mut taus: Vec<usize> = if sigma_y > T::zero() {
        singular.iter().map(|&s| match_tau(sched, sigma_y, s)).collect()
    } else {
        Vec::new()
    };
    taus.sort_unstable();
    taus.dedup();
    if r < 2 || r < taus.len() + 2 {
        return Err(Error::InvalidConfig(format!(
            "{r} steps cannot hold {} matched steps plus both endpoints",
            taus.len()
        )));
    }
    if r >= n {
        return Ok((1..=n).collect());
    }
    let n_m = r - taus.len() - 1;
    let delta = (sched.sqrt_alpha_bar(1) - sched.sqrt_alpha_bar(n)) / T::of(n_m as f64);
    let mut steps = vec![1];
    let mut e = 1;
    for l in 2..=n {
        if sched.sqrt_alpha_bar(e) - sched.sqrt_alpha_bar(l) > delta || taus.binary_search(&l).is_ok() {
            steps.push(l);
            e = l;
        }
    }
    if *steps.last().unwrap() != n {
        steps.push(n);
    }
    Ok(steps)
}

/// Random measurement model: the singular vectors of a Gaussian matrix with
/// singular values replaced by sorted `U[0, 1]` draws, `σ_y ~ U[0, max s]`,
/// `x* ~ prior` and `y = A x* + σ_y ε`. Returns the problem and `x*`.
pub fn random_problem<T: Real, R: Rng + ?Sized>(
    prior: &GaussianMixturePrior<T>,
    d_y: usize,
    rng: &mut R,
) -> Result<(LinearInverseProblem<T>, Vec<T>)> {
    let d = prior.dim();
    if d_y == 0 || d_y >= d {
        return Err(Error::InvalidProblem(format!("need 1 <= d_y < d_x, got d_y = {d_y}, d_x = {d}")));
    }
    let raw = DMatrix::from_fn(d_y, d, |_, _| T::std_normal(rng));
    let (u, _, vbar) = sorted_svd(&raw);
    let mut s: Vec<T> = (0..d_y).map(|_| T::unit_uniform(rng)).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let a = &u * DMatrix::from_diagonal(&DVector::from_vec(s.clone())) * vbar.transpose();
    let sigma_y = T::unit_uniform(rng) * s[0];
    let x_star = prior.sample(1, rng).into_vec();
    let noise = DVector::from_fn(d_y, |_, _| T::std_normal(rng));
    let y = &a * DVector::from_column_slice(&x_star) + noise * sigma_y;
    Ok((LinearInverseProblem::new(a, sigma_y, y)?, x_star))
}
