//! Gaussian-mixture priors with identity component covariance.

use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::samples::SampleSet;
use crate::scalar::{ln_two_pi, log_sum_exp, softmax_in_place, Real};
use crate::schedule::DiffusionSchedule;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Mixture `Σ_i w_i N(μ_i, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixturePrior<T: Real> {
    dim: usize,
    weights: Vec<T>,
    log_weights: Vec<T>,
    means: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct MixtureJson {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
}

fn validate_weights<T: Real>(weights: &[T], allow_zero: bool) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidPrior("mixture needs at least one component".into()));
    }
    let bad = |w: &T| !w.is_finite_value() || *w < T::zero() || (!allow_zero && *w == T::zero());
    if weights.iter().any(bad) {
        return Err(Error::InvalidPrior("weights must be positive and finite".into()));
    }
    let total: f64 = weights.iter().map(|w| w.to_f64()).sum();
    let tol = if std::mem::size_of::<T>() < 8 { 1e-5 } else { 1e-12 };
    if (total - 1.0).abs() > tol * weights.len() as f64 {
        return Err(Error::InvalidPrior(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

fn flatten_means<T: Real>(dim: usize, means: &[Vec<T>]) -> Result<Vec<T>> {
    let mut flat = Vec::with_capacity(dim * means.len());
    for m in means {
        if m.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
        }
        if m.iter().any(|x| !x.is_finite_value()) {
            return Err(Error::InvalidPrior("means must be finite".into()));
        }
        flat.extend_from_slice(m);
    }
    Ok(flat)
}

impl<T: Real> GaussianMixturePrior<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>) -> Result<Self> {
        validate_weights(&weights, false)?;
        if means.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} weights but {} means",
                weights.len(),
                means.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidPrior("dimension must be positive".into()));
        }
        let means = flatten_means(dim, &means)?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { dim, weights, log_weights, means })
    }

    /// Standard normal `N(0, I_d)` as a one-component mixture.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![T::one()], vec![vec![T::zero(); dim]]).expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &[T] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn means(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.means.chunks_exact(self.dim)
    }

    /// Marginal of `x_t` under the forward process: means scaled by `√ᾱ_t`,
    /// identity covariance.
    pub fn diffused_marginal(&self, sched: &DiffusionSchedule<T>, t: usize) -> Self {
        let c = sched.sqrt_alpha_bar(t);
        Self {
            dim: self.dim,
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            means: self.means.iter().map(|&m| m * c).collect(),
        }
    }

    /// The same mixture with every mean mapped through `rot` (`μ ↦ rot·μ`).
    pub fn transformed(&self, rot: &DMatrix<T>) -> Result<Self> {
        if rot.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: rot.ncols() });
        }
        let out_dim = rot.nrows();
        let mut means = Vec::with_capacity(out_dim * self.n_components());
        for m in self.means() {
            let v = rot * DVector::from_column_slice(m);
            means.extend(v.iter().copied());
        }
        Ok(Self {
            dim: out_dim,
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            means,
        })
    }

    /// Unnormalized component logits `log w_i − ½‖x − c·μ_i‖²`.
    fn logits(&self, x: &[T], c: T, out: &mut [T]) {
        let half = T::of(0.5);
        for (i, (o, m)) in out.iter_mut().zip(self.means()).enumerate() {
            let sq: T = x
                .iter()
                .zip(m)
                .map(|(&a, &b)| {
                    let r = a - c * b;
                    r * r
                })
                .sum();
            *o = self.log_weights[i] - half * sq;
        }
    }

    /// `log p_t(x)` of the diffused marginal.
    pub fn log_density(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize) -> T {
        let mut l = vec![T::zero(); self.n_components()];
        self.logits(x, sched.sqrt_alpha_bar(t), &mut l);
        log_sum_exp(&l) - T::of(0.5 * self.dim as f64) * ln_two_pi::<T>()
    }

    /// Posterior component probabilities given `x_t = x`.
    pub fn responsibilities(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize) -> Vec<T> {
        let mut l = vec![T::zero(); self.n_components()];
        self.logits(x, sched.sqrt_alpha_bar(t), &mut l);
        softmax_in_place(&mut l);
        l
    }

    /// `∇ log p_t(x) = Σ_i r_i(x)(√ᾱ_t μ_i − x)`.
    pub fn score(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize, out: &mut [T]) {
        let c = sched.sqrt_alpha_bar(t);
        let m = self.n_components();
        let mut stack = [T::zero(); 64];
        let mut heap;
        let r: &mut [T] = if m <= stack.len() {
            &mut stack[..m]
        } else {
            heap = vec![T::zero(); m];
            &mut heap
        };
        self.logits(x, c, r);
        softmax_in_place(r);
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, &ri) in r.iter().enumerate() {
                acc += ri * self.means[i * self.dim + k];
            }
            *o = c * acc - x[k];
        }
    }

    /// Optimal noise predictor `ε*(x, t) = −√(1−ᾱ_t)·∇ log p_t(x)`.
    pub fn eps_star(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize, out: &mut [T]) {
        self.score(sched, x, t, out);
        let s = -(T::one() - sched.alpha_bar(t)).sqrt();
        out.iter_mut().for_each(|o| *o *= s);
    }

    /// Exact posterior of `x` given `y = A x + σ_y ε`.
    ///
    /// Computed in the Woodbury form `Σ = I − Aᵀ C⁻¹ A`, `C = σ_y² I + A Aᵀ`,
    /// which stays valid for `σ_y = 0` (then Σ is only positive semidefinite).
    pub fn exact_posterior(
        &self,
        a: &DMatrix<T>,
        sigma_y: T,
        y: &DVector<T>,
    ) -> Result<GaussianMixturePosterior<T>> {
        let (dy, d) = a.shape();
        if d != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: d });
        }
        if y.len() != dy {
            return Err(Error::DimensionMismatch { expected: dy, got: y.len() });
        }
        if !(sigma_y >= T::zero()) {
            return Err(Error::InvalidProblem("sigma_y must be non-negative".into()));
        }
        let c = DMatrix::<T>::identity(dy, dy) * (sigma_y * sigma_y) + a * a.transpose();
        let chol = c.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det_c = chol.l().diagonal().iter().map(|v| v.ln()).sum::<T>() * T::of(2.0);
        let gain = a.transpose() * chol.inverse();
        let mut cov = DMatrix::<T>::identity(d, d) - &gain * a;
        cov = (&cov + cov.transpose()) * T::of(0.5);

        let mut log_w = Vec::with_capacity(self.n_components());
        let mut means = Vec::with_capacity(self.n_components());
        for (i, mu) in self.means().enumerate() {
            let mu = DVector::from_column_slice(mu);
            let r = y - a * &mu;
            let sol = chol.solve(&r);
            let quad = r.dot(&sol);
            log_w.push(
                self.log_weights[i]
                    - T::of(0.5) * (quad + log_det_c + T::of(dy as f64) * ln_two_pi::<T>()),
            );
            let m = mu + &gain * r;
            means.push(m.iter().copied().collect::<Vec<T>>());
        }
        softmax_in_place(&mut log_w);
        let require_pd = sigma_y > T::zero();
        GaussianMixturePosterior::build(log_w, means, cov, require_pd)
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleSet<T> {
        let cdf = cumulative(&self.weights);
        let mut data = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let i = pick(&cdf, T::unit_uniform(rng));
            for &m in self.mean(i) {
                data.push(m + T::std_normal(rng));
            }
        }
        SampleSet::new(self.dim, data, "prior").expect("finite draws")
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let eye = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let j = MixtureJson {
            weights: self.weights.iter().map(|w| w.to_f64()).collect(),
            means: self.means().map(|m| m.iter().map(|v| v.to_f64()).collect()).collect(),
            covariance: eye,
        };
        serde_json::to_writer_pretty(writer, &j)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let j: MixtureJson = serde_json::from_reader(reader)?;
        let dim = j.means.first().map_or(0, |m| m.len());
        let is_identity = j.covariance.len() == dim
            && j.covariance.iter().enumerate().all(|(i, row)| {
                row.len() == dim
                    && row.iter().enumerate().all(|(k, &v)| v == if i == k { 1.0 } else { 0.0 })
            });
        if !is_identity {
            return Err(Error::InvalidPrior("prior component covariance must be the identity".into()));
        }
        Self::new(
            j.weights.into_iter().map(T::of).collect(),
            j.means.into_iter().map(|m| m.into_iter().map(T::of).collect()).collect(),
        )
    }
}

impl<T: Real> NoisePredictor<T> for GaussianMixturePrior<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize, out: &mut [T]) {
        self.eps_star(sched, x, t, out);
    }
}

/// The 25-component grid prior: component `(i, j)`, `i, j ∈ {−2, …, 2}`, has
/// mean `(8i, 8j, 8i, 8j, …)` and weight proportional to a χ² draw.
pub fn gmm_grid_prior<T: Real, R: Rng + ?Sized>(
    dim: usize,
    chi2_dof: f64,
    rng: &mut R,
) -> Result<GaussianMixturePrior<T>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidPrior(format!(
            "grid prior needs an even dimension >= 2, got {dim}"
        )));
    }
    let chi2 = ChiSquared::new(chi2_dof)
        .map_err(|e| Error::InvalidPrior(format!("chi-squared dof {chi2_dof}: {e}")))?;
    let mut means = Vec::with_capacity(25);
    let mut raw = Vec::with_capacity(25);
    for i in -2i32..=2 {
        for j in -2i32..=2 {
            let m = (0..dim)
                .map(|k| T::of(8.0 * if k % 2 == 0 { i } else { j } as f64))
                .collect();
            means.push(m);
            let mut w: f64 = chi2.sample(rng);
            while w <= 0.0 {
                w = chi2.sample(rng);
            }
            raw.push(w);
        }
    }
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| T::of(w / total)).collect();
    GaussianMixturePrior::new(weights, means)
}

/// Posterior mixture `Σ_i w̃_i N(c_i, Σ)` with one shared covariance.
#[derive(Clone, Debug)]
pub struct GaussianMixturePosterior<T: Real> {
    dim: usize,
    weights: Vec<T>,
    means: Vec<T>,
    covariance: DMatrix<T>,
    factor: DMatrix<T>,
    precision: Option<(DMatrix<T>, T)>,
}

impl<T: Real> GaussianMixturePosterior<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, covariance: DMatrix<T>) -> Result<Self> {
        Self::build(weights, means, covariance, true)
    }

    fn build(
        weights: Vec<T>,
        means: Vec<Vec<T>>,
        covariance: DMatrix<T>,
        require_pd: bool,
    ) -> Result<Self> {
        validate_weights(&weights, true)?;
        if means.len() != weights.len() {
            return Err(Error::InvalidPrior("weights and means differ in length".into()));
        }
        let dim = means[0].len();
        if covariance.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: covariance.nrows() });
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        let scale = covariance.abs().max().max(T::one());
        if asym > T::of(1e-9) * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let eig = covariance.clone().symmetric_eigen();
        let floor = T::of(1e-12) * scale;
        let min_eig = eig.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
        if min_eig < -floor * T::of(1e3) || (require_pd && min_eig <= T::zero()) {
            return Err(Error::NotPositiveDefinite);
        }
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(T::zero()).sqrt()));
        let factor = &eig.eigenvectors * sqrt_diag;
        let precision = (min_eig > floor).then(|| {
            let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| T::one() / v));
            let log_det = eig.eigenvalues.iter().map(|v| v.ln()).sum::<T>();
            (&eig.eigenvectors * inv * eig.eigenvectors.transpose(), log_det)
        });
        let means = flatten_means(dim, &means)?;
        Ok(Self { dim, weights, means, covariance, factor, precision })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &[T] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn means(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.means.chunks_exact(self.dim)
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    /// Overall mean `Σ_i w̃_i c_i`.
    pub fn overall_mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for (w, c) in self.weights.iter().zip(self.means()) {
            for (a, &b) in m.iter_mut().zip(c) {
                *a += *w * b;
            }
        }
        m
    }

    /// Log density; `None` when Σ is singular.
    pub fn log_density(&self, x: &[T]) -> Option<T> {
        let (prec, log_det) = self.precision.as_ref()?;
        let half = T::of(0.5);
        let norm = -half * (*log_det + T::of(self.dim as f64) * ln_two_pi::<T>());
        let xs = DVector::from_column_slice(x);
        let terms: Vec<T> = self
            .weights
            .iter()
            .zip(self.means())
            .map(|(w, c)| {
                let r = &xs - DVector::from_column_slice(c);
                w.ln() + norm - half * r.dot(&(prec * &r))
            })
            .collect();
        Some(log_sum_exp(&terms))
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleSet<T> {
        let cdf = cumulative(&self.weights);
        let mut data = Vec::with_capacity(count * self.dim);
        let mut z = DVector::<T>::zeros(self.dim);
        for _ in 0..count {
            let i = pick(&cdf, T::unit_uniform(rng));
            z.iter_mut().for_each(|v| *v = T::std_normal(rng));
            let dx = &self.factor * &z;
            for (&m, &e) in self.mean(i).iter().zip(dx.iter()) {
                data.push(m + e);
            }
        }
        SampleSet::new(self.dim, data, "posterior").expect("finite draws")
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let j = MixtureJson {
            weights: self.weights.iter().map(|w| w.to_f64()).collect(),
            means: self.means().map(|m| m.iter().map(|v| v.to_f64()).collect()).collect(),
            covariance: self
                .covariance
                .row_iter()
                .map(|r| r.iter().map(|v| v.to_f64()).collect())
                .collect(),
        };
        serde_json::to_writer_pretty(writer, &j)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let j: MixtureJson = serde_json::from_reader(reader)?;
        let dim = j.covariance.len();
        if j.covariance.iter().any(|r| r.len() != dim) {
            return Err(Error::Parse("covariance must be square".into()));
        }
        let cov = DMatrix::from_fn(dim, dim, |r, c| T::of(j.covariance[r][c]));
        Self::build(
            j.weights.into_iter().map(T::of).collect(),
            j.means.into_iter().map(|m| m.into_iter().map(T::of).collect()).collect(),
            cov,
            false,
        )
    }
}

fn cumulative<T: Real>(w: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    w.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn pick<T: Real>(cdf: &[T], u: T) -> usize {
    let u = u * *cdf.last().unwrap();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}
