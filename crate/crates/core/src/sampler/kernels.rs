//! Closed-form proposal kernels, weights and potentials.
//!
//! Indexing follows the backward process: the kernel that produces `x_t` from
//! `x_{t+1}` has mean `m_{t+1}(x_{t+1})` and variance
//! [`DiffusionSchedule::step_variance`]`(t + 1)`.

use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::problem::SpectralProblem;
use crate::scalar::{log_normal_1d, Real};
use crate::schedule::DiffusionSchedule;
use rand::Rng;

/// Blend factor `K_t = σ²_{t+1}/(σ²_{t+1} + 1 − ᾱ_t)`, with `K_n = 1/(2 − ᾱ_n)`.
pub fn k_coeff<T: Real>(sched: &DiffusionSchedule<T>, t: usize) -> T {
    let one = T::one();
    if t >= sched.n() {
        return one / (one + one - sched.alpha_bar(sched.n()));
    }
    let v = sched.step_variance(t + 1);
    let denom = v + (one - sched.alpha_bar(t));
    if denom > T::zero() {
        v / denom
    } else {
        one
    }
}

/// Draws the initial particle `x̄_n ~ N(K_n√ᾱ_n y, (1−ᾱ_n)K_n)`, `x̲_n ~ N(0, I)`.
pub(crate) fn init_noiseless<T: Real, R: Rng + ?Sized>(
    sched: &DiffusionSchedule<T>,
    y: &[T],
    rng: &mut R,
    out: &mut [T],
) {
    let n = sched.n();
    let k = k_coeff(sched, n);
    let ab = sched.alpha_bar(n);
    let sd = ((T::one() - ab) * k).sqrt();
    let c = k * ab.sqrt();
    for (j, o) in out.iter_mut().enumerate() {
        let z = T::std_normal(rng);
        *o = if j < y.len() { c * y[j] + sd * z } else { z };
    }
}

/// Log weight `ŵ_t(x_{t+1})` given the backward mean `mean = m_{t+1}(x_{t+1})`.
///
/// The numerator is `N(√ᾱ_t y; m̄, σ²_{t+1} + 1 − ᾱ_t)`, the integral of the
/// potential at `t` against the backward kernel, and the denominator is the
/// potential `N(x̄_{t+1}; √ᾱ_{t+1} y, 1 − ᾱ_{t+1})` at the current state.
pub(crate) fn log_weight_from_mean<T: Real>(
    sched: &DiffusionSchedule<T>,
    mean: &[T],
    x_next: &[T],
    t: usize,
    y: &[T],
) -> T {
    log_lookahead(sched, mean, t, y) - log_potential(sched, x_next, t + 1, y)
}

/// `log ∫ g_t(x_t) p_t(x_t|x_{t+1}) dx_t` for the noiseless potentials.
pub(crate) fn log_lookahead<T: Real>(sched: &DiffusionSchedule<T>, mean: &[T], t: usize, y: &[T]) -> T {
    let one = T::one();
    let c = sched.sqrt_alpha_bar(t);
    let var = sched.step_variance(t + 1) + (one - sched.alpha_bar(t));
    y.iter()
        .zip(mean)
        .map(|(&yj, &m)| log_normal_1d(c * yj, m, var))
        .sum()
}

/// `log g_t(x) = Σ_j log N(x̄_j; √ᾱ_t y_j, 1 − ᾱ_t)` for `t ≥ 1`.
pub(crate) fn log_potential<T: Real>(sched: &DiffusionSchedule<T>, x: &[T], t: usize, y: &[T]) -> T {
    let c = sched.sqrt_alpha_bar(t);
    let var = T::one() - sched.alpha_bar(t);
    y.iter()
        .zip(x)
        .map(|(&yj, &xj)| log_normal_1d(xj, c * yj, var))
        .sum()
}

/// Draws `x_t` from the guided proposal given `mean = m_{t+1}(x_{t+1})`.
///
/// Top block: `N(K_t√ᾱ_t y + (1−K_t)m̄, (1−ᾱ_t)K_t)`; bottom block:
/// `N(m̲, σ²_{t+1})`. At `t = 0` the top block is set to `y`.
pub(crate) fn propose_from_mean<T: Real, R: Rng + ?Sized>(
    sched: &DiffusionSchedule<T>,
    mean: &[T],
    t: usize,
    y: &[T],
    rng: &mut R,
    out: &mut [T],
) {
    let dy = y.len();
    let sd_bottom = sched.step_variance(t + 1).sqrt();
    if t == 0 {
        out[..dy].copy_from_slice(y);
    } else {
        let k = k_coeff(sched, t);
        let c = k * sched.sqrt_alpha_bar(t);
        let sd = ((T::one() - sched.alpha_bar(t)) * k).sqrt();
        for j in 0..dy {
            out[j] = c * y[j] + (T::one() - k) * mean[j] + sd * T::std_normal(rng);
        }
    }
    for j in dy..out.len() {
        out[j] = mean[j] + sd_bottom * T::std_normal(rng);
    }
}

/// Draws `x_t ~ N(m_{t+1}, σ²_{t+1} I)` from the unguided backward kernel.
pub(crate) fn propagate_from_mean<T: Real, R: Rng + ?Sized>(
    sched: &DiffusionSchedule<T>,
    mean: &[T],
    t: usize,
    rng: &mut R,
    out: &mut [T],
) {
    let sd = sched.step_variance(t + 1).sqrt();
    for (o, &m) in out.iter_mut().zip(mean) {
        *o = m + sd * T::std_normal(rng);
    }
}

fn backward_mean_of<T: Real, P: NoisePredictor<T> + ?Sized>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    x_next: &[T],
    t: usize,
) -> Result<Vec<T>> {
    if t >= sched.n() {
        return Err(Error::StepOutOfRange { step: t, lo: 0, hi: sched.n() - 1 });
    }
    let d = x_next.len();
    let mut eps = vec![T::zero(); d];
    let mut m = vec![T::zero(); d];
    sched.backward_mean(predictor, x_next, t + 1, &mut eps, &mut m)?;
    Ok(m)
}

/// One draw from the guided noiseless proposal producing `x_t` from `x_{t+1}`.
pub fn proposal_noiseless<T: Real, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    x_next: &[T],
    t: usize,
    y: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    check_split(x_next.len(), y.len())?;
    let m = backward_mean_of(sched, predictor, x_next, t)?;
    let mut out = vec![T::zero(); x_next.len()];
    propose_from_mean(sched, &m, t, y, rng, &mut out);
    Ok(out)
}

/// Log weight `ŵ_t(x_{t+1})` of the noiseless sampler, for `t ∈ [0, n−1]`.
pub fn weight_noiseless<T: Real, P: NoisePredictor<T> + ?Sized>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    x_next: &[T],
    t: usize,
    y: &[T],
) -> Result<T> {
    check_split(x_next.len(), y.len())?;
    let m = backward_mean_of(sched, predictor, x_next, t)?;
    Ok(log_weight_from_mean(sched, &m, x_next, t, y))
}

pub(crate) fn check_split(d: usize, dy: usize) -> Result<()> {
    if dy == 0 || dy >= d {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= d_y < d_x for guidance, got d_y = {dy}, d_x = {d}"
        )));
    }
    Ok(())
}

/// Per-coordinate Gaussian windows of the noisy sampler.
///
/// Coordinate `i` is active at step `t` when `τ_i ≤ t`; its window is
/// `N(√(ᾱ_t/ᾱ_{τ_i})·ỹ_i, 1 − (1−κ)ᾱ_t/ᾱ_{τ_i})`.
#[derive(Clone, Debug)]
pub(crate) struct NoisyGuide<T: Real> {
    pub tau: Vec<usize>,
    pub y_tilde: Vec<T>,
    pub kappa: T,
}

impl<T: Real> NoisyGuide<T> {
    pub fn from_spectral(spec: &SpectralProblem<T>, kappa: T) -> Result<Self> {
        let (Some(tau), Some(y_tilde)) = (&spec.tau, &spec.y_tilde) else {
            return Err(Error::InvalidProblem("noisy guidance needs matched steps".into()));
        };
        Ok(Self { tau: tau.clone(), y_tilde: y_tilde.clone(), kappa })
    }

    pub fn d_y(&self) -> usize {
        self.tau.len()
    }

    pub fn tau_min(&self) -> usize {
        *self.tau.iter().min().unwrap()
    }

    #[inline]
    pub fn active(&self, i: usize, t: usize) -> bool {
        self.tau[i] <= t
    }

    #[inline]
    pub fn window(&self, sched: &DiffusionSchedule<T>, i: usize, t: usize) -> (T, T) {
        let r = sched.alpha_bar(t) / sched.alpha_bar(self.tau[i]);
        let var = T::one() - (T::one() - self.kappa) * r;
        (r.sqrt() * self.y_tilde[i], var)
    }

    /// `log g_t(x)` summed over the coordinates active at `t`.
    pub fn log_potential(&self, sched: &DiffusionSchedule<T>, x: &[T], t: usize) -> T {
        (0..self.d_y())
            .filter(|&i| self.active(i, t))
            .map(|i| {
                let (m, v) = self.window(sched, i, t);
                log_normal_1d(x[i], m, v)
            })
            .sum()
    }

    /// `log ŵ_t(x_{t+1})`: coordinates active at `t` contribute the ratio of
    /// the integrated window to the current window.
    pub fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> T {
        let v_step = sched.step_variance(t + 1);
        let mut acc = T::zero();
        for i in 0..self.d_y() {
            if !self.active(i, t) {
                continue;
            }
            let (m, v) = self.window(sched, i, t);
            acc += log_normal_1d(m, mean[i], v_step + v);
            let (m1, v1) = self.window(sched, i, t + 1);
            acc -= log_normal_1d(x_next[i], m1, v1);
        }
        acc
    }

    /// Draws from the initial law `∝ N(0, I)·g_n`.
    pub fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]) {
        let n = sched.n();
        for (j, o) in out.iter_mut().enumerate() {
            let z = T::std_normal(rng);
            *o = if j < self.d_y() {
                let (m, v) = self.window(sched, j, n);
                let post_var = v / (T::one() + v);
                m / (T::one() + v) + post_var.sqrt() * z
            } else {
                z
            };
        }
    }

    /// Draws `x_t` from the guided proposal given `mean = m_{t+1}(x_{t+1})`.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        sched: &DiffusionSchedule<T>,
        mean: &[T],
        t: usize,
        rng: &mut R,
        out: &mut [T],
    ) {
        let v_step = sched.step_variance(t + 1);
        let sd_step = v_step.sqrt();
        for (j, o) in out.iter_mut().enumerate() {
            let z = T::std_normal(rng);
            *o = if j < self.d_y() && self.active(j, t) {
                let (m, v) = self.window(sched, j, t);
                let k = v_step / (v_step + v);
                k * m + (T::one() - k) * mean[j] + (k * v).sqrt() * z
            } else {
                mean[j] + sd_step * z
            };
        }
    }

    /// `Σ_{i: τ_i = t} log N(x_i; ỹ_i, κ)`, the pinning factors reached at `t`.
    pub fn log_anchor(&self, x: &[T], t: usize) -> T {
        (0..self.d_y())
            .filter(|&i| self.tau[i] == t)
            .map(|i| log_normal_1d(x[i], self.y_tilde[i], self.kappa))
            .sum()
    }
}

/// Log potential `Σ_{i: τ_i ≤ t} log N(x_i; √(ᾱ_t/ᾱ_{τ_i})ỹ_i, 1 − (1−κ)ᾱ_t/ᾱ_{τ_i})`
/// of a spectral-basis state `x`.
pub fn potential_noisy<T: Real>(
    sched: &DiffusionSchedule<T>,
    x: &[T],
    t: usize,
    spec: &SpectralProblem<T>,
    kappa: T,
) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(Error::InvalidConfig("kappa must be positive".into()));
    }
    if t > sched.n() {
        return Err(Error::StepOutOfRange { step: t, lo: 0, hi: sched.n() });
    }
    if x.len() != spec.d_x() {
        return Err(Error::DimensionMismatch { expected: spec.d_x(), got: x.len() });
    }
    Ok(NoisyGuide::from_spectral(spec, kappa)?.log_potential(sched, x, t))
}
