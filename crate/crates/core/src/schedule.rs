//! The diffusion time axis and its closed-form Gaussian kernels.

use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::scalar::Real;
use std::io::{Read, Write};

/// β, ᾱ and σ sequences of a variance-preserving diffusion.
///
/// Steps are indexed `0..=n`. `alpha_bar(0) = 1`; `beta(t)` and `sigma(t)` are
/// defined for `t ∈ [1, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule<T: Real> {
    beta: Vec<T>,
    alpha_bar: Vec<T>,
    sigma: Vec<T>,
    eta: T,
}

fn ddim_sigma<T: Real>(eta: T, ab_prev: T, ab: T) -> T {
    let one = T::one();
    let ratio = ((one - ab_prev) / (one - ab)).max(T::zero());
    eta * ratio.sqrt() * (one - ab / ab_prev).max(T::zero()).sqrt()
}

fn check_eta<T: Real>(eta: T) -> Result<()> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(Error::InvalidSchedule(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(())
}

impl<T: Real> DiffusionSchedule<T> {
    /// β linearly interpolated from `beta_start` at `t = 1` to `beta_end` at `t = n`.
    pub fn linear(n: usize, beta_start: T, beta_end: T, eta: T) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::InvalidSchedule(format!("{name} = {b} outside (0, 1)")));
            }
        }
        let beta = (0..n)
            .map(|k| {
                if n == 1 {
                    beta_start
                } else {
                    let f = T::of(k as f64 / (n - 1) as f64);
                    beta_start + (beta_end - beta_start) * f
                }
            })
            .collect();
        Self::from_beta(beta, eta)
    }

    /// Schedule with the given per-step β sequence (length `n`).
    pub fn from_beta(beta: Vec<T>, eta: T) -> Result<Self> {
        check_eta(eta)?;
        if beta.is_empty() {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > T::zero() && **b < T::one())) {
            return Err(Error::InvalidSchedule(format!("beta = {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(T::one());
        for &b in &beta {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (T::one() - b));
        }
        if alpha_bar.iter().any(|a| !(*a > T::zero())) {
            return Err(Error::InvalidSchedule("alpha_bar underflows to zero".into()));
        }
        let sigma = (1..alpha_bar.len())
            .map(|t| ddim_sigma(eta, alpha_bar[t - 1], alpha_bar[t]))
            .collect();
        Ok(Self { beta, alpha_bar, sigma, eta })
    }

    /// Schedule with the given cumulative products `alpha_bar[0..=n]`, `alpha_bar[0] = 1`.
    pub fn from_alpha_bar(alpha_bar: Vec<T>, eta: T) -> Result<Self> {
        check_eta(eta)?;
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidSchedule("need at least one step".into()));
        }
        if alpha_bar[0] != T::one() {
            return Err(Error::InvalidSchedule("alpha_bar[0] must equal 1".into()));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] < w[0] && w[1] > T::zero()) {
                return Err(Error::InvalidSchedule(
                    "alpha_bar must be strictly decreasing and positive".into(),
                ));
            }
        }
        let beta = alpha_bar.windows(2).map(|w| T::one() - w[1] / w[0]).collect();
        let sigma = alpha_bar
            .windows(2)
            .map(|w| ddim_sigma(eta, w[0], w[1]))
            .collect();
        Ok(Self { beta, alpha_bar, sigma, eta })
    }

    /// Coarser schedule visiting only `steps` (strictly increasing, within `[1, n]`).
    ///
    /// Step `k` of the result corresponds to step `steps[k - 1]` of `self`.
    pub fn subsample(&self, steps: &[usize]) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidSchedule("empty step list".into()));
        }
        let mut prev = 0;
        let mut ab = Vec::with_capacity(steps.len() + 1);
        ab.push(T::one());
        for &s in steps {
            if s <= prev || s > self.n() {
                return Err(Error::InvalidSchedule(format!(
                    "steps must be strictly increasing within [1, {}]",
                    self.n()
                )));
            }
            ab.push(self.alpha_bar[s]);
            prev = s;
        }
        Self::from_alpha_bar(ab, self.eta)
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// β_t for `t ∈ [1, n]`.
    pub fn beta(&self, t: usize) -> T {
        self.beta[t - 1]
    }

    /// ᾱ_t for `t ∈ [0, n]`.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t].sqrt()
    }

    /// DDIM noise scale σ_t for `t ∈ [1, n]`.
    pub fn sigma(&self, t: usize) -> T {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[T] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigma
    }

    /// Variance of the final kernel `p_0(·|x_1)`: `η²(1 − ᾱ_1)`.
    ///
    /// The DDIM formula gives σ_1 = 0, which would make the last kernel a point
    /// mass; `1 − ᾱ_1` is the exact conditional variance of `x_0` given `x_1`
    /// for a unit-variance component.
    pub fn terminal_variance(&self) -> T {
        self.eta * self.eta * (T::one() - self.alpha_bar[1])
    }

    /// Variance of the backward kernel `p_{t−1}(·|x_t)`.
    pub fn step_variance(&self, t: usize) -> T {
        if t == 1 {
            self.terminal_variance()
        } else {
            let s = self.sigma(t);
            s * s
        }
    }

    fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.n() {
            return Err(Error::StepOutOfRange { step: t, lo, hi: self.n() });
        }
        Ok(())
    }

    /// Mean scale and variance of `q_{t|s}`: `(√(ᾱ_t/ᾱ_s), 1 − ᾱ_t/ᾱ_s)`.
    pub fn forward_params(&self, s: usize, t: usize) -> Result<(T, T)> {
        self.check_step(t, 1)?;
        if s >= t {
            return Err(Error::InvalidSchedule(format!("forward_params needs s < t, got s={s}, t={t}")));
        }
        let r = self.alpha_bar[t] / self.alpha_bar[s];
        Ok((r.sqrt(), T::one() - r))
    }

    /// Coefficients `(a, b)` with `μ_t(x0, xt) = a·x0 + b·xt`.
    pub fn bridge_coefficients(&self, t: usize) -> (T, T) {
        let one = T::one();
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let s = self.sigma(t);
        let b = (one - ab_prev - s * s).max(T::zero()).sqrt() / (one - ab).sqrt();
        (ab_prev.sqrt() - b * ab.sqrt(), b)
    }

    /// Bridge mean `μ_t(x0, xt)`, written into `out`.
    pub fn bridge_mean(&self, x0: &[T], xt: &[T], t: usize, out: &mut [T]) -> Result<()> {
        self.check_step(t, 1)?;
        check_len(x0.len(), xt.len())?;
        check_len(x0.len(), out.len())?;
        let (a, b) = self.bridge_coefficients(t);
        for ((o, &u), &v) in out.iter_mut().zip(x0).zip(xt) {
            *o = a * u + b * v;
        }
        Ok(())
    }

    /// `x̂₀ = (xt − √(1−ᾱ_t)·eps)/√ᾱ_t`, written into `out`.
    pub fn predict_x0(&self, xt: &[T], t: usize, eps: &[T], out: &mut [T]) -> Result<()> {
        self.check_step(t, 1)?;
        check_len(xt.len(), eps.len())?;
        check_len(xt.len(), out.len())?;
        predict_x0_unchecked(self, xt, t, eps, out);
        Ok(())
    }

    /// Mean of the backward kernel `p_{t−1}(·|x_t)`: `μ_t(x̂₀(xt), xt)`, or
    /// `x̂₀(x1)` at `t = 1`. `eps` is scratch space of the state dimension.
    pub fn backward_mean<P: NoisePredictor<T> + ?Sized>(
        &self,
        predictor: &P,
        xt: &[T],
        t: usize,
        eps: &mut [T],
        out: &mut [T],
    ) -> Result<()> {
        self.check_step(t, 1)?;
        check_len(predictor.dim(), xt.len())?;
        check_len(xt.len(), eps.len())?;
        check_len(xt.len(), out.len())?;
        backward_mean_unchecked(self, predictor, xt, t, eps, out);
        Ok(())
    }

    /// Writes the schedule as CSV with header `t,beta,alpha_bar,sigma`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "beta", "alpha_bar", "sigma"])?;
        w.write_record(["0".to_string(), String::new(), fmt(T::one()), String::new()])?;
        for t in 1..=self.n() {
            w.write_record([
                t.to_string(),
                fmt(self.beta(t)),
                fmt(self.alpha_bar(t)),
                fmt(self.sigma(t)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a schedule written by [`write_csv`](Self::write_csv). η is recovered
    /// from the σ column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "beta", "alpha_bar", "sigma"] {
            return Err(Error::Parse(format!("unexpected schedule header {headers:?}")));
        }
        let mut beta = Vec::new();
        let mut alpha_bar = Vec::new();
        let mut sigma = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let t: usize = parse_field(&rec[0], "t")?;
            if t != row {
                return Err(Error::Parse(format!("row {row} has t = {t}")));
            }
            alpha_bar.push(T::of(parse_field::<f64>(&rec[2], "alpha_bar")?));
            if t > 0 {
                beta.push(T::of(parse_field::<f64>(&rec[1], "beta")?));
                sigma.push(T::of(parse_field::<f64>(&rec[3], "sigma")?));
            }
        }
        let sched = Self::from_beta(beta.clone(), T::zero())?;
        let tol = T::of(1e-9);
        for (t, (&a, &b)) in alpha_bar.iter().zip(&sched.alpha_bar).enumerate() {
            if (a - b).abs() > tol * b {
                return Err(Error::Parse(format!("alpha_bar at t = {t} disagrees with beta")));
            }
        }
        let eta = infer_eta(&alpha_bar, &sigma)?;
        check_eta(eta)?;
        Ok(Self { beta, alpha_bar, sigma, eta })
    }
}

fn infer_eta<T: Real>(alpha_bar: &[T], sigma: &[T]) -> Result<T> {
    let bases: Vec<T> = alpha_bar
        .windows(2)
        .map(|w| ddim_sigma(T::one(), w[0], w[1]))
        .collect();
    let Some(k) = (0..bases.len()).max_by(|&i, &j| bases[i].partial_cmp(&bases[j]).unwrap())
    else {
        return Ok(T::zero());
    };
    if bases[k] <= T::zero() {
        return Ok(T::zero());
    }
    let eta = sigma[k] / bases[k];
    let tol = T::of(1e-9);
    for (t, (&s, &b)) in sigma.iter().zip(&bases).enumerate() {
        if (s - eta * b).abs() > tol * (T::one() + b) {
            return Err(Error::Parse(format!(
                "sigma at t = {} is not consistent with a single eta",
                t + 1
            )));
        }
    }
    Ok(eta)
}

fn parse_field<U: std::str::FromStr>(s: &str, name: &str) -> Result<U> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} value {s:?}")))
}

fn fmt<T: Real>(x: T) -> String {
    format!("{}", x.to_f64())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[inline]
pub(crate) fn predict_x0_unchecked<T: Real>(
    sched: &DiffusionSchedule<T>,
    xt: &[T],
    t: usize,
    eps: &[T],
    out: &mut [T],
) {
    let ab = sched.alpha_bar(t);
    let inv = T::one() / ab.sqrt();
    let s = (T::one() - ab).sqrt();
    for ((o, &x), &e) in out.iter_mut().zip(xt).zip(eps) {
        *o = (x - s * e) * inv;
    }
}

#[inline]
pub(crate) fn backward_mean_unchecked<T: Real, P: NoisePredictor<T> + ?Sized>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    xt: &[T],
    t: usize,
    eps: &mut [T],
    out: &mut [T],
) {
    predictor.predict(sched, xt, t, eps);
    predict_x0_unchecked(sched, xt, t, eps, out);
    if t > 1 {
        let (a, b) = sched.bridge_coefficients(t);
        for (o, &x) in out.iter_mut().zip(xt) {
            *o = a * *o + b * x;
        }
    }
}
