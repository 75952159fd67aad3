use super::{Diagnostics, Resampling, ResamplingScheme};
use crate::error::{Error, Result};
use crate::metrics::ess;
use crate::rng::{Purpose, StreamSeed};
use crate::scalar::Real;
use rand::Rng;

/// `N` weighted particles at one diffusion step.
#[derive(Clone, Debug)]
pub struct ParticleCloud<T: Real> {
    pub step: usize,
    pub dim: usize,
    /// Row-major `N × dim`.
    pub particles: Vec<T>,
    pub log_weights: Vec<T>,
    /// Ancestor of each particle in the previous cloud.
    pub ancestors: Vec<usize>,
    pub seed: StreamSeed,
}

impl<T: Real> ParticleCloud<T> {
    pub fn new(step: usize, dim: usize, particles: Vec<T>, seed: StreamSeed) -> Self {
        assert_eq!(particles.len() % dim, 0);
        let n = particles.len() / dim;
        Self {
            step,
            dim,
            particles,
            log_weights: vec![T::zero(); n],
            ancestors: (0..n).collect(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    /// Adds `increments` to the log weights, then resamples according to
    /// `policy` (always when `force`). Returns the ancestor indices, which are
    /// the identity when no resampling happened.
    pub(crate) fn reweight(
        &mut self,
        increments: &[T],
        policy: Resampling,
        scheme: ResamplingScheme,
        force: bool,
        diag: &mut Diagnostics,
    ) -> Result<Vec<usize>> {
        for (i, (w, &inc)) in self.log_weights.iter_mut().zip(increments).enumerate() {
            if inc.to_f64().is_nan() {
                return Err(Error::NonFiniteWeight(i));
            }
            *w += inc;
        }
        let n = self.len();
        let e = ess(&self.log_weights);
        let resample = force
            || match policy {
                Resampling::Every => true,
                Resampling::Ess(r) => e < r * n as f64,
            };
        diag.steps.push((self.step, e, resample));
        let anc = if resample {
            let mut rng = self.seed.stream(Purpose::RESAMPLE, self.step as u64, 0);
            let a = match scheme {
                ResamplingScheme::Multinomial => resample_multinomial(&self.log_weights, n, &mut rng)?,
                ResamplingScheme::Systematic => resample_systematic(&self.log_weights, n, &mut rng)?,
            };
            self.log_weights.iter_mut().for_each(|w| *w = T::zero());
            a
        } else {
            (0..n).collect()
        };
        self.ancestors.clone_from(&anc);
        Ok(anc)
    }

    /// Reorders per-particle rows of `data` (stride `width`) by `anc`.
    pub(crate) fn gather<U: Copy>(data: &[U], width: usize, anc: &[usize]) -> Vec<U> {
        let mut out = Vec::with_capacity(anc.len() * width);
        for &a in anc {
            out.extend_from_slice(&data[a * width..(a + 1) * width]);
        }
        out
    }
}

/// Unnormalized cumulative weights `exp(w_i − max w)`.
fn weight_cdf<T: Real>(log_weights: &[T]) -> Result<Vec<f64>> {
    if let Some(i) = log_weights.iter().position(|w| w.to_f64().is_nan()) {
        return Err(Error::NonFiniteWeight(i));
    }
    let max = log_weights
        .iter()
        .map(|w| w.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(if max == f64::INFINITY {
            Error::NonFiniteWeight(log_weights.iter().position(|w| w.to_f64() == f64::INFINITY).unwrap())
        } else {
            Error::DegenerateCloud
        });
    }
    let mut acc = 0.0;
    Ok(log_weights
        .iter()
        .map(|w| {
            acc += (w.to_f64() - max).exp();
            acc
        })
        .collect())
}

/// `n` i.i.d. categorical draws with probabilities `softmax(log_weights)`.
pub fn resample_multinomial<T: Real, R: Rng + ?Sized>(
    log_weights: &[T],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let cdf = weight_cdf(log_weights)?;
    let total = *cdf.last().unwrap();
    let last = cdf.len() - 1;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect())
}

/// Systematic resampling: points `(k + U)/n` of the normalized weight CDF for
/// a single `U ~ U[0, 1)`. Every particle gets `⌊n p_i⌋` or `⌈n p_i⌉` copies.
pub fn resample_systematic<T: Real, R: Rng + ?Sized>(
    log_weights: &[T],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let cdf = weight_cdf(log_weights)?;
    let total = *cdf.last().unwrap();
    let last = cdf.len() - 1;
    let u0: f64 = rng.random::<f64>();
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let u = (k as f64 + u0) / n as f64 * total;
        while j < last && cdf[j] <= u {
            j += 1;
        }
        out.push(j);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lw = [0.0_f64, f64::NEG_INFINITY, 0.0];
        let a = resample_multinomial(&lw, 10_000, &mut rng).unwrap();
        assert!(a.iter().all(|&i| i != 1));
    }

    #[test]
    fn degenerate_and_nan_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lw = [f64::NEG_INFINITY; 3];
        assert!(matches!(resample_multinomial(&lw, 3, &mut rng), Err(Error::DegenerateCloud)));
        let lw = [0.0, f64::NAN];
        assert!(matches!(resample_multinomial(&lw, 3, &mut rng), Err(Error::NonFiniteWeight(1))));
    }

    #[test]
    fn binomial_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = [0.7_f64, 0.2, 0.1];
        let lw: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let n = 100_000;
        let a = resample_multinomial(&lw, n, &mut rng).unwrap();
        for (k, &pk) in p.iter().enumerate() {
            let c = a.iter().filter(|&&i| i == k).count() as f64;
            let sd = (n as f64 * pk * (1.0 - pk)).sqrt();
            assert!((c - n as f64 * pk).abs() < 4.0 * sd, "category {k}: {c}");
        }
    }

    #[test]
    fn uniform_weights_pass_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 10;
        let n = 100_000;
        let a = resample_multinomial(&vec![0.3_f64; k], n, &mut rng).unwrap();
        let expect = n as f64 / k as f64;
        let chi2: f64 = (0..k)
            .map(|j| {
                let c = a.iter().filter(|&&i| i == j).count() as f64;
                (c - expect).powi(2) / expect
            })
            .sum();
        // 99.9% quantile of χ²(9).
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }
}
