use super::kernels::{
    check_split, init_noiseless, log_lookahead, log_potential, propagate_from_mean,
    propose_from_mean,
};
use super::noiseless::{run_guided, Guide};
use super::{GuidanceConfig, SmcOutput};
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::rng::StreamSeed;
use crate::samples::SampleSet;
use crate::scalar::{log_add_exp, log_normal_1d, Real};
use crate::schedule::DiffusionSchedule;
use rand::Rng;

/// Weight and mixture probability of the bounded-weight kernel at one particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedWeight<T: Real> {
    /// `log[(γ_t + δ)/(g_{t+1}(x_{t+1}) + δ)]`.
    pub log_weight: T,
    /// `log γ_t`, the integrated potential.
    pub log_gamma: T,
    /// `γ_t/(γ_t + δ)`, the probability of drawing from the guided kernel.
    pub guided_probability: T,
}

struct Bounded<'a, T: Real> {
    y: &'a [T],
    log_delta: T,
    init_guided_probability: T,
}

impl<'a, T: Real> Bounded<'a, T> {
    fn new(sched: &DiffusionSchedule<T>, y: &'a [T], delta: T) -> Self {
        let n = sched.n();
        let var = T::one() + T::one() - sched.alpha_bar(n);
        let c = sched.sqrt_alpha_bar(n);
        let log_zg: T = y.iter().map(|&v| log_normal_1d(c * v, T::zero(), var)).sum();
        let log_delta = delta.ln();
        Self {
            y,
            log_delta,
            init_guided_probability: (log_zg - log_add_exp(log_zg, log_delta)).exp(),
        }
    }

    fn weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> BoundedWeight<T> {
        let log_gamma = log_lookahead(sched, mean, t, self.y);
        let log_g = log_potential(sched, x_next, t + 1, self.y);
        let denom = log_add_exp(log_g, self.log_delta);
        if t == 0 {
            return BoundedWeight {
                log_weight: log_gamma - denom,
                log_gamma,
                guided_probability: T::one(),
            };
        }
        let num = log_add_exp(log_gamma, self.log_delta);
        BoundedWeight {
            log_weight: num - denom,
            log_gamma,
            guided_probability: (log_gamma - num).exp(),
        }
    }
}

impl<T: Real> Guide<T> for Bounded<'_, T> {
    fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]) {
        if T::unit_uniform(rng) < self.init_guided_probability {
            init_noiseless(sched, self.y, rng, out);
        } else {
            out.iter_mut().for_each(|o| *o = T::std_normal(rng));
        }
    }

    fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> (T, T) {
        let w = self.weight(sched, mean, x_next, t);
        (w.log_weight, w.guided_probability)
    }

    fn propose<R: Rng + ?Sized>(
        &self,
        sched: &DiffusionSchedule<T>,
        mean: &[T],
        rho: T,
        t: usize,
        rng: &mut R,
        out: &mut [T],
    ) {
        if t == 0 || T::unit_uniform(rng) < rho {
            propose_from_mean(sched, mean, t, self.y, rng, out);
        } else {
            propagate_from_mean(sched, mean, t, rng, out);
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig("the bounded-weight variant needs delta > 0".into()));
    }
    Ok(())
}

/// Weight of the bounded-weight kernel producing `x_t` from `x_next`, for
/// `t ∈ [0, n−1]`. At `t = 0` the numerator is the observation density
/// `N(y; m̄_1, σ²_term)` without the `δ` offset.
pub fn weight_bounded_variant<T, P>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    x_next: &[T],
    t: usize,
    y: &[T],
    delta: T,
) -> Result<BoundedWeight<T>>
where
    T: Real,
    P: NoisePredictor<T> + ?Sized,
{
    check_delta(delta.to_f64())?;
    check_split(x_next.len(), y.len())?;
    if t >= sched.n() {
        return Err(Error::StepOutOfRange { step: t, lo: 0, hi: sched.n() - 1 });
    }
    let d = x_next.len();
    let mut eps = vec![T::zero(); d];
    let mut m = vec![T::zero(); d];
    sched.backward_mean(predictor, x_next, t + 1, &mut eps, &mut m)?;
    Ok(Bounded::new(sched, y, delta).weight(sched, &m, x_next, t))
}

/// Noiseless sampler whose proposals mix the guided kernel with the prior
/// backward kernel, which bounds every intermediate weight by `(sup γ + δ)/δ`.
pub fn mcgdiff_bounded<T, P>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    y: &[T],
    cfg: &GuidanceConfig,
    seed: StreamSeed,
) -> Result<SmcOutput<T>>
where
    T: Real,
    P: NoisePredictor<T> + ?Sized,
{
    check_delta(cfg.delta)?;
    let d = predictor.dim();
    check_split(d, y.len())?;
    if !(sched.terminal_variance() > T::zero()) {
        return Err(Error::InvalidConfig("noiseless guidance needs eta > 0".into()));
    }
    let guide = Bounded::new(sched, y, T::of(cfg.delta));
    let run = run_guided(sched, predictor, &guide, cfg, seed, 0, true)?;
    let samples = SampleSet::new(d, run.cloud.particles, format!("mcgdiff-bounded seed={}", seed.0))?;
    Ok(SmcOutput { samples, diagnostics: run.diagnostics })
}
