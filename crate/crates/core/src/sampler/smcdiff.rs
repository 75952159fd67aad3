use super::kernels::check_split;
use super::noiseless::{propagate_to_zero, run_guided, Guide};
use super::{GuidanceConfig, SmcOutput};
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::problem::SpectralProblem;
use crate::rng::{Purpose, StreamSeed};
use crate::samples::SampleSet;
use crate::scalar::{log_normal_1d, Real};
use crate::schedule::DiffusionSchedule;
use rand::Rng;
use rayon::prelude::*;

/// Particle filter over the unobserved block along one forward-diffused
/// trajectory of the observed block.
struct ObservedPath<T: Real> {
    dy: usize,
    /// Row `s` holds `x̄_s`, for `s ∈ [τ, n]`; rows below τ are unused.
    path: Vec<T>,
}

impl<T: Real> ObservedPath<T> {
    fn new(sched: &DiffusionSchedule<T>, start: &[T], tau: usize, seed: StreamSeed) -> Self {
        let dy = start.len();
        let n = sched.n();
        let mut path = vec![T::zero(); (n + 1) * dy];
        path[tau * dy..(tau + 1) * dy].copy_from_slice(start);
        for s in tau + 1..=n {
            let beta = sched.beta(s);
            let keep = (T::one() - beta).sqrt();
            let sd = beta.sqrt();
            let mut rng = seed.stream(Purpose::OBSERVED_PATH, s as u64, 0);
            for j in 0..dy {
                path[s * dy + j] = keep * path[(s - 1) * dy + j] + sd * T::std_normal(&mut rng);
            }
        }
        Self { dy, path }
    }

    fn at(&self, s: usize) -> &[T] {
        &self.path[s * self.dy..(s + 1) * self.dy]
    }
}

impl<T: Real> Guide<T> for ObservedPath<T> {
    fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]) {
        out[..self.dy].copy_from_slice(self.at(sched.n()));
        for o in &mut out[self.dy..] {
            *o = T::std_normal(rng);
        }
    }

    fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], _: &[T], t: usize) -> (T, T) {
        let var = sched.step_variance(t + 1);
        let lw = self
            .at(t)
            .iter()
            .zip(mean)
            .map(|(&x, &m)| log_normal_1d(x, m, var))
            .sum();
        (lw, T::zero())
    }

    fn propose<R: Rng + ?Sized>(
        &self,
        sched: &DiffusionSchedule<T>,
        mean: &[T],
        _: T,
        t: usize,
        rng: &mut R,
        out: &mut [T],
    ) {
        out[..self.dy].copy_from_slice(self.at(t));
        let sd = sched.step_variance(t + 1).sqrt();
        for j in self.dy..out.len() {
            out[j] = mean[j] + sd * T::std_normal(rng);
        }
    }
}

/// Baseline that conditions on one forward-diffused copy of the observation.
///
/// All observed coordinates must share one matched step τ (τ = 0 for a
/// noiseless problem). The observed block follows a forward trajectory
/// started from `ỹ` at τ; a particle filter tracks the unobserved block down to
/// τ and the particles are then propagated to 0 without guidance. Samples are
/// returned in the original basis; `predictor` acts on spectral coordinates.
pub fn smcdiff_extended<T, P>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    spec: &SpectralProblem<T>,
    cfg: &GuidanceConfig,
    seed: StreamSeed,
) -> Result<SmcOutput<T>>
where
    T: Real,
    P: NoisePredictor<T> + ?Sized,
{
    let d = predictor.dim();
    if d != spec.d_x() {
        return Err(Error::DimensionMismatch { expected: spec.d_x(), got: d });
    }
    check_split(d, spec.d_y())?;
    let (tau, start) = match (&spec.tau, &spec.y_tilde) {
        (Some(taus), Some(yt)) => {
            let t0 = taus[0];
            if taus.iter().any(|&t| t != t0) {
                return Err(Error::InvalidProblem(
                    "the observed coordinates must share one matched step".into(),
                ));
            }
            (t0, yt.clone())
        }
        _ => (0, spec.y_spec.clone()),
    };
    if tau > sched.n() {
        return Err(Error::StepOutOfRange { step: tau, lo: 0, hi: sched.n() });
    }
    if tau == 0 && !(sched.terminal_variance() > T::zero()) {
        return Err(Error::InvalidConfig("noiseless conditioning needs eta > 0".into()));
    }
    let guide = ObservedPath::new(sched, &start, tau, seed);
    let mut run = run_guided(sched, predictor, &guide, cfg, seed, tau, true)?;
    if tau > 0 {
        propagate_to_zero(sched, predictor, &mut run.cloud);
    }
    let mut data = vec![T::zero(); run.cloud.particles.len()];
    data.par_chunks_mut(d)
        .zip(run.cloud.particles.par_chunks(d))
        .for_each(|(o, z)| o.copy_from_slice(&spec.from_spectral(z)));
    let samples = SampleSet::new(d, data, format!("smcdiff seed={}", seed.0))?;
    Ok(SmcOutput { samples, diagnostics: run.diagnostics })
}
