use super::cloud::ParticleCloud;
use super::kernels::{check_split, init_noiseless, log_weight_from_mean, propose_from_mean};
use super::{Diagnostics, GuidanceConfig, SmcOutput};
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::rng::{Purpose, StreamSeed};
use crate::samples::SampleSet;
use crate::scalar::Real;
use crate::schedule::{backward_mean_unchecked, DiffusionSchedule};
use rand::Rng;
use rayon::prelude::*;

/// Per-sampler pieces plugged into the shared guided particle loop.
pub(crate) trait Guide<T: Real>: Sync {
    fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]);

    /// Log weight of `x_next` for producing step `t`, plus a scalar the
    /// proposal needs.
    fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> (T, T);

    fn propose<R: Rng + ?Sized>(
        &self,
        sched: &DiffusionSchedule<T>,
        mean: &[T],
        aux: T,
        t: usize,
        rng: &mut R,
        out: &mut [T],
    );

    /// Log factor accumulated along each particle's ancestry once it reaches `t`.
    fn log_anchor(&self, _x: &[T], _t: usize) -> T {
        T::zero()
    }
}

pub(crate) struct GuidedRun<T: Real> {
    pub cloud: ParticleCloud<T>,
    pub anchors: Vec<T>,
    pub diagnostics: Diagnostics,
}

/// Runs the guided particle loop from step `n` down to `t_stop`.
pub(crate) fn run_guided<T, P, G>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    guide: &G,
    cfg: &GuidanceConfig,
    seed: StreamSeed,
    t_stop: usize,
    force_last: bool,
) -> Result<GuidedRun<T>>
where
    T: Real,
    P: NoisePredictor<T> + ?Sized,
    G: Guide<T>,
{
    cfg.validate()?;
    let d = predictor.dim();
    let n_part = cfg.n_particles;
    let n = sched.n();
    if t_stop > n {
        return Err(Error::StepOutOfRange { step: t_stop, lo: 0, hi: n });
    }

    let mut particles = vec![T::zero(); n_part * d];
    particles.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut rng = seed.stream(Purpose::INIT, n as u64, i as u64);
        guide.init(sched, &mut rng, x);
    });
    let mut anchors: Vec<T> = particles.par_chunks(d).map(|x| guide.log_anchor(x, n)).collect();
    let mut cloud = ParticleCloud::new(n, d, particles, seed);
    let mut diagnostics = Diagnostics::default();

    let mut means = vec![T::zero(); n_part * d];
    let mut inc = vec![T::zero(); n_part];
    let mut aux = vec![T::zero(); n_part];
    for t in (t_stop..n).rev() {
        let xs = &cloud.particles;
        means
            .par_chunks_mut(d)
            .zip(inc.par_iter_mut())
            .zip(aux.par_iter_mut())
            .enumerate()
            .for_each_init(
                || vec![T::zero(); d],
                |eps, (i, ((m, w), a))| {
                    let x = &xs[i * d..(i + 1) * d];
                    backward_mean_unchecked(sched, predictor, x, t + 1, eps, m);
                    (*w, *a) = guide.log_weight(sched, m, x, t);
                },
            );
        cloud.step = t;
        let anc = cloud.reweight(&inc, cfg.resampling, cfg.scheme, force_last && t == t_stop, &mut diagnostics)?;
        let sel_means = ParticleCloud::<T>::gather(&means, d, &anc);
        let sel_aux = ParticleCloud::<T>::gather(&aux, 1, &anc);
        anchors = ParticleCloud::<T>::gather(&anchors, 1, &anc);
        cloud
            .particles
            .par_chunks_mut(d)
            .zip(anchors.par_iter_mut())
            .enumerate()
            .for_each(|(i, (x, an))| {
                let mut rng = seed.stream(Purpose::PROPOSE, t as u64, i as u64);
                guide.propose(sched, &sel_means[i * d..(i + 1) * d], sel_aux[i], t, &mut rng, x);
                *an += guide.log_anchor(x, t);
            });
    }
    Ok(GuidedRun { cloud, anchors, diagnostics })
}

/// Moves every particle from its current step down to 0 with the unguided
/// backward kernels.
pub(crate) fn propagate_to_zero<T, P>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    cloud: &mut ParticleCloud<T>,
) where
    T: Real,
    P: NoisePredictor<T> + ?Sized,
{
    let d = cloud.dim;
    let seed = cloud.seed;
    let start = cloud.step;
    cloud.particles.par_chunks_mut(d).enumerate().for_each_init(
        || (vec![T::zero(); d], vec![T::zero(); d]),
        |(eps, m), (i, x)| {
            for t in (0..start).rev() {
                backward_mean_unchecked(sched, predictor, x, t + 1, eps, m);
                let mut rng = seed.stream(Purpose::PROPAGATE, t as u64, i as u64);
                super::kernels::propagate_from_mean(sched, m, t, &mut rng, x);
            }
        },
    );
    cloud.step = 0;
}

struct Noiseless<'a, T: Real> {
    y: &'a [T],
}

impl<T: Real> Guide<T> for Noiseless<'_, T> {
    fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]) {
        init_noiseless(sched, self.y, rng, out);
    }

    fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> (T, T) {
        (log_weight_from_mean(sched, mean, x_next, t, self.y), T::zero())
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
        propose_from_mean(sched, mean, t, self.y, rng, out);
    }
}

/// Noiseless guided sampler for observations of the first `y.len()` coordinates.
///
/// Returns `N` unweighted samples whose first block equals `y` exactly.
pub fn mcgdiff_noiseless<T, P>(
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
    let d = predictor.dim();
    check_split(d, y.len())?;
    if !(sched.terminal_variance() > T::zero()) {
        return Err(Error::InvalidConfig("noiseless guidance needs eta > 0".into()));
    }
    let run = run_guided(sched, predictor, &Noiseless { y }, cfg, seed, 0, true)?;
    let samples = SampleSet::new(d, run.cloud.particles, format!("mcgdiff-noiseless seed={}", seed.0))?;
    Ok(SmcOutput { samples, diagnostics: run.diagnostics })
}
