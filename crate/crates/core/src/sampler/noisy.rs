use super::cloud::ParticleCloud;
use super::kernels::{check_split, NoisyGuide};
use super::noiseless::{propagate_to_zero, run_guided, Guide};
use super::{FinalWeighting, GuidanceConfig, SmcOutput};
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::problem::SpectralProblem;
use crate::rng::StreamSeed;
use crate::samples::SampleSet;
use crate::scalar::{log_normal_1d, Real};
use crate::schedule::DiffusionSchedule;
use rand::Rng;
use rayon::prelude::*;

impl<T: Real> Guide<T> for NoisyGuide<T> {
    fn init<R: Rng + ?Sized>(&self, sched: &DiffusionSchedule<T>, rng: &mut R, out: &mut [T]) {
        NoisyGuide::init(self, sched, rng, out);
    }

    fn log_weight(&self, sched: &DiffusionSchedule<T>, mean: &[T], x_next: &[T], t: usize) -> (T, T) {
        (NoisyGuide::log_weight(self, sched, mean, x_next, t), T::zero())
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
        NoisyGuide::propose(self, sched, mean, t, rng, out);
    }

    fn log_anchor(&self, x: &[T], t: usize) -> T {
        NoisyGuide::log_anchor(self, x, t)
    }
}

/// Noisy guided sampler in the spectral basis.
///
/// Runs the guided loop down to the smallest matched step, propagates every
/// particle to step 0 with the backward kernels, reweights according to
/// `cfg.final_weighting`, resamples, and maps the samples back through `V`.
/// `predictor` must act on spectral coordinates and `spec.tau` must index
/// `sched`.
pub fn mcgdiff_noisy<T, P>(
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
    let guide = NoisyGuide::from_spectral(spec, T::of(cfg.kappa))?;
    if let Some(&t) = guide.tau.iter().find(|&&t| t == 0 || t > sched.n()) {
        return Err(Error::StepOutOfRange { step: t, lo: 1, hi: sched.n() });
    }
    let tau_min = guide.tau_min();
    let mut run = run_guided(sched, predictor, &guide, cfg, seed, tau_min, false)?;
    propagate_to_zero(sched, predictor, &mut run.cloud);

    let dy = spec.d_y();
    let final_inc: Vec<T> = run
        .cloud
        .particles
        .par_chunks(d)
        .zip(run.anchors.par_iter())
        .map(|(x, &anchor)| {
            let lik = || -> T {
                (0..dy)
                    .map(|i| {
                        let s = spec.coord_noise[i];
                        log_normal_1d(spec.y_spec[i], x[i], s * s)
                    })
                    .sum()
            };
            match cfg.final_weighting {
                FinalWeighting::Corrected => lik() - anchor,
                FinalWeighting::Likelihood => lik(),
                FinalWeighting::Uniform => T::zero(),
                FinalWeighting::ForwardRatio => {
                    let fwd: T = (0..dy)
                        .map(|i| {
                            let ab = sched.alpha_bar(guide.tau[i]);
                            log_normal_1d(guide.y_tilde[i], ab.sqrt() * x[i], T::one() - ab)
                        })
                        .sum();
                    lik() - fwd
                }
            }
        })
        .collect();
    let anc = run.cloud.reweight(&final_inc, cfg.resampling, cfg.scheme, true, &mut run.diagnostics)?;
    let chosen = ParticleCloud::<T>::gather(&run.cloud.particles, d, &anc);
    let mut data = vec![T::zero(); chosen.len()];
    data.par_chunks_mut(d)
        .zip(chosen.par_chunks(d))
        .for_each(|(o, z)| o.copy_from_slice(&spec.from_spectral(z)));
    let samples = SampleSet::new(d, data, format!("mcgdiff-noisy seed={}", seed.0))?;
    Ok(SmcOutput { samples, diagnostics: run.diagnostics })
}
