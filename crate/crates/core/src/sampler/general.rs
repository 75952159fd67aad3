use super::{mcgdiff_bounded, mcgdiff_noiseless, mcgdiff_noisy, GuidanceConfig, SmcOutput};
use crate::error::{Error, Result};
use crate::predictor::{NoisePredictor, RotatedPredictor};
use crate::problem::{decompose, select_timesteps, LinearInverseProblem, SpectralProblem};
use crate::rng::StreamSeed;
use crate::samples::SampleSet;
use crate::scalar::Real;
use crate::schedule::DiffusionSchedule;
use rayon::prelude::*;

/// A coarse DDIM grid chosen for one problem, with the spectral form indexed on it.
#[derive(Clone, Debug)]
pub struct DdimPlan<T: Real> {
    /// Steps of the dense schedule that the coarse one visits.
    pub steps: Vec<usize>,
    pub schedule: DiffusionSchedule<T>,
    pub spectral: SpectralProblem<T>,
}

impl<T: Real> DdimPlan<T> {
    /// Matches τ on `dense`, selects `ddim_steps` timesteps (all steps when
    /// `None`) and re-indexes everything on the coarse grid.
    pub fn new(
        dense: &DiffusionSchedule<T>,
        prob: &LinearInverseProblem<T>,
        ddim_steps: Option<usize>,
    ) -> Result<Self> {
        let spec = decompose(prob, dense)?;
        let steps = match ddim_steps {
            Some(r) => select_timesteps(dense, r, prob.sigma_y, &spec.singular)?,
            None => (1..=dense.n()).collect(),
        };
        let schedule = dense.subsample(&steps)?;
        let spectral = spec.on_grid(&steps)?;
        Ok(Self { steps, schedule, spectral })
    }
}

/// Runs the sampler matching `spec` on `sched`: noiseless problems use the
/// noiseless sampler (or its bounded-weight variant when `cfg.delta > 0`) on
/// `y_spec`, noisy problems the noisy sampler. Samples are returned in the
/// original basis; `predictor` acts on spectral coordinates.
pub fn mcgdiff_spectral<T, P>(
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
    if !spec.is_noiseless() {
        if cfg.delta > 0.0 {
            return Err(Error::InvalidConfig(
                "the bounded-weight variant is defined for noiseless problems only".into(),
            ));
        }
        return mcgdiff_noisy(sched, predictor, spec, cfg, seed);
    }
    let out = if cfg.delta > 0.0 {
        mcgdiff_bounded(sched, predictor, &spec.y_spec, cfg, seed)?
    } else {
        mcgdiff_noiseless(sched, predictor, &spec.y_spec, cfg, seed)?
    };
    let d = spec.d_x();
    let mut data = vec![T::zero(); out.samples.as_slice().len()];
    data.par_chunks_mut(d)
        .zip(out.samples.as_slice().par_chunks(d))
        .for_each(|(o, z)| o.copy_from_slice(&spec.from_spectral(z)));
    Ok(SmcOutput {
        samples: SampleSet::new(d, data, out.samples.label)?,
        diagnostics: out.diagnostics,
    })
}

/// Posterior sampling for an arbitrary linear problem, with `predictor` in the
/// original basis and τ matched on `sched` itself.
pub fn mcgdiff_general<T, P>(
    sched: &DiffusionSchedule<T>,
    predictor: &P,
    prob: &LinearInverseProblem<T>,
    cfg: &GuidanceConfig,
    seed: StreamSeed,
) -> Result<SmcOutput<T>>
where
    T: Real,
    P: NoisePredictor<T>,
{
    if predictor.dim() != prob.d_x() {
        return Err(Error::DimensionMismatch { expected: prob.d_x(), got: predictor.dim() });
    }
    let spec = decompose(prob, sched)?;
    let rotated = RotatedPredictor::new(predictor, spec.v.clone());
    mcgdiff_spectral(sched, &rotated, &spec, cfg, seed)
}
