//! Sequential Monte Carlo posterior sampling for linear Gaussian inverse
//! problems under denoising-diffusion priors, with an analytic
//! Gaussian-mixture test bed.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`.

pub mod error;
pub mod metrics;
pub mod predictor;
pub mod prior;
pub mod problem;
pub mod rng;
pub mod sampler;
pub mod samples;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use predictor::{NoisePredictor, RotatedPredictor, ZeroPredictor};
pub use prior::{gmm_grid_prior, GaussianMixturePosterior, GaussianMixturePrior};
pub use problem::{
    decompose, match_tau, random_problem, select_timesteps, LinearInverseProblem, SpectralProblem,
};
pub use rng::{Purpose, StreamSeed};
pub use sampler::{
    mcgdiff_bounded, mcgdiff_general, mcgdiff_noiseless, mcgdiff_noisy, mcgdiff_spectral,
    smcdiff_extended, DdimPlan, Diagnostics, FinalWeighting, GuidanceConfig, ParticleCloud,
    Resampling, ResamplingScheme, SmcOutput,
};
pub use samples::SampleSet;
pub use scalar::Real;
pub use schedule::DiffusionSchedule;

pub type Schedule = DiffusionSchedule<f64>;
pub type Prior = GaussianMixturePrior<f64>;
pub type Posterior = GaussianMixturePosterior<f64>;
pub type Problem = LinearInverseProblem<f64>;
pub type Spectral = SpectralProblem<f64>;
pub type Samples = SampleSet<f64>;
pub type Cloud = ParticleCloud<f64>;
