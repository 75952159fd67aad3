//! Run configuration: defaults, JSON files and `--key value` overrides.

use anyhow::{bail, Context, Result};
use clap::Args;
use mcgdiff::{FinalWeighting, GuidanceConfig, Resampling, ResamplingScheme, Schedule};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gmm,
    ConjugateCheck,
    BiasSweep,
    Timesteps,
    SwCompare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SchemeArg {
    Multinomial,
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum WeightingArg {
    Corrected,
    Likelihood,
    Uniform,
    ForwardRatio,
}

/// Everything a run depends on. A manifest stores the resolved value, which
/// is enough to repeat the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub d_x: usize,
    pub d_y: usize,
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eta: f64,
    /// Coarse DDIM grid size; `None` runs every step of the schedule.
    pub ddim_steps: Option<usize>,
    pub particles: usize,
    pub kappa: f64,
    pub delta: f64,
    /// Resample only below this fraction of `N` effective particles.
    pub ess_threshold: Option<f64>,
    pub scheme: SchemeArg,
    pub final_weighting: WeightingArg,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Samples drawn from the sampler and from the exact posterior.
    pub samples: usize,
    /// Samples kept from each sampler run; `None` keeps all `N`.
    pub keep_per_run: Option<usize>,
    pub n_proj: usize,
    pub sw_order: u32,
    pub chi2_dof: f64,
    /// Fail `run-gmm` when SW exceeds this multiple of the noise floor.
    pub max_sw_ratio: Option<f64>,
    /// Independent sampler runs pooled by `conjugate-check`.
    pub runs: usize,
    /// Dense steps and particles of the noisy half of `conjugate-check`.
    pub noisy_n_steps: usize,
    pub noisy_particles: usize,
    pub replicates: usize,
    pub particle_grid: Vec<usize>,
    /// Particles and runs of the large-`N` reference in `bias-sweep`.
    pub reference_particles: usize,
    pub reference_runs: usize,
    pub slope_range: (f64, f64),
    pub sigma_y: f64,
    pub singular: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Gmm,
            d_x: 8,
            d_y: 1,
            n_steps: 1000,
            beta_start: 0.2,
            beta_end: 1e-4,
            eta: 1.0,
            ddim_steps: Some(20),
            particles: 512,
            kappa: 1e-4,
            delta: 0.0,
            ess_threshold: None,
            scheme: SchemeArg::Multinomial,
            final_weighting: WeightingArg::Likelihood,
            seed: None,
            out_dir: None,
            workers: None,
            samples: 10_000,
            keep_per_run: None,
            n_proj: 128,
            sw_order: 2,
            chi2_dof: 1.0,
            max_sw_ratio: None,
            runs: 20,
            noisy_n_steps: 1000,
            noisy_particles: 2048,
            replicates: 2000,
            particle_grid: vec![4, 8, 16, 32],
            reference_particles: 8192,
            reference_runs: 32,
            slope_range: (-1.4, -0.6),
            sigma_y: 0.0,
            singular: vec![1.0],
        }
    }
}

impl RunConfig {
    /// Defaults of one subcommand.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self { experiment: kind, ..Self::default() };
        match kind {
            ExperimentKind::ConjugateCheck => Self {
                n_steps: 100,
                beta_start: 1e-4,
                beta_end: 0.02,
                ddim_steps: None,
                particles: 1024,
                scheme: SchemeArg::Systematic,
                final_weighting: WeightingArg::ForwardRatio,
                sigma_y: 0.5,
                ..base
            },
            ExperimentKind::BiasSweep => Self {
                beta_start: 1e-4,
                beta_end: 0.02,
                ddim_steps: Some(40),
                ..base
            },
            ExperimentKind::Timesteps => Self { sigma_y: 0.5, singular: vec![1.0, 0.5], ..base },
            _ => base,
        }
    }
}

/// Command-line overrides; each flag replaces the field of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d_x: Option<usize>,
    #[arg(long)]
    pub d_y: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Coarse grid size; 0 runs every step.
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    pub final_weighting: Option<WeightingArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "MCGDIFF_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub keep_per_run: Option<usize>,
    #[arg(long)]
    pub n_proj: Option<usize>,
    #[arg(long)]
    pub sw_order: Option<u32>,
    #[arg(long)]
    pub chi2_dof: Option<f64>,
    #[arg(long)]
    pub max_sw_ratio: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub noisy_n_steps: Option<usize>,
    #[arg(long)]
    pub noisy_particles: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub reference_particles: Option<usize>,
    #[arg(long)]
    pub reference_runs: Option<usize>,
    /// Comma-separated particle counts.
    #[arg(long, value_delimiter = ',')]
    pub particle_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// Comma-separated singular values.
    #[arg(long, value_delimiter = ',')]
    pub singular: Option<Vec<f64>>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident, $($field:ident),*) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    /// Reads a config file over the defaults of `kind`. Manifests are
    /// accepted too: their `config` entry is used.
    pub fn from_file(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let inner = match value.get("spec_version") {
            Some(_) => value.get("config").cloned().context("manifest has no `config` entry")?,
            None => value,
        };
        let serde_json::Value::Object(fields) = inner else {
            bail!("{}: expected a JSON object", path.display());
        };
        let mut merged = serde_json::to_value(Self::defaults(kind))?;
        let target = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in fields {
            target.insert(k, v);
        }
        serde_json::from_value(merged).with_context(|| format!("config fields in {}", path.display()))
    }

    /// Defaults, then the file named by `--config`, then the flags.
    pub fn resolve(kind: ExperimentKind, ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(p) => Self::from_file(kind, p)?,
            None => Self::defaults(kind),
        };
        cfg.experiment = kind;
        apply!(
            cfg, ov, d_x, d_y, n_steps, beta_start, beta_end, eta, particles, kappa, delta, scheme,
            final_weighting, samples, n_proj, sw_order, chi2_dof, runs, noisy_n_steps, noisy_particles,
            replicates, particle_grid, reference_particles, reference_runs, sigma_y, singular
        );
        if let Some(r) = ov.ddim_steps {
            cfg.ddim_steps = (r > 0).then_some(r);
        }
        for (dst, src) in [
            (&mut cfg.ess_threshold, ov.ess_threshold),
            (&mut cfg.max_sw_ratio, ov.max_sw_ratio),
        ] {
            if src.is_some() {
                *dst = src;
            }
        }
        if ov.seed.is_some() {
            cfg.seed = ov.seed;
        }
        if ov.out_dir.is_some() {
            cfg.out_dir.clone_from(&ov.out_dir);
        }
        if ov.workers.is_some() {
            cfg.workers = ov.workers;
        }
        if ov.keep_per_run.is_some() {
            cfg.keep_per_run = ov.keep_per_run;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(_) = self.seed else { bail!("seed: required") };
        if self.d_x == 0 {
            bail!("d_x: must be positive");
        }
        if self.experiment == ExperimentKind::Gmm {
            if self.d_x < 2 || self.d_x % 2 != 0 {
                bail!("d_x: the grid prior needs an even dimension >= 2, got {}", self.d_x);
            }
            if self.d_y == 0 || self.d_y >= self.d_x {
                bail!("d_y: need 1 <= d_y < d_x, got {}", self.d_y);
            }
        }
        if self.n_steps == 0 {
            bail!("n_steps: must be positive");
        }
        for (name, b) in [("beta_start", self.beta_start), ("beta_end", self.beta_end)] {
            if !(b > 0.0 && b < 1.0) {
                bail!("{name}: {b} outside (0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bail!("eta: {} outside [0, 1]", self.eta);
        }
        if let Some(r) = self.ddim_steps {
            if r < 2 {
                bail!("ddim_steps: need at least 2, got {r}");
            }
        }
        if self.particles == 0 {
            bail!("particles: must be positive");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            bail!("kappa: {} outside (0, 1]", self.kappa);
        }
        if !(self.delta >= 0.0) {
            bail!("delta: {} is negative", self.delta);
        }
        if let Some(r) = self.ess_threshold {
            if !(0.0..=1.0).contains(&r) {
                bail!("ess_threshold: {r} outside [0, 1]");
            }
        }
        if self.samples == 0 {
            bail!("samples: must be positive");
        }
        if self.keep_per_run == Some(0) {
            bail!("keep_per_run: must be positive");
        }
        if self.n_proj == 0 {
            bail!("n_proj: must be positive");
        }
        if self.sw_order == 0 {
            bail!("sw_order: must be positive");
        }
        if self.workers == Some(0) {
            bail!("workers: must be positive");
        }
        if self.experiment == ExperimentKind::ConjugateCheck {
            if self.runs < 2 {
                bail!("runs: need at least 2");
            }
            if self.noisy_n_steps == 0 || self.noisy_particles == 0 {
                bail!("noisy_n_steps, noisy_particles: must be positive");
            }
            if !(self.sigma_y > 0.0) {
                bail!("sigma_y: the noisy check needs a positive value");
            }
        }
        if self.experiment == ExperimentKind::BiasSweep {
            if self.reference_particles == 0 || self.reference_runs < 2 {
                bail!("reference_particles, reference_runs: need a positive count and at least two runs");
            }
            if self.replicates < 2 {
                bail!("replicates: need at least 2");
            }
            if self.particle_grid.len() < 2 || self.particle_grid.contains(&0) {
                bail!("particle_grid: need at least two positive counts");
            }
        }
        if self.experiment == ExperimentKind::Timesteps {
            if self.singular.is_empty() || self.singular.iter().any(|s| !(*s > 0.0)) {
                bail!("singular: need positive values");
            }
            if !(self.sigma_y >= 0.0) {
                bail!("sigma_y: must be non-negative");
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Ok(Schedule::linear(self.n_steps, self.beta_start, self.beta_end, self.eta)?)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            n_particles: self.particles,
            kappa: self.kappa,
            delta: self.delta,
            resampling: match self.ess_threshold {
                Some(r) => Resampling::Ess(r),
                None => Resampling::Every,
            },
            scheme: match self.scheme {
                SchemeArg::Multinomial => ResamplingScheme::Multinomial,
                SchemeArg::Systematic => ResamplingScheme::Systematic,
            },
            final_weighting: match self.final_weighting {
                WeightingArg::Corrected => FinalWeighting::Corrected,
                WeightingArg::Likelihood => FinalWeighting::Likelihood,
                WeightingArg::Uniform => FinalWeighting::Uniform,
                WeightingArg::ForwardRatio => FinalWeighting::ForwardRatio,
            },
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("mcgdiff-out"))
    }
}
