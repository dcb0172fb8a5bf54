//! Flat JSON run configurations for `train` and `lotka-volterra`.

use std::path::{Path, PathBuf};

use kode::analysis::lotka_volterra::{LvPrior, LvStudyConfig};
use kode::data::Benchmark;
use kode::flow::TimeMode;
use kode::kernels::KernelFamily;
use kode::model::{KernelChoice, Lengthscale, ModelConfig};
use kode::objective::PenaltyConfig;
use kode::optim::{LrSchedule, OptimizerKind, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Training and architecture keys shared by both configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub schedule: LrSchedule,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_total: f64,
    pub bidirectional: bool,
    pub val_every: usize,
    pub record_wall_time: bool,
    pub field_kernel: KernelFamily,
    pub field_lengthscale: Lengthscale,
    pub mmd_kernel: KernelFamily,
    pub mmd_lengthscale: Lengthscale,
    pub n_inducing: usize,
    pub time_steps: usize,
    pub mode: TimeMode,
}

impl Default for Hyper {
    fn default() -> Self {
        Self::from_parts(&TrainConfig::default(), &ModelConfig::default())
    }
}

impl Hyper {
    fn from_parts(t: &TrainConfig, m: &ModelConfig) -> Self {
        Self {
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            adam_beta1: t.adam_betas.0,
            adam_beta2: t.adam_betas.1,
            adam_eps: t.adam_eps,
            schedule: t.schedule,
            lambda1: t.penalty.lambda1,
            lambda2: t.penalty.lambda2,
            lambda_total: t.penalty.lambda_total,
            bidirectional: t.bidirectional,
            val_every: t.val_every,
            record_wall_time: t.record_wall_time,
            field_kernel: m.field_kernel.family,
            field_lengthscale: m.field_kernel.lengthscale,
            mmd_kernel: m.mmd_kernel.family,
            mmd_lengthscale: m.mmd_kernel.lengthscale,
            n_inducing: m.n_inducing,
            time_steps: m.time_steps,
            mode: m.mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            adam_betas: (self.adam_beta1, self.adam_beta2),
            adam_eps: self.adam_eps,
            schedule: self.schedule,
            seed: self.seed,
            penalty: PenaltyConfig {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda_total: self.lambda_total,
            },
            bidirectional: self.bidirectional,
            val_every: self.val_every,
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            field_kernel: KernelChoice {
                family: self.field_kernel,
                lengthscale: self.field_lengthscale,
            },
            mmd_kernel: KernelChoice {
                family: self.mmd_kernel,
                lengthscale: self.mmd_lengthscale,
            },
            n_inducing: self.n_inducing,
            time_steps: self.time_steps,
            mode: self.mode,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(CliError::usage)?;
        self.model_config().validate().map_err(CliError::usage)
    }
}

/// Configuration of `kode train`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Standard benchmark split, used instead of the data paths.
    #[serde(default)]
    pub benchmark: Option<Benchmark>,
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub train_data: Option<PathBuf>,
    #[serde(default)]
    pub val_data: Option<PathBuf>,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    #[serde(default)]
    pub mask_dim: usize,
    #[serde(default)]
    pub evaluation_seed: u64,
    #[serde(skip)]
    pub hyper: Hyper,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.hyper.validate()?;
        match (&self.benchmark, &self.train_data, &self.val_data) {
            (Some(_), None, None) => {
                if self.test_data.is_some() {
                    return Err(CliError::usage_msg("`test_data` cannot be combined with `benchmark`"));
                }
            }
            (None, Some(_), Some(_)) => {
                if self.data_seed.is_some() {
                    return Err(CliError::usage_msg("`data_seed` only applies to `benchmark`"));
                }
            }
            (Some(_), _, _) => {
                return Err(CliError::usage_msg(
                    "give either `benchmark` or `train_data` and `val_data`, not both",
                ))
            }
            _ => {
                return Err(CliError::usage_msg(
                    "`train_data` and `val_data` are required without `benchmark`",
                ))
            }
        }
        for p in [&self.train_data, &self.val_data, &self.test_data]
            .into_iter()
            .flatten()
        {
            require_file(p)?;
        }
        check_output_dir(&self.output_dir)
    }
}

/// Configuration of `kode lotka-volterra`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvRunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "LvRunConfig::default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "LvRunConfig::default_val")]
    pub n_val: usize,
    #[serde(default = "LvRunConfig::default_posterior")]
    pub n_posterior: usize,
    #[serde(default = "LvRunConfig::default_mcmc")]
    pub mcmc_steps: usize,
    #[serde(default)]
    pub prior_loc: Option<[f64; 4]>,
    #[serde(default)]
    pub prior_scale: Option<[f64; 4]>,
    #[serde(skip)]
    pub hyper: Hyper,
}

impl LvRunConfig {
    fn default_pairs() -> usize {
        LvStudyConfig::default().n_pairs
    }
    fn default_val() -> usize {
        LvStudyConfig::default().n_val
    }
    fn default_posterior() -> usize {
        LvStudyConfig::default().n_posterior
    }
    fn default_mcmc() -> usize {
        LvStudyConfig::default().mcmc_steps
    }

    pub fn study_config(&self) -> LvStudyConfig {
        let defaults = LvStudyConfig::default();
        LvStudyConfig {
            n_pairs: self.n_pairs,
            n_val: self.n_val,
            n_posterior: self.n_posterior,
            mcmc_steps: self.mcmc_steps,
            seed: self.hyper.seed,
            prior: LvPrior {
                loc: self.prior_loc.unwrap_or(defaults.prior.loc),
                scale: self.prior_scale.unwrap_or(defaults.prior.scale),
            },
            train: self.hyper.train_config(),
            model: self.hyper.model_config(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.hyper.validate()?;
        if self.n_pairs == 0 || self.n_val < 2 || self.n_posterior == 0 {
            return Err(CliError::usage_msg(
                "n_pairs and n_posterior must be positive and n_val at least 2",
            ));
        }
        if self.mcmc_steps < 1000 {
            return Err(CliError::usage_msg("mcmc_steps must be at least 1000"));
        }
        if self.hyper.batch_size > self.n_pairs {
            return Err(CliError::usage_msg("batch_size exceeds n_pairs"));
        }
        let prior = self.study_config().prior;
        if prior.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || prior.loc.iter().any(|v| !v.is_finite()) {
            return Err(CliError::usage_msg("prior_loc must be finite and prior_scale positive"));
        }
        check_output_dir(&self.output_dir)
    }
}

/// Configurations made of their own keys plus the shared [`Hyper`] keys.
pub trait WithHyper: DeserializeOwned {
    fn default_hyper() -> Hyper {
        Hyper::default()
    }
    fn set_hyper(&mut self, hyper: Hyper);
}

impl WithHyper for RunConfig {
    fn set_hyper(&mut self, hyper: Hyper) {
        self.hyper = hyper;
    }
}

impl WithHyper for LvRunConfig {
    fn default_hyper() -> Hyper {
        let d = LvStudyConfig::default();
        Hyper::from_parts(&d.train, &d.model)
    }
    fn set_hyper(&mut self, hyper: Hyper) {
        self.hyper = hyper;
    }
}

/// Reads a flat JSON configuration. Keys are routed either to the shared
/// hyperparameters or to the command's own fields; unknown keys are
/// reported by name.
pub fn read_config<T: WithHyper>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage_msg(format!("cannot read config {}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| CliError::usage_msg(format!("config {}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let serde_json::Value::Object(all) = value else {
        return Err(CliError::usage_msg(format!(
            "config {}: expected a JSON object",
            path.display()
        )));
    };
    let mut hyper_keys = match serde_json::to_value(T::default_hyper()).map_err(bad)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("Hyper serializes to an object"),
    };
    let (shared, own): (serde_json::Map<_, _>, serde_json::Map<_, _>) =
        all.into_iter().partition(|(k, _)| hyper_keys.contains_key(k));
    hyper_keys.extend(shared);
    let hyper: Hyper = serde_json::from_value(hyper_keys.into()).map_err(bad)?;
    let mut cfg: T = serde_json::from_value(own.into()).map_err(bad)?;
    cfg.set_hyper(hyper);
    Ok(cfg)
}

pub fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::usage_msg(format!(
            "input file {} does not exist",
            p.display()
        )))
    }
}

fn check_output_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::usage_msg(format!(
            "output_dir {} is not a directory",
            dir.display()
        )));
    }
    Ok(())
}
