//! Optimization: schedule, Adam, and the pretraining, finetuning, linear
//! probing and ablation drivers.

mod ablation;
mod adam;
mod finetune;
mod pretrain;
mod probe;
mod schedule;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CorpusError;
use crate::geometry::GeometryError;
use crate::model::{DecoderConfig, EncoderConfig, ModelError};
use crate::objectives::{LossWeights, ObjectiveError};

pub use ablation::{ablation_grid, write_ablation_csv, AblationAxis, AblationRow};
pub use adam::{AdamConfig, OptimizerState};
pub use finetune::{finetune, write_mae_csv, FinetuneRun, MaeRecord};
pub use pretrain::{pretrain, streams, pretrain_from, write_loss_csv, LossRecord, PretrainRun};
pub use probe::{linear_probe, linear_probe_features, write_probe_csv, ProbeRecord, ProbeRun};
pub use schedule::ScheduleConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has no {0} molecules")]
    EmptyDataset(&'static str),
    #[error("gradient for {block} is not finite at entry {index}")]
    NonFiniteGradient { block: String, index: usize },
    #[error("ablation grid has an axis with no values")]
    EmptyGrid,
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Pretrain,
    Finetune,
    LinearProbe,
}

/// Everything a driver needs besides the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Pretraining steps.
    pub total_steps: usize,
    /// Finetuning steps; zero evaluates the fresh head only.
    pub finetune_steps: usize,
    /// Standard deviation of the coordinate noise, in Å.
    pub sigma: f64,
    /// Scale of the reconstruction noise relative to the denoising noise.
    pub lambda: f64,
    #[serde(with = "weights_serde")]
    pub weights: LossWeights,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub schedule: ScheduleConfig,
    pub dataset: Option<PathBuf>,
    pub mode: Mode,
    /// Label column used by finetuning and probing.
    pub target: String,
    /// Keep the denoising loss as an auxiliary term while finetuning.
    pub finetune_denoising: bool,
    pub denoising_weight: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            batch_size: 8,
            total_steps: 2000,
            finetune_steps: 200,
            sigma: 0.04,
            lambda: 1.0,
            weights: LossWeights::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            schedule: ScheduleConfig::default(),
            dataset: None,
            mode: Mode::Pretrain,
            target: "energy".into(),
            finetune_denoising: false,
            denoising_weight: 0.1,
            probe_epochs: 300,
            probe_lr: 1e-2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let invalid = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1".into());
        }
        if self.total_steps == 0 {
            return invalid("total_steps must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.denoising_weight >= 0.0 && self.denoising_weight.is_finite()) {
            return invalid(format!("denoising_weight must be non-negative, got {}", self.denoising_weight));
        }
        if !(self.probe_lr > 0.0 && self.probe_lr.is_finite()) {
            return invalid(format!("probe_lr must be positive, got {}", self.probe_lr));
        }
        self.weights.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.schedule.validate()
    }
}

mod weights_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::objectives::LossWeights;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        w_nsd: f64,
        w_rec: f64,
        w_cln: f64,
    }

    pub fn serialize<S: Serializer>(w: &LossWeights, s: S) -> Result<S::Ok, S::Error> {
        Repr { w_nsd: w.w_nsd, w_rec: w.w_rec, w_cln: w.w_cln }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LossWeights, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(LossWeights { w_nsd: r.w_nsd, w_rec: r.w_rec, w_cln: r.w_cln })
    }
}

/// Mean and standard deviation of label values; a (near-)constant column
/// gets unit scale so normalization stays finite.
pub(crate) fn label_scale(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-8 { std } else { 1.0 })
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.display().to_string(), source }
}

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<(), TrainError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}
