use std::fmt::Write as _;
use std::path::Path;

use super::{finetune, pretrain, write_text, RunConfig, TrainError};
use crate::data::Corpus;

/// One swept hyperparameter and its values.
#[derive(Clone, Debug, PartialEq)]
pub enum AblationAxis {
    Lambda(Vec<f64>),
    DecoderDepth(Vec<usize>),
    RecWeight(Vec<f64>),
    CleanWeight(Vec<f64>),
}

impl AblationAxis {
    fn len(&self) -> usize {
        match self {
            AblationAxis::Lambda(v) | AblationAxis::RecWeight(v) | AblationAxis::CleanWeight(v) => v.len(),
            AblationAxis::DecoderDepth(v) => v.len(),
        }
    }

    fn apply(&self, index: usize, config: &mut RunConfig) {
        match self {
            AblationAxis::Lambda(v) => config.lambda = v[index],
            AblationAxis::DecoderDepth(v) => config.decoder.depth = v[index],
            AblationAxis::RecWeight(v) => config.weights.w_rec = v[index],
            AblationAxis::CleanWeight(v) => config.weights.w_cln = v[index],
        }
    }
}

/// Settings of one grid cell and its final metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub lambda: f64,
    pub decoder_depth: usize,
    pub w_rec: f64,
    pub w_cln: f64,
    /// Mean total pretraining loss over the last tenth of the run.
    pub pretrain_loss: f64,
    pub finetune_mae: f64,
}

/// Pretrains then finetunes once per cell of the Cartesian product of
/// `axes`, first axis slowest. Every cell uses the base seed. No axes means a
/// single cell with the base configuration.
pub fn ablation_grid(base: &RunConfig, corpus: &Corpus, axes: &[AblationAxis]) -> Result<Vec<AblationRow>, TrainError> {
    if axes.iter().any(|a| a.len() == 0) {
        return Err(TrainError::EmptyGrid);
    }
    let cells: usize = axes.iter().map(AblationAxis::len).product();
    let mut rows = Vec::with_capacity(cells);
    for cell in 0..cells {
        let mut config = base.clone();
        let mut rest = cell;
        for axis in axes.iter().rev() {
            axis.apply(rest % axis.len(), &mut config);
            rest /= axis.len();
        }
        let run = pretrain(&config, corpus)?;
        if let Some(step) = run.diverged_at {
            log::warn!("ablation cell {cell} diverged at step {step}");
        }
        let tail = (run.log.len() / 10).max(1);
        let pretrain_loss = run.log.iter().rev().take(tail).map(|r| r.losses.total).sum::<f64>() / tail.min(run.log.len()).max(1) as f64;
        let tuned = finetune(&config, &run.model, corpus)?;
        rows.push(AblationRow {
            lambda: config.lambda,
            decoder_depth: config.decoder.depth,
            w_rec: config.weights.w_rec,
            w_cln: config.weights.w_cln,
            pretrain_loss,
            finetune_mae: tuned.final_mae(),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), TrainError> {
    let mut out = String::from("lambda,decoder_depth,w_rec,w_cln,pretrain_loss,finetune_mae\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:e},{:e}", r.lambda, r.decoder_depth, r.w_rec, r.w_cln, r.pretrain_loss, r.finetune_mae);
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::model::{DecoderConfig, EncoderConfig};

    fn base() -> RunConfig {
        RunConfig {
            total_steps: 2,
            finetune_steps: 1,
            batch_size: 2,
            encoder: EncoderConfig { hidden_dim: 4, num_layers: 1, num_rbf: 4, ..Default::default() },
            decoder: DecoderConfig { depth: 2, width: 4 },
            ..Default::default()
        }
    }

    #[test]
    fn grid_shape_and_order() {
        let corpus = synth_corpus(&SynthConfig { n_molecules: 6, seed: 9, ..Default::default() }).unwrap();
        let axes = [AblationAxis::Lambda(vec![1.0, 1.5]), AblationAxis::DecoderDepth(vec![3, 4, 5])];
        let rows = ablation_grid(&base(), &corpus, &axes).unwrap();
        let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.lambda, r.decoder_depth)).collect();
        assert_eq!(keys, vec![(1.0, 3), (1.0, 4), (1.0, 5), (1.5, 3), (1.5, 4), (1.5, 5)]);
    }

    #[test]
    fn empty_axis_is_rejected_and_no_axes_is_one_cell() {
        let corpus = synth_corpus(&SynthConfig { n_molecules: 4, seed: 9, ..Default::default() }).unwrap();
        assert!(matches!(ablation_grid(&base(), &corpus, &[AblationAxis::RecWeight(vec![])]), Err(TrainError::EmptyGrid)));
        let rows = ablation_grid(&base(), &corpus, &[]).unwrap();
        assert_eq!(rows.len(), 1);
        let run = pretrain(&base(), &corpus).unwrap();
        let mae = finetune(&base(), &run.model, &corpus).unwrap().final_mae();
        assert_eq!(rows[0].finetune_mae.to_bits(), mae.to_bits());
    }
}
