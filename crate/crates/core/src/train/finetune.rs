use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::pretrain::{mean_gradients, molecule_gradients, streams};
use super::{label_scale, write_text, OptimizerState, RunConfig, TrainError};
use crate::data::{Corpus, Split};
use crate::geometry::sample_noise_triple;
use crate::model::{coords_tensor, GeoRecon, Trainable};
use crate::objectives::{mse_var, LossReport};
use crate::rng::{derive_seed, Rng};

/// Mean absolute error on the evaluation molecules after `epoch` epochs, in
/// the label's own units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaeRecord {
    pub epoch: usize,
    pub step: usize,
    pub mae: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneRun {
    pub model: GeoRecon,
    pub log: Vec<MaeRecord>,
    /// Label mean and scale the readout was trained against.
    pub label_mean: f64,
    pub label_std: f64,
}

impl FinetuneRun {
    pub fn final_mae(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.mae)
    }

    /// Prediction in label units.
    pub fn predict(&self, conf: &crate::geometry::Conformation) -> Result<f64, TrainError> {
        Ok(self.model.predict_property(conf)? * self.label_std + self.label_mean)
    }
}

/// Validation molecules, falling back to test and then training molecules.
pub(crate) fn evaluation_indices(corpus: &Corpus) -> Vec<usize> {
    [Split::Val, Split::Test, Split::Train].into_iter().map(|s| corpus.indices(s)).find(|v| !v.is_empty()).unwrap_or_default()
}

fn evaluate(model: &GeoRecon, corpus: &Corpus, indices: &[usize], labels: &[f64], mean: f64, std: f64) -> Result<f64, TrainError> {
    let errors: Vec<f64> = indices
        .par_iter()
        .map(|&i| Ok((model.predict_property(corpus.molecule(i))? * std + mean - labels[i]).abs()))
        .collect::<Result<_, TrainError>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len().max(1) as f64)
}

/// Trains the encoder and a freshly initialized readout on `config.target`
/// for `config.finetune_steps` steps. One epoch is `⌈n_train / batch_size⌉`
/// steps over a reshuffled training split; MAE is logged before training,
/// after every epoch and after the last step.
pub fn finetune(config: &RunConfig, model: &GeoRecon, corpus: &Corpus) -> Result<FinetuneRun, TrainError> {
    config.validate()?;
    let labels = corpus.require_label(&config.target)?;
    let train = corpus.indices(Split::Train);
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    let eval = evaluation_indices(corpus);
    let (mean, std) = label_scale(&train.iter().map(|&i| labels[i]).collect::<Vec<_>>());

    let mut model = model.clone();
    model.reset_readout(derive_seed(config.seed, streams::READOUT));
    let mut opt = OptimizerState::new(model.params(), Default::default());
    let mut rng = Rng::new(derive_seed(config.seed, streams::FINETUNE_BATCHES));
    let noise_seed = derive_seed(config.seed, streams::FINETUNE_NOISE);
    let aux = config.finetune_denoising && config.denoising_weight > 0.0;
    // The decoder plays no part in property prediction.
    let trainable = Trainable::Except(vec![crate::model::component::DECODER.into()]);

    let mut log = vec![MaeRecord { epoch: 0, step: 0, mae: evaluate(&model, corpus, &eval, labels, mean, std)? }];
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let mut order = train.clone();
    let mut step = 0;
    'epochs: for epoch in 1.. {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            if step == config.finetune_steps {
                break 'epochs;
            }
            step += 1;
            let lr = config.schedule.lr_at(step);
            let parts: Vec<(LossReport, Vec<Option<Vec<f64>>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let conf = corpus.molecule(i);
                    let target = (labels[i] - mean) / std;
                    let triple = if aux {
                        let seed = derive_seed(noise_seed, (step * config.batch_size + k) as u64);
                        Some(sample_noise_triple(conf, config.sigma, config.lambda, seed)?)
                    } else {
                        None
                    };
                    molecule_gradients(&model, &trainable, |m| {
                        let tape = m.tape();
                        let g = m.encode(tape.constant(coords_tensor(conf.coords())), conf.atomic_numbers())?.pool();
                        let mut loss = mse_var(m.readout(g), tape.scalar(target));
                        let mut report = LossReport::default();
                        if let Some(t) = &triple {
                            let nodes = m.encode(tape.constant(coords_tensor(&t.noised)), conf.atomic_numbers())?;
                            let nsd = mse_var(m.denoise(&nodes), tape.constant(coords_tensor(&t.epsilon)));
                            report.nsd = nsd.item();
                            loss = loss + nsd * config.denoising_weight;
                        }
                        report.total = loss.item();
                        Ok((loss, report))
                    })
                })
                .collect::<Result<_, TrainError>>()?;
            let grads: Vec<_> = parts.into_iter().map(|p| p.1).collect();
            let Some(grads) = mean_gradients(&grads, model.params().len()) else {
                return Err(TrainError::NonFiniteGradient { block: "finetune loss".into(), index: step });
            };
            opt.step(model.params_mut(), &grads, lr)?;
            if step % steps_per_epoch == 0 || step == config.finetune_steps {
                let mae = evaluate(&model, corpus, &eval, labels, mean, std)?;
                log::info!("finetune epoch {epoch} (step {step}): MAE {mae:.5}");
                log.push(MaeRecord { epoch, step, mae });
            }
        }
    }
    Ok(FinetuneRun { model, log, label_mean: mean, label_std: std })
}

pub fn write_mae_csv(path: &Path, log: &[MaeRecord]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,mae\n");
    for r in log {
        let _ = writeln!(out, "{},{:e}", r.epoch, r.mae);
    }
    write_text(path, &out)
}
