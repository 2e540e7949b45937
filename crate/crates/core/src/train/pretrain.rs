use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{write_text, OptimizerState, RunConfig, TrainError};
use crate::ad::{Tape, Var};
use crate::data::{Corpus, Split};
use crate::geometry::sample_noise_triple;
use crate::model::{GeoRecon, ModelVars, ParamSet, Trainable};
use crate::objectives::{pretraining_losses, LossReport};
use crate::rng::{derive_seed, Rng};

/// Seed streams of a run, kept apart so changing one consumer never shifts
/// another's draws.
/// Child-seed indices under [`RunConfig::seed`](super::RunConfig::seed); each
/// random stream of a run draws from its own child.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const BATCHES: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const READOUT: u64 = 3;
    pub const FINETUNE_BATCHES: u64 = 4;
    pub const FINETUNE_NOISE: u64 = 5;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub losses: LossReport,
}

#[derive(Clone, Debug)]
pub struct PretrainRun {
    /// The trained model, or the last finite one if the run diverged.
    pub model: GeoRecon,
    pub log: Vec<LossRecord>,
    /// Step at which the loss or a gradient stopped being finite.
    pub diverged_at: Option<usize>,
}

/// One molecule's loss and parameter gradients, each on a private tape.
pub(crate) fn molecule_gradients<F>(model: &GeoRecon, trainable: &Trainable, f: F) -> Result<(LossReport, Vec<Option<Vec<f64>>>), TrainError>
where
    F: for<'m, 't> Fn(&ModelVars<'m, 't>) -> Result<(Var<'t>, LossReport), TrainError>,
{
    let tape = Tape::new();
    let m = model.bind(&tape, trainable);
    let (loss, report) = f(&m)?;
    if !loss.item().is_finite() {
        return Ok((report, Vec::new()));
    }
    let grads = tape.backward(loss).expect("scalar loss on its own tape");
    Ok((report, ParamSet::collect_gradients(m.vars(), &grads)))
}

/// Averages per-molecule gradients in a fixed order. Returns `None` when a
/// molecule's loss was not finite.
pub(crate) fn mean_gradients(parts: &[Vec<Option<Vec<f64>>>], num_blocks: usize) -> Option<Vec<Option<Vec<f64>>>> {
    if parts.iter().any(Vec::is_empty) {
        return None;
    }
    let scale = 1.0 / parts.len() as f64;
    let mut acc: Vec<Option<Vec<f64>>> = vec![None; num_blocks];
    for part in parts {
        for (slot, g) in acc.iter_mut().zip(part) {
            let Some(g) = g else { continue };
            match slot {
                Some(a) => a.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g.clone()),
            }
        }
    }
    for a in acc.iter_mut().flatten() {
        a.iter_mut().for_each(|x| *x *= scale);
    }
    Some(acc)
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport { nsd: sum(|r| r.nsd), rec: sum(|r| r.rec), cln: sum(|r| r.cln), total: sum(|r| r.total) }
}

/// Pretrains a fresh model on the training split.
///
/// Each step draws `batch_size` molecules with replacement, builds one noise
/// triple per molecule, and averages the per-molecule weighted totals.
pub fn pretrain(config: &RunConfig, corpus: &Corpus) -> Result<PretrainRun, TrainError> {
    config.validate()?;
    let model = GeoRecon::new(config.encoder.clone(), config.decoder.clone(), derive_seed(config.seed, streams::INIT))?;
    pretrain_from(config, corpus, model)
}

/// As [`pretrain`], continuing from an existing model.
pub fn pretrain_from(config: &RunConfig, corpus: &Corpus, mut model: GeoRecon) -> Result<PretrainRun, TrainError> {
    config.validate()?;
    let train = corpus.indices(Split::Train);
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    let mut opt = OptimizerState::new(model.params(), Default::default());
    let mut batch_rng = Rng::new(derive_seed(config.seed, streams::BATCHES));
    let noise_seed = derive_seed(config.seed, streams::NOISE);
    let mut log = Vec::with_capacity(config.total_steps);

    for step in 1..=config.total_steps {
        let lr = config.schedule.lr_at(step);
        let batch: Vec<(usize, u64)> = (0..config.batch_size)
            .map(|k| (train[batch_rng.below(train.len())], derive_seed(noise_seed, (step * config.batch_size + k) as u64)))
            .collect();
        let results: Vec<(LossReport, Vec<Option<Vec<f64>>>)> = batch
            .par_iter()
            .map(|&(i, seed)| {
                let conf = corpus.molecule(i);
                let triple = sample_noise_triple(conf, config.sigma, config.lambda, seed)?;
                molecule_gradients(&model, &Trainable::All, |m| {
                    let l = pretraining_losses(m, conf.atomic_numbers(), &triple, &config.weights)?;
                    Ok((l.total, l.report()))
                })
            })
            .collect::<Result<_, TrainError>>()?;
        let (reports, parts): (Vec<LossReport>, Vec<_>) = results.into_iter().unzip();
        let losses = mean_report(&reports);
        let grads = mean_gradients(&parts, model.params().len());
        let stepped = match grads {
            Some(g) if losses.total.is_finite() => opt.step(model.params_mut(), &g, lr),
            _ => Err(TrainError::NonFiniteGradient { block: "loss".into(), index: 0 }),
        };
        if let Err(e) = stepped {
            log::warn!("pretraining diverged at step {step}: {e}");
            return Ok(PretrainRun { model, log, diverged_at: Some(step) });
        }
        if step == 1 || step % 100 == 0 || step == config.total_steps {
            log::info!("step {step}: total {:.5} (nsd {:.5}, rec {:.5}, cln {:.5})", losses.total, losses.nsd, losses.rec, losses.cln);
        }
        log.push(LossRecord { step, lr, losses });
    }
    Ok(PretrainRun { model, log, diverged_at: None })
}

pub fn write_loss_csv(path: &Path, log: &[LossRecord]) -> Result<(), TrainError> {
    let mut out = String::from("step,lr,loss_nsd,loss_rec,loss_cln,loss_total\n");
    for r in log {
        let l = &r.losses;
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", r.step, r.lr, l.nsd, l.rec, l.cln, l.total);
    }
    write_text(path, &out)
}
