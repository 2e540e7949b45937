use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::finetune::evaluation_indices;
use super::{label_scale, write_text, RunConfig, ScheduleConfig, TrainError};
use crate::data::{Corpus, Split};
use crate::model::GeoRecon;
use crate::tensor::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub mae: f64,
    /// `‖w‖₂` of the head acting on raw (unstandardized) features, in label
    /// units per feature unit.
    pub weight_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRun {
    pub curve: Vec<ProbeRecord>,
    /// Head on raw features: `y ≈ ⟨weights, g⟩ + bias`.
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ProbeRun {
    pub fn final_mae(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |r| r.mae)
    }
}

/// Linear probe on the frozen pooled embeddings of `model`. The model is only
/// read, never updated.
pub fn linear_probe(config: &RunConfig, model: &GeoRecon, corpus: &Corpus) -> Result<ProbeRun, TrainError> {
    config.validate()?;
    let labels = corpus.require_label(&config.target)?;
    let features: Vec<Vec<f64>> = corpus
        .molecules()
        .par_iter()
        .map(|m| model.graph_embedding(m))
        .collect::<Result<_, _>>()?;
    let train = corpus.indices(Split::Train);
    let eval = evaluation_indices(corpus);
    linear_probe_features(&features, labels, &train, &eval, config.probe_epochs, config.probe_lr)
}

/// Full-batch Adam on `(w, b)` with a cosine-decayed learning rate. Features
/// and labels are standardized with training statistics; the reported head
/// and MAE are mapped back to raw units.
pub fn linear_probe_features(
    features: &[Vec<f64>],
    labels: &[f64],
    train: &[usize],
    eval: &[usize],
    epochs: usize,
    lr: f64,
) -> Result<ProbeRun, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if features.len() != labels.len() {
        return Err(TrainError::InvalidConfig(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let d = features[train[0]].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(TrainError::InvalidConfig(format!("feature width {} differs from {d}", bad.len())));
    }
    let (y_mean, y_std) = label_scale(&train.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let scales: Vec<(f64, f64)> =
        (0..d).map(|j| label_scale(&train.iter().map(|&i| features[i][j]).collect::<Vec<_>>())).collect();
    let standardize = |f: &[f64]| -> Vec<f64> { f.iter().zip(&scales).map(|(x, (m, s))| (x - m) / s).collect() };
    let xs: Vec<Vec<f64>> = features.iter().map(|f| standardize(f)).collect();
    let ys: Vec<f64> = labels.iter().map(|y| (y - y_mean) / y_std).collect();

    // Raw-unit head: y = y_std·(⟨w, (g − m)/s⟩ + b) + y_mean.
    let raw_head = |w: &[f64], b: f64| -> (Vec<f64>, f64) {
        let wr: Vec<f64> = w.iter().zip(&scales).map(|(wj, (_, s))| y_std * wj / s).collect();
        let offset: f64 = w.iter().zip(&scales).map(|(wj, (m, s))| wj * m / s).sum();
        (wr, y_std * (b - offset) + y_mean)
    };
    let mae = |w: &[f64], b: f64| -> f64 {
        eval.iter().map(|&i| ((dot(w, &xs[i]) + b) * y_std + y_mean - labels[i]).abs()).sum::<f64>() / eval.len().max(1) as f64
    };

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut curve = vec![ProbeRecord { epoch: 0, mae: mae(&w, b), weight_norm: 0.0 }];
    let schedule = ScheduleConfig { peak_lr: lr, lr_min: lr * 1e-3, warmup_steps: 0, cosine_length: epochs.max(1) };
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let n = train.len() as f64;
    for epoch in 1..=epochs {
        let mut grad = vec![0.0; d + 1];
        for &i in train {
            let r = dot(&w, &xs[i]) + b - ys[i];
            for (g, x) in grad.iter_mut().zip(&xs[i]) {
                *g += 2.0 * r * x / n;
            }
            grad[d] += 2.0 * r / n;
        }
        let step_lr = schedule.lr_at(epoch - 1);
        let (c1, c2) = (1.0 - beta1.powi(epoch as i32), 1.0 - beta2.powi(epoch as i32));
        for k in 0..=d {
            m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
            let delta = step_lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            if k < d {
                w[k] -= delta;
            } else {
                b -= delta;
            }
        }
        curve.push(ProbeRecord { epoch, mae: mae(&w, b), weight_norm: norm(&raw_head(&w, b).0) });
    }
    let (weights, bias) = raw_head(&w, b);
    Ok(ProbeRun { curve, weights, bias })
}

/// `epoch,mae,weight_norm` rows.
pub fn write_probe_csv(path: &Path, curve: &[ProbeRecord]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,mae,weight_norm\n");
    for r in curve {
        let _ = writeln!(out, "{},{:e},{:e}", r.epoch, r.mae, r.weight_norm);
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_equal_to_the_label_are_fit_exactly() {
        let labels: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0 - 1.0).collect();
        let features: Vec<Vec<f64>> = labels.iter().map(|y| vec![*y, 0.5]).collect();
        let train: Vec<usize> = (0..30).collect();
        let eval: Vec<usize> = (30..40).collect();
        let run = linear_probe_features(&features, &labels, &train, &eval, 500, 0.05).unwrap();
        assert!(run.final_mae() < 1e-3, "{}", run.final_mae());
        assert!((run.weights[0] - 1.0).abs() < 1e-2);
        assert!((run.curve.last().unwrap().weight_norm - 1.0).abs() < 1e-2);
        let pred = dot(&run.weights, &features[35]) + run.bias;
        assert!((pred - labels[35]).abs() < 1e-2);
    }

    #[test]
    fn zero_epochs_predicts_the_training_mean() {
        let labels = vec![1.0, 3.0, 5.0];
        let features = vec![vec![0.0], vec![1.0], vec![2.0]];
        let run = linear_probe_features(&features, &labels, &[0, 1], &[2], 0, 0.1).unwrap();
        assert_eq!(run.curve.len(), 1);
        assert_eq!(run.final_mae(), 3.0);
    }
}
