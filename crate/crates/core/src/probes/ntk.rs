use std::fmt::Write as _;
use std::path::Path;

use super::{write_text, ProbeError};
use crate::ad::{NodeId, Tape};
use crate::geometry::Conformation;
use crate::model::{coords_tensor, GeoRecon, ParamSet, Trainable};
use crate::tensor::cosine;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NtkConfig {
    pub steps: usize,
    pub lr: f64,
    /// Width of the step ranges the report is summarized over.
    pub range_len: usize,
}

impl Default for NtkConfig {
    fn default() -> Self {
        NtkConfig { steps: 300, lr: 1e-4, range_len: 100 }
    }
}

/// Means over steps `start+1 ..= end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeSummary {
    pub start: usize,
    pub end: usize,
    pub pred_cosine: f64,
    pub grad_alignment: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizationReport {
    /// Entry `t`: cosine between `f(θ_t) − f(θ₀)` and its first-order
    /// prediction `J₀ (θ_t − θ₀)` over the batch. Entry 0 is 1 by convention.
    pub pred_cosine: Vec<f64>,
    /// Entry `t − 1`: cosine between loss gradients at steps `t` and `t − 1`.
    pub grad_alignment: Vec<f64>,
    pub ranges: Vec<RangeSummary>,
    pub diverged_at: Option<usize>,
}

struct Recording {
    tape: Box<Tape>,
    params: Vec<NodeId>,
    output: NodeId,
}

fn record(model: &GeoRecon, conf: &Conformation) -> Result<Recording, ProbeError> {
    let tape = Box::new(Tape::new());
    let (params, output) = {
        let m = model.bind(&tape, &Trainable::All);
        let g = m.encode(tape.constant(coords_tensor(conf.coords())), conf.atomic_numbers())?.pool();
        (m.vars().iter().map(|v| v.id()).collect(), m.readout(g).id())
    };
    Ok(Recording { tape, params, output })
}

impl Recording {
    fn value(&self) -> f64 {
        self.tape.var_by_id(self.output).item()
    }

    fn gradient(&self) -> Vec<Option<Vec<f64>>> {
        let grads = self.tape.backward(self.tape.var_by_id(self.output)).expect("scalar readout");
        let vars: Vec<_> = self.params.iter().map(|&id| self.tape.var_by_id(id)).collect();
        ParamSet::collect_gradients(&vars, &grads)
    }

    /// `⟨∇_θ f(θ₀), Δθ⟩` by one forward tangent sweep.
    fn directional(&self, delta: &[Vec<f64>]) -> Result<f64, ProbeError> {
        let seeds: Vec<_> = self.params.iter().zip(delta).map(|(&id, d)| (self.tape.var_by_id(id), d.as_slice())).collect();
        Ok(self.tape.forward_tangent(&seeds, self.tape.var_by_id(self.output))?[0])
    }
}

/// Trains the property readout path of `model` by full-batch gradient descent
/// on standardized `targets`, comparing the trajectory with the model's
/// linearization around the starting parameters.
pub fn ntk_check(model: &GeoRecon, batch: &[Conformation], targets: &[f64], config: &NtkConfig) -> Result<LinearizationReport, ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyCorpus);
    }
    if batch.len() != targets.len() {
        return Err(ProbeError::InvalidInput(format!("{} molecules for {} targets", batch.len(), targets.len())));
    }
    if config.steps == 0 || config.range_len == 0 {
        return Err(ProbeError::InvalidSteps);
    }
    let (mean, std) = crate::train::label_scale(targets);
    let ys: Vec<f64> = targets.iter().map(|t| (t - mean) / std).collect();

    let initial: Vec<Recording> = batch.iter().map(|c| record(model, c)).collect::<Result<_, _>>()?;
    let f0: Vec<f64> = initial.iter().map(Recording::value).collect();
    let theta0: Vec<Vec<f64>> = model.params().blocks().iter().map(|b| b.value.data().to_vec()).collect();
    let mut current = model.clone();
    let mut pred_cosine = Vec::with_capacity(config.steps + 1);
    let mut grad_alignment = Vec::with_capacity(config.steps);
    let mut previous: Option<Vec<f64>> = None;
    let mut diverged_at = None;
    let n = batch.len() as f64;

    for t in 0..=config.steps {
        let recordings: Vec<Recording> =
            if t == 0 { Vec::new() } else { batch.iter().map(|c| record(&current, c)).collect::<Result<_, _>>()? };
        let live = if t == 0 { &initial } else { &recordings };
        let f: Vec<f64> = live.iter().map(Recording::value).collect();
        if f.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(t);
            break;
        }
        let delta: Vec<Vec<f64>> = current
            .params()
            .blocks()
            .iter()
            .zip(&theta0)
            .map(|(b, p0)| b.value.data().iter().zip(p0).map(|(a, b)| a - b).collect())
            .collect();
        let lin: Vec<f64> = initial.iter().map(|r| r.directional(&delta)).collect::<Result<_, _>>()?;
        let full: Vec<f64> = f.iter().zip(&f0).map(|(a, b)| a - b).collect();
        pred_cosine.push(if t == 0 { 1.0 } else { cosine(&full, &lin) });

        // Loss gradient: Σ 2 (f − y) ∇f / n, flattened over all blocks.
        let mut grad = vec![0.0; current.params().num_scalars()];
        for ((rec, fv), y) in live.iter().zip(&f).zip(&ys) {
            let coef = 2.0 * (fv - y) / n;
            let mut offset = 0;
            for (g, block) in rec.gradient().iter().zip(current.params().blocks()) {
                let len = block.value.numel();
                if let Some(g) = g {
                    grad[offset..offset + len].iter_mut().zip(g).for_each(|(a, b)| *a += coef * b);
                }
                offset += len;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            diverged_at = Some(t);
            break;
        }
        if let Some(prev) = &previous {
            grad_alignment.push(cosine(&grad, prev));
        }
        if t < config.steps {
            let mut offset = 0;
            for i in 0..current.params().len() {
                let block = current.params_mut().value_mut(i).data_mut();
                let len = block.len();
                block.iter_mut().zip(&grad[offset..offset + len]).for_each(|(p, g)| *p -= config.lr * g);
                offset += len;
            }
        }
        previous = Some(grad);
    }

    let last = pred_cosine.len().saturating_sub(1);
    let mean_of = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let ranges = (0..last)
        .step_by(config.range_len)
        .map(|start| {
            let end = (start + config.range_len).min(last);
            RangeSummary {
                start,
                end,
                pred_cosine: mean_of(&pred_cosine[start + 1..=end]),
                grad_alignment: mean_of(&grad_alignment[start.min(grad_alignment.len())..end.min(grad_alignment.len())]),
            }
        })
        .collect();
    Ok(LinearizationReport { pred_cosine, grad_alignment, ranges, diverged_at })
}

/// `step_range,pred_cosine,grad_alignment` rows.
pub fn write_ntk_csv(path: &Path, report: &LinearizationReport) -> Result<(), ProbeError> {
    let mut out = String::from("step_range,pred_cosine,grad_alignment\n");
    for r in &report.ranges {
        let _ = writeln!(out, "{}-{},{:.6},{:.6}", r.start, r.end, r.pred_cosine, r.grad_alignment);
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::model::{DecoderConfig, EncoderConfig};

    #[test]
    fn small_steps_track_the_linearization() {
        let corpus = synth_corpus(&SynthConfig { n_molecules: 6, seed: 8, ..Default::default() }).unwrap();
        let enc = EncoderConfig { hidden_dim: 8, num_layers: 1, num_rbf: 6, ..Default::default() };
        let model = GeoRecon::new(enc, DecoderConfig { depth: 2, width: 8 }, 1).unwrap();
        let cfg = NtkConfig { steps: 20, lr: 1e-3, range_len: 10 };
        let rep = ntk_check(&model, corpus.molecules(), corpus.label("energy").unwrap(), &cfg).unwrap();
        assert_eq!(rep.pred_cosine[0], 1.0);
        assert_eq!(rep.pred_cosine.len(), 21);
        assert_eq!(rep.grad_alignment.len(), 20);
        assert_eq!(rep.ranges.len(), 2);
        assert!(rep.ranges[0].pred_cosine > 0.99, "{:?}", rep.ranges);
        assert!(rep.pred_cosine.iter().chain(&rep.grad_alignment).all(|c| (-1.0..=1.0 + 1e-12).contains(c)));
        assert!(rep.diverged_at.is_none());
    }
}
