//! Trains the property path at a small learning rate and measures how well the
//! first-order expansion around the initial parameters predicts the change in
//! outputs, alongside how stable the gradient direction stays.
//!
//! cargo run --release --example ntk_check

use georecon::data::{synth_corpus, Split, SynthConfig};
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon};
use georecon::probes::{ntk_check, NtkConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 64, seed: 2, ..SynthConfig::default() })?;
    let train: Vec<usize> = corpus.indices(Split::Train).into_iter().take(16).collect();
    let batch: Vec<_> = train.iter().map(|&i| corpus.molecule(i).clone()).collect();
    let energy = corpus.require_label("energy")?;
    let targets: Vec<f64> = train.iter().map(|&i| energy[i]).collect();
    let model = GeoRecon::new(EncoderConfig { hidden_dim: 32, num_layers: 3, ..Default::default() }, DecoderConfig::default(), 0)?;

    for lr in [1e-4, 1e-2] {
        let report = ntk_check(&model, &batch, &targets, &NtkConfig { lr, ..NtkConfig::default() })?;
        println!("lr {lr:e}: step-0 cosine {}", report.pred_cosine[0]);
        for r in &report.ranges {
            println!("  steps {:>3}-{:<3}  prediction cosine {:.6}  gradient alignment {:.6}", r.start, r.end, r.pred_cosine, r.grad_alignment);
        }
    }
    Ok(())
}
