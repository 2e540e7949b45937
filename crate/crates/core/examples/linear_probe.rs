//! Fits a linear head on frozen pooled embeddings, once from a pretrained
//! encoder and once from a random one, and prints both learning curves.
//!
//! cargo run --release --example linear_probe

use georecon::data::{synth_corpus, SynthConfig};
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon};
use georecon::train::{linear_probe, pretrain, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { seed: 0, ..SynthConfig::default() })?;
    let config = RunConfig {
        total_steps: 1000,
        encoder: EncoderConfig { hidden_dim: 16, num_layers: 2, ..EncoderConfig::default() },
        decoder: DecoderConfig { depth: 3, width: 16 },
        ..RunConfig::default()
    };
    let pretrained = pretrain(&config, &corpus)?.model;
    let random = GeoRecon::new(config.encoder.clone(), config.decoder.clone(), 99)?;
    let warm = linear_probe(&config, &pretrained, &corpus)?;
    let cold = linear_probe(&config, &random, &corpus)?;
    println!("epoch   pretrained   random");
    for (w, c) in warm.curve.iter().zip(&cold.curve).step_by(30) {
        println!("{:>5}   {:>10.4}   {:>6.4}", w.epoch, w.mae, c.mae);
    }
    println!("final   {:>10.4}   {:>6.4}", warm.final_mae(), cold.final_mae());
    Ok(())
}
