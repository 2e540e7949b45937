//! Sweeps reconstruction noise scale against decoder depth, then the
//! clean-alignment weight, pretraining and finetuning once per cell.
//!
//! cargo run --release --example ablation_grid

use georecon::data::{synth_corpus, SynthConfig};
use georecon::model::{DecoderConfig, EncoderConfig};
use georecon::train::{ablation_grid, AblationAxis, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 64, seed: 1, ..SynthConfig::default() })?;
    let base = RunConfig {
        total_steps: 100,
        finetune_steps: 50,
        encoder: EncoderConfig { hidden_dim: 16, num_layers: 2, ..EncoderConfig::default() },
        decoder: DecoderConfig { depth: 3, width: 16 },
        ..RunConfig::default()
    };
    let grids = [
        vec![AblationAxis::Lambda(vec![1.0, 1.5]), AblationAxis::DecoderDepth(vec![3, 4, 5])],
        vec![AblationAxis::CleanWeight(vec![0.1, 0.0])],
    ];
    for axes in &grids {
        println!("lambda  depth  w_rec  w_cln  pretrain_loss  finetune_mae");
        for row in ablation_grid(&base, &corpus, axes)? {
            println!(
                "{:>6}  {:>5}  {:>5}  {:>5}  {:>13.5}  {:>12.4}",
                row.lambda, row.decoder_depth, row.w_rec, row.w_cln, row.pretrain_loss, row.finetune_mae
            );
        }
    }
    Ok(())
}
