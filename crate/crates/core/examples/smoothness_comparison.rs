//! Pretrains the same initialization twice, once with denoising alone and
//! once with the reconstruction and clean-alignment terms added, then compares
//! the median local Lipschitz constant of the pooled embedding on held-out
//! molecules.
//!
//! cargo run --release --example smoothness_comparison -- [steps]

use georecon::data::{synth_corpus, SynthConfig};
use georecon::model::{DecoderConfig, EncoderConfig};
use georecon::objectives::LossWeights;
use georecon::probes::{lipschitz_report, PowerMethod};
use georecon::train::{pretrain, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let corpus = synth_corpus(&SynthConfig { seed: 0, ..SynthConfig::default() })?;
    let held_out = synth_corpus(&SynthConfig { n_molecules: 64, seed: 1001, ..SynthConfig::default() })?;
    let base = RunConfig {
        total_steps: steps,
        encoder: EncoderConfig { hidden_dim: 16, num_layers: 2, ..EncoderConfig::default() },
        decoder: DecoderConfig { depth: 3, width: 16 },
        ..RunConfig::default()
    };
    for (name, weights) in [("denoising only", LossWeights::COORD), ("with reconstruction", LossWeights::default())] {
        let run = pretrain(&RunConfig { weights, ..base.clone() }, &corpus)?;
        let report = lipschitz_report(&run.model, held_out.molecules(), &[5, 15, 25], 0, PowerMethod::Krylov)?;
        let at15 = report.summary_at(15).expect("requested");
        println!("{name:>20}: median L {:.4}, p95 {:.4}", at15.median, at15.p95);
    }
    Ok(())
}
