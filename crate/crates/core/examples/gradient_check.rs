//! Compares tape gradients of the full pretraining loss against central
//! finite differences, block by block.
//!
//! cargo run --release --example gradient_check

use georecon::ad::check_gradients;
use georecon::data::{synth_corpus, SynthConfig};
use georecon::geometry::sample_noise_triple;
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon, ModelVars};
use georecon::objectives::{pretraining_losses, LossWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 4, max_atoms: 6, seed: 2, ..Default::default() })?;
    let encoder = EncoderConfig { hidden_dim: 16, num_layers: 2, ..Default::default() };
    let model = GeoRecon::new(encoder, DecoderConfig { depth: 3, width: 16 }, 1)?;
    let mol = corpus.molecule(0);
    let triple = sample_noise_triple(mol, 0.04, 1.0, 9)?;
    let weights = LossWeights::default();

    let report = check_gradients(
        |tape, vars| {
            let m = ModelVars::new(&model, tape, vars.to_vec());
            pretraining_losses(&m, mol.atomic_numbers(), &triple, &weights).expect("valid inputs").total
        },
        &model.params().named_tensors(),
        1e-4,
    );
    print!("{report}");
    println!("worst relative error {:.2e}: {}", report.worst_rel_error(), if report.passed() { "ok" } else { "FAILED" });
    Ok(())
}
