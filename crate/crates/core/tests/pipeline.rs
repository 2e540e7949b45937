//! Driver-level contracts: reproducibility, checkpoint fidelity, frozen
//! encoders, and the equilibrium premise of the synthetic corpus.

use georecon::data::{synth_corpus, SynthConfig, ToyPotential};
use georecon::model::{load_checkpoint, save_checkpoint, Checkpoint, DecoderConfig, EncoderConfig};
use georecon::train::{finetune, linear_probe, pretrain, RunConfig};

fn config() -> RunConfig {
    RunConfig {
        seed: 4,
        total_steps: 15,
        finetune_steps: 12,
        batch_size: 4,
        encoder: EncoderConfig { hidden_dim: 8, num_layers: 2, num_rbf: 8, ..EncoderConfig::default() },
        decoder: DecoderConfig { depth: 2, width: 8 },
        probe_epochs: 20,
        ..RunConfig::default()
    }
}

#[test]
fn repeated_runs_are_identical() {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 24, seed: 2, ..SynthConfig::default() }).unwrap();
    let cfg = RunConfig { finetune_denoising: true, ..config() };
    let (a, b) = (pretrain(&cfg, &corpus).unwrap(), pretrain(&cfg, &corpus).unwrap());
    assert_eq!(a.log, b.log);
    assert_eq!(Checkpoint { model: a.model.clone(), dataset: None }.to_bytes(), Checkpoint { model: b.model, dataset: None }.to_bytes());
    let (fa, fb) = (finetune(&cfg, &a.model, &corpus).unwrap(), finetune(&cfg, &a.model, &corpus).unwrap());
    assert_eq!(fa.log, fb.log);
    assert_eq!(fa.model.params(), fb.model.params());
}

#[test]
fn checkpoint_reload_evaluates_bitwise_equal() {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 12, seed: 3, ..SynthConfig::default() }).unwrap();
    let model = pretrain(&config(), &corpus).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &Checkpoint { model: model.clone(), dataset: Some("corpus.xyz".into()) }).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.dataset.as_deref(), Some("corpus.xyz"));
    for mol in corpus.molecules() {
        assert_eq!(model.graph_embedding(mol).unwrap(), loaded.model.graph_embedding(mol).unwrap());
        assert_eq!(model.predict_property(mol).unwrap().to_bits(), loaded.model.predict_property(mol).unwrap().to_bits());
    }
}

#[test]
fn linear_probe_leaves_the_encoder_untouched() {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 20, seed: 5, ..SynthConfig::default() }).unwrap();
    let model = pretrain(&config(), &corpus).unwrap().model;
    let before = model.params().clone();
    let run = linear_probe(&config(), &model, &corpus).unwrap();
    assert_eq!(model.params(), &before);
    assert_eq!(run.curve.len(), 21);
    assert!(run.final_mae() < run.curve[0].mae);
}

#[test]
fn synthetic_molecules_sit_at_force_equilibrium() {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 200, max_atoms: 12, seed: 8, ..SynthConfig::default() }).unwrap();
    let potential = ToyPotential::default();
    let relaxed = corpus
        .molecules()
        .iter()
        .filter(|m| {
            let (_, forces) = potential.energy_forces(m.atomic_numbers(), m.coords()).unwrap();
            forces.iter().flatten().all(|f| f.abs() < 1e-3)
        })
        .count();
    assert!(relaxed * 100 >= 99 * corpus.len(), "{relaxed} of {} relaxed", corpus.len());
}
