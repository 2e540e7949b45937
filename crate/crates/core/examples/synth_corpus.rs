//! Generates a relaxed Lennard-Jones corpus, reports its label statistics and
//! writes it as labelled XYZ.
//!
//! cargo run --release --example synth_corpus -- [out.xyz]

use georecon::data::{synth_corpus, Split, SynthConfig, ToyPotential};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig { n_molecules: 64, seed: 7, ..SynthConfig::default() };
    let corpus = synth_corpus(&config)?;
    let potential = ToyPotential::default();

    let sizes: Vec<usize> = corpus.molecules().iter().map(|m| m.len()).collect();
    let worst_force = corpus
        .molecules()
        .iter()
        .map(|m| {
            let (_, forces) = potential.energy_forces(m.atomic_numbers(), m.coords())?;
            Ok(forces.iter().flatten().fold(0.0_f64, |a, f| a.max(f.abs())))
        })
        .collect::<Result<Vec<f64>, georecon::data::SynthError>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("{} molecules, {}..={} atoms", corpus.len(), sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    println!("largest residual force component: {worst_force:.2e}");
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split}: {} molecules", corpus.indices(split).len());
    }
    let energy = corpus.require_label("energy")?;
    let mean = energy.iter().sum::<f64>() / energy.len() as f64;
    println!("mean energy {mean:.4}, first dipole {:.4}", corpus.require_label("dipole")?[0]);

    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("synth_corpus.xyz").display().to_string());
    corpus.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
