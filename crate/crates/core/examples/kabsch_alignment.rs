//! Superposes a rotated, shifted and perturbed copy of a molecule back onto
//! the original, then checks that alignment never increases the distance to
//! a perturbed copy.
//!
//! cargo run --release --example kabsch_alignment

use georecon::data::{synth_corpus, SynthConfig};
use georecon::geometry::{apply_rigid, kabsch_align, procrustes_distance, random_rotation, Vec3};
use georecon::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 8, seed: 4, ..Default::default() })?;
    let mut rng = Rng::new(21);
    let mol = corpus.molecule(0);

    let rotation = random_rotation(&mut rng);
    let moved = apply_rigid(mol.coords(), &rotation, &[3.0, -1.0, 0.5]);
    let fit = kabsch_align(mol.coords(), &moved)?;
    println!("rigid copy: aligned distance {:.2e}", fit.distance);

    let mut violations = 0;
    for mol in corpus.molecules() {
        for _ in 0..100 {
            let noise: Vec<Vec3> = mol.coords().iter().map(|_| [0, 1, 2].map(|_| 0.1 * rng.gaussian())).collect();
            let noised: Vec<Vec3> = mol.coords().iter().zip(&noise).map(|(r, e)| [0, 1, 2].map(|k| r[k] + e[k])).collect();
            let raw = noise.iter().flatten().map(|e| e * e).sum::<f64>().sqrt();
            if procrustes_distance(mol.coords(), &noised)? > raw {
                violations += 1;
            }
        }
    }
    println!("aligned distance exceeded the raw noise norm {violations} times out of {}", corpus.len() * 100);
    Ok(())
}
