//! Applies random rigid motions to synthetic molecules and measures how far
//! the pooled embedding moves (should not) and how far the noise prediction
//! deviates from rotating along (should not either).
//!
//! cargo run --release --example equivariance

use georecon::data::{synth_corpus, SynthConfig};
use georecon::geometry::{apply_rigid, flatten, random_rotation, rotate_rows};
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon};
use georecon::rng::Rng;
use georecon::tensor::norm;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 20, max_atoms: 10, seed: 3, ..Default::default() })?;
    let model = GeoRecon::new(EncoderConfig::default(), DecoderConfig::default(), 11)?;
    let mut rng = Rng::new(5);
    let (mut worst_g, mut worst_eps) = (0.0_f64, 0.0_f64);
    for mol in corpus.molecules() {
        let g = model.graph_embedding(mol)?;
        let eps = model.predict_noise(mol.coords(), mol.atomic_numbers())?;
        for _ in 0..20 {
            let rotation = random_rotation(&mut rng);
            let shift = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
            let moved = mol.with_coords(apply_rigid(mol.coords(), &rotation, &shift))?;
            worst_g = worst_g.max(rel_err(&g, &model.graph_embedding(&moved)?));
            let expected = rotate_rows(&eps, &rotation);
            let got = model.predict_noise(moved.coords(), moved.atomic_numbers())?;
            worst_eps = worst_eps.max(rel_err(&flatten(&expected), &flatten(&got)));
        }
    }
    println!("max relative change of g under rigid motion:   {worst_g:.2e}");
    println!("max relative equivariance error of the noise head: {worst_eps:.2e}");
    Ok(())
}
