//! Estimates local Lipschitz constants of the pooled embedding with respect
//! to non-rigid coordinate changes. First validates the estimator on a linear
//! map, whose answer is a singular value, then profiles a model over a corpus.
//!
//! cargo run --release --example lipschitz_probe

use georecon::data::{synth_corpus, SynthConfig};
use georecon::geometry::rigid_basis;
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon};
use georecon::probes::{lipschitz_power, lipschitz_report, FnEmbed, PowerMethod};
use georecon::rng::Rng;
use georecon::tensor::Tensor;
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 32, seed: 5, ..Default::default() })?;
    let mol = corpus.molecule(0);
    let dim = 3 * mol.len();

    // f(x) = x A with a random 3N x 5 matrix; L = largest singular value of P A.
    let mut rng = Rng::new(8);
    let a = Tensor::new([dim, 5], rng.gaussian_vec(dim * 5));
    let weights = a.clone();
    let map = FnEmbed::new(move |tape, x| x.matmul(tape.constant(weights.clone())));
    let estimate = lipschitz_power(&map, mol, 25, 1, PowerMethod::Krylov)?;
    let proj = DMatrix::from_row_slice(dim, dim, &rigid_basis(mol).matrix());
    let dense = DMatrix::from_row_slice(dim, 5, a.data());
    let exact = (proj * dense).singular_values().max();
    println!("linear map: estimate {:.6}, dense SVD {exact:.6}", estimate.value());

    let model = GeoRecon::new(EncoderConfig::default(), DecoderConfig::default(), 0)?;
    let report = lipschitz_report(&model, corpus.molecules(), &[5, 15, 25], 0, PowerMethod::Krylov)?;
    println!("steps   median        p95");
    for s in &report.summary {
        println!("{:>5}   {:.4e}   {:.4e}", s.steps, s.median, s.p95);
    }
    Ok(())
}
