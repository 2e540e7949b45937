//! Moves one atom over a square window and shows how far the pooled embedding
//! travels, as a coarse text map. The center is the unperturbed molecule.
//!
//! cargo run --release --example heatmap -- [out.csv]

use georecon::data::{synth_corpus, SynthConfig};
use georecon::model::{DecoderConfig, EncoderConfig, GeoRecon};
use georecon::probes::{heatmap, write_heatmap_csv, HeatmapSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_corpus(&SynthConfig { n_molecules: 4, seed: 6, ..SynthConfig::default() })?;
    let model = GeoRecon::new(EncoderConfig::default(), DecoderConfig::default(), 0)?;
    let spec = HeatmapSpec { resolution: 21, ..HeatmapSpec::new(0) };
    let grid = heatmap(&model, corpus.molecule(0), &spec)?;

    let max = grid.values.iter().copied().fold(0.0, f64::max);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for iv in (0..spec.resolution).rev() {
        let row: String = (0..spec.resolution)
            .map(|iu| shades[((grid.get(iu, iv) / max) * (shades.len() - 1) as f64).round() as usize])
            .collect();
        println!("{row}");
    }
    println!("center {} (exact), max {max:.4}", grid.center());

    if let Some(out) = std::env::args().nth(1) {
        write_heatmap_csv(out.as_ref(), &grid)?;
    }
    Ok(())
}
