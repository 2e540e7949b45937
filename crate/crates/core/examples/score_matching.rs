//! Fits a small denoiser to a two-center Gaussian mixture and compares its
//! rescaled noise prediction with the mixture's analytic score.
//!
//! cargo run --release --example score_matching

use georecon::score::{score_matching_check, ScoreCheckConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = std::time::Instant::now();
    for seed in 0..3 {
        let report = score_matching_check(&ScoreCheckConfig { seed, ..ScoreCheckConfig::default() })?;
        println!(
            "seed {seed}: mean cosine {:.4}, worst {:.4}, norm ratio {:.3}, final loss {:.2e}",
            report.mean_cosine, report.min_cosine, report.norm_ratio, report.final_loss
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
