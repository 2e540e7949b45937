//! Parses a configuration written with reference training-table key names and
//! shows which settings landed where and which were only acknowledged.
//!
//! cargo run --release --example run_config

use georecon::data::parse_config;

const TEXT: &str = "\
# pretraining setup
batch_size = 50
cutoff_upper = 5
embedding_dimension = 32
lr = 0.0004
lr_schedule = cosine
lr_min = 1e-7
lr_warmup_steps = 100
lr_cosine_length = 2000
num_heads = 8
num_layers = 3
num_rbf = 32
position_noise_scale = 0.04
denoising_weight = 1
precision = 32
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let loaded = parse_config(TEXT)?;
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    println!("{}", serde_json::to_string_pretty(&loaded.config)?);
    match parse_config("num_layer = 3") {
        Err(e) => println!("typo rejected: {e}"),
        Ok(_) => unreachable!("unknown keys never parse"),
    }
    Ok(())
}
