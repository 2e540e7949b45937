//! Pretrains on a synthetic corpus and reports how much the total loss falls
//! between the first and last ten steps.
//!
//! cargo run --release --example pretrain -- [steps]

use georecon::data::{synth_corpus, SynthConfig};
use georecon::train::{pretrain, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let corpus = synth_corpus(&SynthConfig { seed: 0, ..SynthConfig::default() })?;
    let config = RunConfig { total_steps: steps, ..RunConfig::default() };
    let run = pretrain(&config, &corpus)?;

    let mean = |records: &[georecon::train::LossRecord]| records.iter().map(|r| r.losses.total).sum::<f64>() / records.len() as f64;
    let head = mean(&run.log[..10.min(run.log.len())]);
    let tail = mean(&run.log[run.log.len().saturating_sub(11)..]);
    println!("mean loss over the first 10 steps {head:.5}, over the last 11 steps {tail:.5}, ratio {:.3}", tail / head);
    for r in run.log.iter().step_by((steps / 10).max(1)) {
        println!("step {:>5}  lr {:.2e}  nsd {:.5}  rec {:.5}  cln {:.5}", r.step, r.lr, r.losses.nsd, r.losses.rec, r.losses.cln);
    }
    Ok(())
}
