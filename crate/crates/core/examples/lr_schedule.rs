//! Prints the warmup-then-cosine learning-rate curve at a few anchors.
//!
//! cargo run --example lr_schedule

use georecon::train::ScheduleConfig;

fn main() {
    let schedule = ScheduleConfig::default();
    for step in [0, 50, 100, 500, 1000, 1500, 1999, 2000, 5000] {
        println!("step {step:>5}: lr {:.6e}", schedule.lr_at(step));
    }
}
