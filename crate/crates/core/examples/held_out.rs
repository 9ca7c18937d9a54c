//! Runs the held-out-pattern experiment for the baseline and the full
//! objective at a few seeds and prints one line per run.
//!
//! Usage: `cargo run --release -p mafl-core --example held_out -- [seeds] [epochs]`

use std::time::Instant;

use mafl_core::experiment::{run_held_out, HeldOutConfig};
use mafl_core::training::LossToggles;

fn main() -> mafl_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: Option<u32> = args.get(2).and_then(|s| s.parse().ok());
    for seed in 0..seeds {
        for (name, toggles) in [("baseline", LossToggles::ALL_OFF), ("full", LossToggles::ALL_ON)] {
            let mut cfg = HeldOutConfig::with_seed(seed, toggles);
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let t = Instant::now();
            let r = run_held_out(&cfg)?;
            println!(
                "seed {seed} {name:8} in {:.3} held-out {:.3} pattern probe {:.3} content probe {:.3} ({:.1}s)",
                r.in_pattern_acc,
                r.held_out_acc,
                r.pattern_probe.accuracy,
                r.content_probe.accuracy,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
