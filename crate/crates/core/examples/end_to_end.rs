//! Generate 30 training days plus one held-out day for the demo line, fit
//! models, replay the held-out day and print the accuracy report.
//!
//!     cargo run --release --example end_to_end [-- OUT_DIR]

use std::path::PathBuf;
use std::time::Instant;

use metrocast::config::ServiceConfig;
use metrocast::pipeline::{self, GenerateOptions};

fn main() -> metrocast::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("metrocast-demo"));
    let t = Instant::now();
    let ds = pipeline::generate_dataset(&dir, &GenerateOptions::default())?;
    println!("generated {} taps into {} ({:.1?})", ds.taps, dir.display(), t.elapsed());

    let cfg = ServiceConfig::load(&ds.config_path)?;
    let t = Instant::now();
    let fit = pipeline::fit_models(&cfg)?;
    println!("fitted {} stations on {} days ({:.1?})", fit.stations.len(), fit.training_days.len(), t.elapsed());

    let t = Instant::now();
    let out = pipeline::replay_dataset(&cfg)?;
    println!("replayed {} cycles ({:.1?})\n", out.snapshots.len(), t.elapsed());
    print!("{}", out.report.render());
    Ok(())
}
