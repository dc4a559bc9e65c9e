//! Build a small dataset, fit it, then replay the held-out day cycle by
//! cycle and print what an operator would see at each bin of the morning
//! peak, including a what-if at 08:00.
//!
//!     cargo run --release --example replay_day [-- OUT_DIR]

use std::path::PathBuf;

use chrono::Duration;
use metrocast::config::ServiceConfig;
use metrocast::decisions::{GateClosurePlan, Handling};
use metrocast::engine::{replay, MemoryFeed};
use metrocast::pipeline::{self, GenerateOptions};
use metrocast::StationId;

fn main() -> metrocast::Result<()> {
    let dir =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("metrocast-replay"));
    let opts = GenerateOptions { days: 15, scale: 0.5, ..GenerateOptions::default() };
    let ds = pipeline::generate_dataset(&dir, &opts)?;
    let cfg = ServiceConfig::load(&ds.config_path)?;
    pipeline::fit_models(&cfg)?;

    let mut engine = pipeline::build_engine(&cfg)?;
    let (taps, positions) = pipeline::replay_inputs(&cfg, engine.topology())?;
    let (from, to) = pipeline::replay_window(&cfg)?;
    let topology = engine.topology().clone();
    let watch = StationId::from("S4");

    println!("cycle  obs(S4)  h1     h2     cluster  alerts");
    let out = replay(&mut engine, &mut MemoryFeed::new(taps), &mut MemoryFeed::new(positions), from, to, |snap, _| {
        let t = snap.cycle_time.time();
        if t < "07:00:00".parse().unwrap() || t > "09:30:00".parse().unwrap() {
            return Ok(());
        }
        let s = snap.station(&watch).expect("watched station");
        let obs: u32 = s.observed.iter().map(|b| b.count).sum();
        let h: Vec<f64> = s.arrivals.iter().map(|a| a.clamped_point).collect();
        println!(
            "{}  {obs:>7}  {:>5.0}  {:>5.0}  {:>7}  {}",
            t.format("%H:%M"),
            h[0],
            h[1],
            s.classification.cluster_id,
            snap.alerts.len()
        );
        if t == "08:00:00".parse().unwrap() {
            let plan = GateClosurePlan {
                station: "S3".into(),
                start: snap.cycle_time,
                end: snap.cycle_time + Duration::minutes(15),
                handling: Handling::Defer,
                target: Some(watch.clone()),
            };
            let w = snap.whatif(&topology, &plan)?;
            println!(
                "       what-if: close S3 08:00-08:15, {watch} improvement {:.0}, {} passengers held",
                w.target_station_improvement, w.transform.affected
            );
        }
        Ok(())
    })?;
    println!("\n{} cycles\n", out.snapshots.len());
    print!("{}", out.report.render());
    Ok(())
}
