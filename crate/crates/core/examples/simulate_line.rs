//! Run the line simulator on a hand-built morning peak and print platform
//! queues, left-behind counts and alerts; optionally write the CSV outputs.
//!
//!     cargo run --example simulate_line [-- OUT_DIR]

use std::fs::File;
use std::path::PathBuf;

use metrocast::decisions::{denial_probability_ensemble, detect_hotspots, Thresholds};
use metrocast::ingest::synthetic::demo_line;
use metrocast::mesosim::{self, ArrivalMode, Demand, SimConfig};

fn main() -> metrocast::Result<()> {
    let (topology, _) = demo_line();
    let n = topology.len();
    let mut config = SimConfig::new(topology.clone(), 3600);
    config.start = "2013-02-05T08:00:00".parse().unwrap();
    config.first_bin = 32;
    config.seed = 11;

    // everyone rides toward the centre, heavier in the second bin
    let mut demand = Demand::zeros(n, 4);
    for (b, scale) in [1.0, 2.2, 1.4, 0.8].into_iter().enumerate() {
        for o in 0..n / 2 {
            for d in (o + 1)..n {
                demand.set(b, o, d, 400.0 * scale / (d - o) as f64)?;
            }
        }
    }

    let sim = mesosim::run(&config, &demand, config.default_trains())?;
    println!("{} departures, totals {:?} balanced={}", sim.departures.len(), sim.totals, sim.totals.balanced());
    println!("\nstation  bin  arrivals  wait_avg  wait_max  left_behind");
    for s in topology.stations().iter().take(4) {
        for row in sim.station_rows(s) {
            println!(
                "{:<7} {:>4} {:>9} {:>9.1} {:>9} {:>12}",
                s.as_str(),
                row.bin,
                row.arrivals,
                row.waiting_avg,
                row.waiting_max,
                row.left_behind
            );
        }
    }

    let thresholds = Thresholds { platform_occupancy: 600.0, left_behind: 100.0 };
    let alerts = detect_hotspots(&sim, &thresholds)?;
    println!("\n{} alerts", alerts.len());
    for a in alerts.iter().take(8) {
        println!("  {} bin {} {:?} {:.0} (threshold {:.0})", a.station, a.bin, a.metric, a.value, a.threshold);
    }

    config.arrival_mode = ArrivalMode::PoissonSample;
    let runs = mesosim::run_ensemble(&config, &demand, &config.default_trains(), 50)?;
    let s3 = topology.stations()[2].clone();
    let d = denial_probability_ensemble(&runs, &s3, 33)?;
    println!("\nP(left behind at {s3}, bin 33) over 50 sampled runs: {:.2}", d.probability);

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        std::fs::create_dir_all(&dir)?;
        sim.write_platform_csv(File::create(dir.join("platforms.csv"))?)?;
        sim.write_trains_csv(File::create(dir.join("trains.csv"))?)?;
        println!("wrote platforms.csv and trains.csv to {}", dir.display());
    }
    Ok(())
}
