//! Cluster three weeks of daily entry profiles at one station, then classify
//! a new day from its first few bins as they come in.
//!
//!     cargo run --example cluster_days

use chrono::{Duration, NaiveDate};
use metrocast::ingest::synthetic::demo_line;
use metrocast::ingest::{build_daily_profiles, generate_days};
use metrocast::patterns::{classify_partial, cluster_days, ClusterOptions};
use metrocast::StationId;

fn main() -> metrocast::Result<()> {
    let (_, spec) = demo_line();
    let clock = spec.clock()?;
    let station = StationId::from("S1");
    let first = NaiveDate::from_ymd_opt(2013, 2, 4).unwrap();
    let taps = generate_days(&spec, first, 21, 7)?;
    let profiles = build_daily_profiles(&taps, &station, &clock);

    let set = cluster_days(&profiles, &ClusterOptions::default())?;
    println!("{station}: k = {} clusters, days per cluster {:?}", set.k, set.day_count);
    for (day, c) in &set.members {
        println!("  {} {}  cluster {c}", day, day.format("%a"));
    }

    let new_day = first + Duration::days(28);
    let new_taps = generate_days(&spec, new_day, 1, 99)?;
    let counts: Vec<f64> = build_daily_profiles(&new_taps, &station, &clock)[0].as_f64();
    println!("\nclassifying {} ({}) as its bins arrive:", new_day, new_day.format("%A"));
    for n in [4, 24, 28, 32, 36, 48] {
        let c = classify_partial(&counts[..n], &set)?;
        let d: Vec<String> = c.distances.iter().map(|d| format!("{d:.1}")).collect();
        println!("  after {n:>2} bins -> cluster {} (distances {})", c.cluster_id, d.join(", "));
    }
    Ok(())
}
