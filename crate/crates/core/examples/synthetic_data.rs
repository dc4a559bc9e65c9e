//! Generate a week of synthetic AFC taps for the demo line and summarise
//! entries per station and day.
//!
//!     cargo run --example synthetic_data [-- taps.csv]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use metrocast::ingest::synthetic::demo_line;
use metrocast::ingest::{build_all_profiles, generate_days, write_afc};

fn main() -> metrocast::Result<()> {
    let (topology, spec) = demo_line();
    let clock = spec.clock()?;
    let first = NaiveDate::from_ymd_opt(2013, 2, 4).unwrap();
    let taps = generate_days(&spec, first, 7, 42)?;
    println!("{} taps over 7 days on {} stations", taps.len(), topology.len());

    let profiles = build_all_profiles(&taps, &topology, &clock);
    let days: Vec<NaiveDate> = profiles.values().next().unwrap().iter().map(|p| p.service_day).collect();
    print!("{:<8}", "station");
    for d in &days {
        print!("{:>9}", d.format("%a %d"));
    }
    println!();
    for (station, per_day) in &profiles {
        print!("{:<8}", station.as_str());
        for p in per_day {
            print!("{:>9}", p.total());
        }
        println!();
    }

    // busiest bin of the Monday at each station
    let mut peaks = BTreeMap::new();
    for (station, per_day) in &profiles {
        let (bin, count) = per_day[0].counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap();
        peaks.insert(station.as_str(), (bin, *count));
    }
    println!("\nMonday peak bin per station: {peaks:?}");

    if let Some(path) = std::env::args().nth(1) {
        write_afc(std::io::BufWriter::new(std::fs::File::create(&path)?), &taps)?;
        println!("wrote {path}");
    }
    Ok(())
}
