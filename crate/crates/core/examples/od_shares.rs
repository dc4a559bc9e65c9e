//! Estimate destination shares at one origin from linked journeys, split an
//! arrival forecast over destinations, then adapt the shares online to a
//! day where most riders head to the end of the line.
//!
//!     cargo run --example od_shares

use chrono::{Duration, NaiveDate};
use metrocast::forecast::{ArrivalForecast, Horizon, Prediction};
use metrocast::ingest::synthetic::demo_line;
use metrocast::ingest::{generate_days, link_journeys, Journey, LinkOptions};
use metrocast::od::{estimate_shares, forecast_od};
use metrocast::StationId;

fn main() -> metrocast::Result<()> {
    let (topology, spec) = demo_line();
    let clock = spec.clock()?;
    let origin = StationId::from("S3");
    let first = NaiveDate::from_ymd_opt(2013, 2, 4).unwrap();
    let taps = generate_days(&spec, first, 14, 5)?;
    let linked = link_journeys(&taps, LinkOptions::default());
    println!("{} journeys linked, {} taps unlinked", linked.journeys.len(), linked.unlinked.len());

    let table = estimate_shares(&linked.journeys, &origin, &topology, &clock, 4, 1.0)?;
    let bin = clock.bin_of(first.and_hms_opt(8, 0, 0).unwrap());
    let period = table.period_for(bin.index)?;
    println!("\n{origin} shares for bins {:?} from {:.0} journeys:", period.period, period.total_count());
    for (dest, s) in period.shares() {
        println!("  -> {dest}  {s:.3}");
    }

    let arrival = ArrivalForecast::new(
        origin.clone(),
        bin.prev(),
        Horizon::One,
        Prediction { point: 240.0, variance: 100.0, clamped_point: 240.0 },
        220.0,
    );
    let od = forecast_od(&arrival, period)?;
    let flows: Vec<String> = od.flows.iter().map(|(d, f)| format!("{d} {f:.1}")).collect();
    println!("\n240 forecast entries split as: {}", flows.join(", "));
    println!("sum of flows {:.1}", od.flows.values().sum::<f64>());

    // a concert at the terminus: every rider in this bin goes to S8
    let t = first + Duration::days(14);
    let surge: Vec<Journey> = (0..300)
        .map(|i| {
            let entry = t.and_hms_opt(8, 0, 0).unwrap() + Duration::seconds(i);
            Journey {
                card_id: format!("fan{i}"),
                origin: origin.clone(),
                destination: "S8".into(),
                entry_time: entry,
                exit_time: entry + Duration::minutes(12),
            }
        })
        .collect();
    println!("\nS8 share after each online update of 300 surge journeys:");
    for lambda in [1.0, 0.5] {
        let mut t = table.clone();
        let mut seen = Vec::new();
        for _ in 0..3 {
            t.update_online(bin.index, &surge, lambda)?;
            seen.push(format!("{:.3}", t.period_for(bin.index)?.share(&"S8".into()).unwrap_or(0.0)));
        }
        println!("  lambda {lambda}: {}", seen.join(" -> "));
    }
    Ok(())
}
