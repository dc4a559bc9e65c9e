//! Fit the state-space arrival model for one station and walk a held-out
//! day bin by bin, printing one- and two-step forecasts next to the count
//! and the historical average.
//!
//!     cargo run --example kalman_forecast

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use metrocast::forecast::{filter_update, fit_mle, predict, FilterState, FitOptions, Horizon};
use metrocast::ingest::synthetic::demo_line;
use metrocast::ingest::{build_daily_profiles, generate_days, EventCalendar};
use metrocast::models::cluster_series;
use metrocast::patterns::{cluster_days, ClusterOptions};
use metrocast::{StationId, TimeBin};

fn main() -> metrocast::Result<()> {
    let (topology, spec) = demo_line();
    let clock = spec.clock()?;
    let station = StationId::from("S2");
    let first = NaiveDate::from_ymd_opt(2013, 2, 4).unwrap();
    let taps = generate_days(&spec, first, 28, 3)?;
    let calendar = EventCalendar::new(topology.exog_schema().clone(), Vec::new())?;

    let profiles = build_daily_profiles(&taps, &station, &clock);
    let set = cluster_days(&profiles, &ClusterOptions::default())?;
    let by_day: BTreeMap<NaiveDate, Vec<u32>> = profiles.iter().map(|p| (p.service_day, p.counts.clone())).collect();
    let weekday = set.members[&first];
    let series = cluster_series(&set, weekday, &by_day, &calendar, &clock)?;
    let fit = fit_mle(&series, None, &FitOptions::default(), "S2 weekday")?;
    let p = &fit.params;
    println!(
        "{station} weekday cluster, {} days: phi {:.3}, s2_eps {:.1}, s2_eta {:.1} ({:?})\n",
        fit.days, p.phi, p.sigma2_eps, p.sigma2_eta, fit.method
    );

    let test_day = first + Duration::days(28);
    let test = generate_days(&spec, test_day, 1, 1234)?;
    let counts = &build_daily_profiles(&test, &station, &clock)[0].counts;
    let centroid = set.centroid(weekday)?;
    let x = topology.exog_schema().zeros();

    println!("time   observed  baseline   1-step   2-step");
    let mut state = FilterState::stationary(p);
    // one-step made last bin, two-step made two bins ago
    let (mut one, mut two, mut two_next) = (None, None, None);
    for b in 0..96usize {
        let y = f64::from(counts[b]);
        if (24..48).contains(&b) {
            let t = clock.bin_start(TimeBin::new(test_day, b as u32, 15)?).time();
            let show = |v: Option<f64>| v.map_or("       -".to_string(), |v| format!("{v:8.1}"));
            println!("{}  {y:8.0}  {:8.1} {} {}", t.format("%H:%M"), centroid[b], show(one), show(two));
        }
        state = filter_update(&state, p, y, centroid[b], &x)?.state;
        let next = |h: usize| centroid.get(b + h).copied();
        one = next(1).map(|c| predict(&state, p, c, &x, Horizon::One)).transpose()?.map(|f| f.point);
        two = two_next;
        two_next = next(2).map(|c| predict(&state, p, c, &x, Horizon::Two)).transpose()?.map(|f| f.point);
    }
    Ok(())
}
