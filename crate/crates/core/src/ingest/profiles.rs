use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::afc::TapEvent;
use crate::network::{LineTopology, StationId};
use crate::time::BinClock;

/// Entry counts per bin for one station on one service day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyProfile {
    pub station: StationId,
    pub service_day: NaiveDate,
    pub counts: Vec<u32>,
}

impl DailyProfile {
    pub fn zeros(station: StationId, service_day: NaiveDate, bins: usize) -> Self {
        Self { station, service_day, counts: vec![0; bins] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

/// One profile per service day on which `station` saw at least one entry,
/// ordered by day. Exit taps are ignored.
pub fn build_daily_profiles(taps: &[TapEvent], station: &StationId, clock: &BinClock) -> Vec<DailyProfile> {
    let bins = clock.bins_per_day() as usize;
    let mut days: BTreeMap<NaiveDate, Vec<u32>> = BTreeMap::new();
    for tap in taps.iter().filter(|t| t.is_entry() && &t.station == station) {
        let bin = clock.bin_of(tap.timestamp);
        days.entry(bin.service_day).or_insert_with(|| vec![0; bins])[bin.index as usize] += 1;
    }
    days.into_iter()
        .map(|(service_day, counts)| DailyProfile { station: station.clone(), service_day, counts })
        .collect()
}

/// Profiles for every topology station over every service day with at least
/// one entry anywhere on the line; a station without entries on such a day
/// gets a zero profile. Days carrying only exits (journeys finishing after
/// the day boundary) are left out.
pub fn build_all_profiles(
    taps: &[TapEvent],
    topology: &LineTopology,
    clock: &BinClock,
) -> BTreeMap<StationId, Vec<DailyProfile>> {
    let bins = clock.bins_per_day() as usize;
    let days: BTreeSet<NaiveDate> =
        taps.iter().filter(|t| t.is_entry()).map(|t| clock.bin_of(t.timestamp).service_day).collect();
    let mut grid: BTreeMap<StationId, BTreeMap<NaiveDate, Vec<u32>>> =
        topology.stations().iter().map(|s| (s.clone(), days.iter().map(|d| (*d, vec![0; bins])).collect())).collect();
    for tap in taps.iter().filter(|t| t.is_entry()) {
        let bin = clock.bin_of(tap.timestamp);
        if let Some(per_day) = grid.get_mut(&tap.station) {
            per_day.get_mut(&bin.service_day).expect("day collected above")[bin.index as usize] += 1;
        }
    }
    grid.into_iter()
        .map(|(station, per_day)| {
            let profiles = per_day
                .into_iter()
                .map(|(service_day, counts)| DailyProfile { station: station.clone(), service_day, counts })
                .collect();
            (station, profiles)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDateTime};
    use proptest::prelude::*;

    fn t(s: &str) -> NaiveDateTime {
        s.parse().unwrap()
    }

    #[test]
    fn no_taps_no_profiles() {
        assert!(build_daily_profiles(&[], &"S1".into(), &BinClock::default()).is_empty());
    }

    #[test]
    fn three_entries_in_the_eight_oclock_bin() {
        let taps: Vec<_> = ["08:00:00", "08:07:30", "08:14:59"]
            .iter()
            .map(|hms| TapEvent::entry("c", "S1", t(&format!("2013-02-05T{hms}"))))
            .chain([TapEvent::exit("c", "S1", t("2013-02-05T08:05:00"))])
            .collect();
        let p = build_daily_profiles(&taps, &"S1".into(), &BinClock::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].counts[32], 3);
        assert_eq!(p[0].total(), 3);
    }

    proptest! {
        /// Independent regrouping: count by (date, minute/15) directly.
        #[test]
        fn midnight_split_matches_direct_recount(offsets in prop::collection::vec(0i64..7200, 0..80)) {
            let base = t("2013-02-05T23:00:00");
            let taps: Vec<_> = offsets.iter()
                .map(|&s| TapEvent::entry("c", "S1", base + Duration::seconds(s)))
                .collect();
            let profiles = build_daily_profiles(&taps, &"S1".into(), &BinClock::default());
            let mut direct: BTreeMap<(NaiveDate, usize), u32> = BTreeMap::new();
            for tap in &taps {
                let ts = tap.timestamp;
                let minute = ts.format("%H").to_string().parse::<usize>().unwrap() * 60
                    + ts.format("%M").to_string().parse::<usize>().unwrap();
                *direct.entry((ts.date(), minute / 15)).or_default() += 1;
            }
            let days: BTreeSet<_> = direct.keys().map(|(d, _)| *d).collect();
            prop_assert_eq!(profiles.len(), days.len());
            for p in &profiles {
                for (i, &c) in p.counts.iter().enumerate() {
                    prop_assert_eq!(c, direct.get(&(p.service_day, i)).copied().unwrap_or(0));
                }
            }
            let total: u64 = profiles.iter().map(DailyProfile::total).sum();
            prop_assert_eq!(total, taps.len() as u64);
        }
    }
}
