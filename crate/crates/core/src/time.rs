//! Service-day time bins.
//!
//! A service day starts at a configurable clock time (midnight by default)
//! and is cut into equal bins whose width divides 1440 minutes. Timestamps
//! before the day start belong to the previous service day.

use std::fmt;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: u32 = 1440;
pub const DEFAULT_BIN_MINUTES: u32 = 15;

/// One bin of one service day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeBin {
    #[serde(rename = "day")]
    pub service_day: NaiveDate,
    pub index: u32,
    pub bin_minutes: u32,
}

impl TimeBin {
    pub fn new(service_day: NaiveDate, index: u32, bin_minutes: u32) -> Result<Self> {
        let bins_per_day = bins_per_day(bin_minutes)?;
        if index >= bins_per_day {
            return Err(Error::BinOutOfRange { index, bins_per_day });
        }
        Ok(Self { service_day, index, bin_minutes })
    }

    pub fn bins_per_day(&self) -> u32 {
        MINUTES_PER_DAY / self.bin_minutes
    }

    /// Shift by `steps` bins, rolling across service-day boundaries.
    pub fn offset(&self, steps: i64) -> TimeBin {
        let per_day = i64::from(self.bins_per_day());
        let absolute = i64::from(self.index) + steps;
        let day_shift = absolute.div_euclid(per_day);
        let index = absolute.rem_euclid(per_day) as u32;
        TimeBin { service_day: self.service_day + Duration::days(day_shift), index, bin_minutes: self.bin_minutes }
    }

    pub fn next(&self) -> TimeBin {
        self.offset(1)
    }

    pub fn prev(&self) -> TimeBin {
        self.offset(-1)
    }
}

impl fmt::Display for TimeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.service_day, self.index)
    }
}

pub fn bins_per_day(bin_minutes: u32) -> Result<u32> {
    if bin_minutes == 0 || !MINUTES_PER_DAY.is_multiple_of(bin_minutes) {
        return Err(Error::InvalidBinWidth(bin_minutes));
    }
    Ok(MINUTES_PER_DAY / bin_minutes)
}

/// Bin width plus service-day start; converts between instants and bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinClock {
    bin_minutes: u32,
    day_start: NaiveTime,
}

impl Default for BinClock {
    fn default() -> Self {
        Self { bin_minutes: DEFAULT_BIN_MINUTES, day_start: NaiveTime::MIN }
    }
}

impl BinClock {
    pub fn new(bin_minutes: u32, day_start: NaiveTime) -> Result<Self> {
        bins_per_day(bin_minutes)?;
        Ok(Self { bin_minutes, day_start })
    }

    pub fn with_bin_minutes(bin_minutes: u32) -> Result<Self> {
        Self::new(bin_minutes, NaiveTime::MIN)
    }

    pub fn bin_minutes(&self) -> u32 {
        self.bin_minutes
    }

    pub fn bin_seconds(&self) -> u32 {
        self.bin_minutes * 60
    }

    pub fn day_start(&self) -> NaiveTime {
        self.day_start
    }

    pub fn bins_per_day(&self) -> u32 {
        MINUTES_PER_DAY / self.bin_minutes
    }

    pub fn bin_of(&self, ts: NaiveDateTime) -> TimeBin {
        let shifted = ts - self.day_start_offset();
        let secs = shifted.time().num_seconds_from_midnight();
        TimeBin { service_day: shifted.date(), index: secs / self.bin_seconds(), bin_minutes: self.bin_minutes }
    }

    pub fn bin_start(&self, bin: TimeBin) -> NaiveDateTime {
        self.day_origin(bin.service_day) + Duration::minutes(i64::from(bin.index) * i64::from(bin.bin_minutes))
    }

    /// Right edge of the bin (exclusive): the instant its count is complete.
    pub fn bin_end(&self, bin: TimeBin) -> NaiveDateTime {
        self.bin_start(bin) + Duration::minutes(i64::from(bin.bin_minutes))
    }

    /// First instant of a service day.
    pub fn day_origin(&self, service_day: NaiveDate) -> NaiveDateTime {
        service_day.and_time(NaiveTime::MIN) + self.day_start_offset()
    }

    pub fn is_boundary(&self, ts: NaiveDateTime) -> bool {
        self.bin_start(self.bin_of(ts)) == ts
    }

    fn day_start_offset(&self) -> Duration {
        Duration::seconds(i64::from(self.day_start.num_seconds_from_midnight()))
    }
}

pub fn bin_of(ts: NaiveDateTime, bin_minutes: u32, day_start: NaiveTime) -> Result<TimeBin> {
    Ok(BinClock::new(bin_minutes, day_start)?.bin_of(ts))
}

pub fn bin_start(bin: TimeBin, day_start: NaiveTime) -> NaiveDateTime {
    BinClock { bin_minutes: bin.bin_minutes, day_start }.bin_start(bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        s.parse().unwrap()
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 2, 5).unwrap()
    }

    #[test]
    fn bin_of_examples() {
        let b = bin_of(ts("2013-02-05T00:00:00"), 15, NaiveTime::MIN).unwrap();
        assert_eq!((b.service_day, b.index), (day(), 0));
        assert_eq!(bin_of(ts("2013-02-05T08:00:00"), 15, NaiveTime::MIN).unwrap().index, 32);
        assert_eq!(bin_of(ts("2013-02-05T23:59:59"), 15, NaiveTime::MIN).unwrap().index, 95);
    }

    #[test]
    fn rejects_bin_width_not_dividing_day() {
        assert!(matches!(bin_of(ts("2013-02-05T08:00:00"), 7, NaiveTime::MIN), Err(Error::InvalidBinWidth(7))));
        assert!(BinClock::with_bin_minutes(0).is_err());
    }

    #[test]
    fn bin_start_examples() {
        let start = |i| bin_start(TimeBin::new(day(), i, 15).unwrap(), NaiveTime::MIN);
        assert_eq!(start(0), ts("2013-02-05T00:00:00"));
        assert_eq!(start(32), ts("2013-02-05T08:00:00"));
        assert_eq!(start(33), ts("2013-02-05T08:15:00"));
    }

    #[test]
    fn early_morning_belongs_to_previous_service_day() {
        let clock = BinClock::new(15, NaiveTime::from_hms_opt(4, 30, 0).unwrap()).unwrap();
        let b = clock.bin_of(ts("2013-02-05T02:00:00"));
        assert_eq!(b.service_day, NaiveDate::from_ymd_opt(2013, 2, 4).unwrap());
        assert_eq!(b.index, (24 * 60 - 150) / 15);
        assert_eq!(clock.bin_of(ts("2013-02-05T04:30:00")).index, 0);
    }

    #[test]
    fn offset_rolls_across_days() {
        let last = TimeBin::new(day(), 95, 15).unwrap();
        let next = last.next();
        assert_eq!(next.index, 0);
        assert_eq!(next.service_day, day().succ_opt().unwrap());
        assert_eq!(next.prev(), last);
        assert_eq!(last.offset(-96 * 2).service_day, day() - Duration::days(2));
    }

    proptest! {
        #[test]
        fn round_trip_every_bin(width_ix in 0usize..8, start_min in 0u32..1440) {
            let widths = [1u32, 5, 10, 15, 20, 30, 60, 240];
            let width = widths[width_ix];
            let day_start = NaiveTime::from_hms_opt(start_min / 60, start_min % 60, 0).unwrap();
            let clock = BinClock::new(width, day_start).unwrap();
            prop_assert_eq!(clock.bins_per_day() * width, MINUTES_PER_DAY);
            for index in 0..clock.bins_per_day() {
                let bin = TimeBin::new(day(), index, width).unwrap();
                prop_assert_eq!(clock.bin_of(clock.bin_start(bin)), bin);
            }
        }

        #[test]
        fn monotone_within_day(a in 0i64..86_400, b in 0i64..86_400) {
            let clock = BinClock::default();
            let origin = clock.day_origin(day());
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let bl = clock.bin_of(origin + Duration::seconds(lo));
            let bh = clock.bin_of(origin + Duration::seconds(hi));
            prop_assert!(bl <= bh);
        }
    }
}
