use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ExogSchema, ExogenousVector, StationId};
use crate::time::{BinClock, TimeBin};

/// A known or noticed event switching one covariate on over an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCalendarEntry {
    #[serde(rename = "name")]
    pub covariate: String,
    /// Empty means every station.
    #[serde(default, rename = "stations")]
    pub station_scope: BTreeSet<StationId>,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    #[serde(default = "one")]
    pub value: f64,
}

fn one() -> f64 {
    1.0
}

impl EventCalendarEntry {
    fn applies_to(&self, station: &StationId) -> bool {
        self.station_scope.is_empty() || self.station_scope.contains(station)
    }

    fn overlaps(&self, start: NaiveDateTime, end: NaiveDateTime) -> bool {
        self.start < end && self.end > start
    }
}

/// Parse an event calendar JSON list and check every entry against the schema.
pub fn load_events(json: &str, schema: &ExogSchema) -> Result<Vec<EventCalendarEntry>> {
    let entries: Vec<EventCalendarEntry> = serde_json::from_str(json)?;
    for e in &entries {
        validate(e, schema)?;
    }
    Ok(entries)
}

fn validate(e: &EventCalendarEntry, schema: &ExogSchema) -> Result<()> {
    if schema.position(&e.covariate).is_none() {
        return Err(Error::UnknownCovariate(e.covariate.clone()));
    }
    if e.end <= e.start {
        return Err(Error::Config(format!("event `{}` ends before it starts", e.covariate)));
    }
    if !e.value.is_finite() {
        return Err(Error::NonFinite("event value"));
    }
    Ok(())
}

/// Covariates for `station` over `bin`: per covariate, the max value of the
/// entries in scope that overlap the bin, else 0.
pub fn exog_at(
    entries: &[EventCalendarEntry],
    schema: &ExogSchema,
    station: &StationId,
    bin: TimeBin,
    clock: &BinClock,
) -> ExogenousVector {
    let (start, end) = (clock.bin_start(bin), clock.bin_end(bin));
    let mut values: Vec<Option<f64>> = vec![None; schema.len()];
    for e in entries.iter().filter(|e| e.applies_to(station) && e.overlaps(start, end)) {
        if let Some(i) = schema.position(&e.covariate) {
            values[i] = Some(values[i].map_or(e.value, |v: f64| v.max(e.value)));
        }
    }
    ExogenousVector(values.into_iter().map(|v| v.unwrap_or(0.0)).collect())
}

/// Calendar plus schema, growable at runtime as unplanned events are noticed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventCalendar {
    schema: ExogSchema,
    entries: Vec<EventCalendarEntry>,
}

impl EventCalendar {
    pub fn new(schema: ExogSchema, entries: Vec<EventCalendarEntry>) -> Result<Self> {
        for e in &entries {
            validate(e, &schema)?;
        }
        Ok(Self { schema, entries })
    }

    pub fn from_json(json: &str, schema: ExogSchema) -> Result<Self> {
        let entries = load_events(json, &schema)?;
        Ok(Self { schema, entries })
    }

    pub fn push(&mut self, entry: EventCalendarEntry) -> Result<()> {
        validate(&entry, &self.schema)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn schema(&self) -> &ExogSchema {
        &self.schema
    }

    pub fn entries(&self) -> &[EventCalendarEntry] {
        &self.entries
    }

    pub fn exog_at(&self, station: &StationId, bin: TimeBin, clock: &BinClock) -> ExogenousVector {
        exog_at(&self.entries, &self.schema, station, bin, clock)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ExogSchema {
        ExogSchema::new(vec!["major_event_nearby".into(), "planned_closure".into(), "weather_flag".into()]).unwrap()
    }

    const CAL: &str = r#"[{"name":"major_event_nearby","stations":["S3"],
        "start":"2013-02-05T18:00:00","end":"2013-02-05T23:00:00","value":1}]"#;

    fn bin_at(hm: &str, clock: &BinClock) -> TimeBin {
        clock.bin_of(format!("2013-02-05T{hm}:00").parse().unwrap())
    }

    #[test]
    fn empty_calendar_gives_zeros() {
        let clock = BinClock::default();
        let v = exog_at(&[], &schema(), &"S3".into(), bin_at("19:00", &clock), &clock);
        assert_eq!(v.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn scoped_event_hits_only_its_station() {
        let clock = BinClock::default();
        let cal = EventCalendar::from_json(CAL, schema()).unwrap();
        let hit = cal.exog_at(&"S3".into(), bin_at("19:00", &clock), &clock);
        assert_eq!(hit.values(), &[1.0, 0.0, 0.0]);
        let miss = cal.exog_at(&"S1".into(), bin_at("19:00", &clock), &clock);
        assert_eq!(miss.values(), &[0.0, 0.0, 0.0]);
        // end is exclusive
        let after = cal.exog_at(&"S3".into(), bin_at("23:00", &clock), &clock);
        assert_eq!(after.values(), &[0.0, 0.0, 0.0]);
        // partial overlap with the bin counts
        let before = cal.exog_at(&"S3".into(), bin_at("17:45", &clock), &clock);
        assert_eq!(before.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn overlapping_entries_combine_by_max() {
        let clock = BinClock::default();
        let mut cal = EventCalendar::from_json(CAL, schema()).unwrap();
        let mut e = cal.entries()[0].clone();
        e.value = 0.5;
        e.station_scope.clear();
        cal.push(e).unwrap();
        let v = cal.exog_at(&"S3".into(), bin_at("19:00", &clock), &clock);
        assert_eq!(v.values()[0], 1.0);
        let v = cal.exog_at(&"S1".into(), bin_at("19:00", &clock), &clock);
        assert_eq!(v.values()[0], 0.5);
    }

    #[test]
    fn unknown_covariate_is_named() {
        let bad = CAL.replace("major_event_nearby", "alien_landing");
        match load_events(&bad, &schema()) {
            Err(Error::UnknownCovariate(name)) => assert_eq!(name, "alien_landing"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
