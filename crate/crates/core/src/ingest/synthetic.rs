//! Synthetic AFC data with known ground truth.
//!
//! Each station draws a Poisson number of entries per bin around a day-type
//! rate curve, optionally shifted by a per-day AR(1) level process and by
//! event boosts. Every entry gets a destination from the origin's shares and
//! a matching exit after a jittered travel time. Output is a deterministic
//! function of the `GenSpec` and the seed.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::afc::TapEvent;
use super::events::EventCalendarEntry;
use crate::error::{Error, Result};
use crate::network::{ExogSchema, LineTopology, StationId};
use crate::time::{BinClock, TimeBin, DEFAULT_BIN_MINUTES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(default = "default_bin_minutes")]
    pub bin_minutes: u32,
    #[serde(default)]
    pub day_start: NaiveTime,
    pub stations: BTreeMap<StationId, StationGen>,
    /// Day-type index for Monday..Sunday; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weekly_pattern: Option<[usize; 7]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boosts: Vec<EventBoost>,
}

fn default_bin_minutes() -> u32 {
    DEFAULT_BIN_MINUTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationGen {
    pub day_types: Vec<DayType>,
    /// Mean in-vehicle travel time to each destination, seconds.
    pub travel_s: BTreeMap<StationId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<LevelProcess>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayType {
    #[serde(default)]
    pub name: String,
    /// Expected entries per bin.
    pub rates: Vec<f64>,
    pub od_shares: BTreeMap<StationId, f64>,
}

/// Additive AR(1) deviation on the rate curve, drawn afresh each day from
/// its stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelProcess {
    pub phi: f64,
    pub sd: f64,
}

/// Rate change at one station over an inclusive bin range on one date:
/// `rate * multiplier + add`. Boosts with a covariate name are announced
/// events and show up in [`GenSpec::event_calendar`]; the rest are
/// unannounced surges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBoost {
    pub date: NaiveDate,
    pub station: StationId,
    pub bins: [u32; 2],
    #[serde(default = "unit")]
    pub multiplier: f64,
    #[serde(default)]
    pub add: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
}

fn unit() -> f64 {
    1.0
}

impl EventBoost {
    fn covers(&self, date: NaiveDate, station: &StationId, bin: u32) -> bool {
        self.date == date && &self.station == station && (self.bins[0]..=self.bins[1]).contains(&bin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayPlan {
    pub date: NaiveDate,
    /// Overrides the weekly pattern.
    pub day_type: Option<usize>,
}

impl DayPlan {
    pub fn on(date: NaiveDate) -> Self {
        Self { date, day_type: None }
    }
}

impl GenSpec {
    pub fn clock(&self) -> Result<BinClock> {
        BinClock::new(self.bin_minutes, self.day_start)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bins = self.clock()?.bins_per_day() as usize;
        for (station, g) in &self.stations {
            if g.day_types.is_empty() {
                return Err(Error::Config(format!("{station}: no day types")));
            }
            for dt in &g.day_types {
                if dt.rates.len() != bins {
                    return Err(Error::Config(format!("{station}: {} rates, expected {bins}", dt.rates.len())));
                }
                if let Some(r) = dt.rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
                    return Err(Error::Config(format!("{station}: negative or non-finite rate {r}")));
                }
                let positive: Vec<_> = dt.od_shares.iter().filter(|(_, &p)| p > 0.0).collect();
                if dt.od_shares.values().any(|p| !p.is_finite() || *p < 0.0) || positive.is_empty() {
                    return Err(Error::Config(format!("{station}: od_shares must be >= 0 with a positive entry")));
                }
                for (dest, _) in positive {
                    if dest == station {
                        return Err(Error::Config(format!("{station}: share to itself")));
                    }
                    match g.travel_s.get(dest) {
                        Some(t) if t.is_finite() && *t > 0.0 => {}
                        _ => return Err(Error::Config(format!("{station}: no travel time to {dest}"))),
                    }
                }
            }
            if let Some(l) = g.level {
                if !(0.0..1.0).contains(&l.phi) || !(l.sd >= 0.0) {
                    return Err(Error::Config(format!("{station}: level needs 0 <= phi < 1, sd >= 0")));
                }
            }
        }
        if let Some(w) = self.weekly_pattern {
            for g in self.stations.values() {
                if w.iter().any(|&i| i >= g.day_types.len()) {
                    return Err(Error::Config("weekly_pattern names a missing day type".into()));
                }
            }
        }
        for b in &self.boosts {
            if !self.stations.contains_key(&b.station) {
                return Err(Error::UnknownStation(b.station.to_string()));
            }
            if !(b.multiplier >= 0.0) || !b.add.is_finite() || b.bins[0] > b.bins[1] {
                return Err(Error::Config("bad event boost".into()));
            }
        }
        Ok(())
    }

    pub fn day_type_for(&self, plan: &DayPlan) -> usize {
        plan.day_type.unwrap_or_else(|| {
            self.weekly_pattern.map_or(0, |w| w[plan.date.weekday().num_days_from_monday() as usize])
        })
    }

    /// Calendar entries for the announced boosts.
    pub fn event_calendar(&self) -> Result<Vec<EventCalendarEntry>> {
        let clock = self.clock()?;
        self.boosts
            .iter()
            .filter_map(|b| b.covariate.as_ref().map(|c| (b, c)))
            .map(|(b, c)| {
                let first = TimeBin::new(b.date, b.bins[0], self.bin_minutes)?;
                let last = TimeBin::new(b.date, b.bins[1], self.bin_minutes)?;
                Ok(EventCalendarEntry {
                    covariate: c.clone(),
                    station_scope: BTreeSet::from([b.station.clone()]),
                    start: clock.bin_start(first),
                    end: clock.bin_end(last),
                    value: 1.0,
                })
            })
            .collect()
    }
}

fn day_seed(seed: u64, date: NaiveDate) -> u64 {
    seed ^ (date.num_days_from_ce() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// All taps (entries and their exits) generated for one service day, in
/// time order.
pub fn generate_synthetic_day(spec: &GenSpec, plan: &DayPlan, seed: u64) -> Result<Vec<TapEvent>> {
    spec.validate()?;
    let clock = spec.clock()?;
    let bin_s = i64::from(clock.bin_seconds());
    let day_type = spec.day_type_for(plan);
    let mut rng = ChaCha8Rng::seed_from_u64(day_seed(seed, plan.date));
    let mut taps = Vec::new();

    for (station, g) in &spec.stations {
        let dt =
            g.day_types.get(day_type).ok_or_else(|| Error::Config(format!("{station}: no day type {day_type}")))?;
        let dests: Vec<&StationId> = dt.od_shares.keys().collect();
        let picker =
            WeightedIndex::new(dt.od_shares.values().copied()).map_err(|e| Error::Config(format!("{station}: {e}")))?;

        let mut level = match g.level {
            Some(l) if l.sd > 0.0 => {
                let stationary = l.sd / (1.0 - l.phi * l.phi).sqrt();
                Normal::new(0.0, stationary).expect("sd > 0").sample(&mut rng)
            }
            _ => 0.0,
        };
        let mut serial = 0u32;

        for (b, &base) in dt.rates.iter().enumerate() {
            let mut rate = (base + level).max(0.0);
            for boost in spec.boosts.iter().filter(|x| x.covers(plan.date, station, b as u32)) {
                rate = (rate * boost.multiplier + boost.add).max(0.0);
            }
            if let Some(l) = g.level.filter(|l| l.sd > 0.0) {
                level = l.phi * level + Normal::new(0.0, l.sd).expect("sd > 0").sample(&mut rng);
            }
            if rate <= 0.0 {
                continue;
            }
            let n = Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64;
            let start = clock.bin_start(TimeBin::new(plan.date, b as u32, spec.bin_minutes)?);
            for _ in 0..n {
                let entry_at = start + Duration::seconds(rng.random_range(0..bin_s));
                let dest = dests[picker.sample(&mut rng)];
                let mean = g.travel_s[dest];
                let travel = (mean * rng.random_range(0.8..1.2)).round().max(30.0) as i64;
                let card = format!("{}-{}-{:05}", plan.date.format("%Y%m%d"), station, serial);
                serial += 1;
                taps.push(TapEvent::entry(&card, station.as_str(), entry_at));
                taps.push(TapEvent::exit(&card, dest.as_str(), entry_at + Duration::seconds(travel)));
            }
        }
    }
    taps.sort_by_key(|t| t.timestamp);
    Ok(taps)
}

/// `n_days` consecutive days starting at `first`, merged in time order.
pub fn generate_days(spec: &GenSpec, first: NaiveDate, n_days: u32, seed: u64) -> Result<Vec<TapEvent>> {
    let mut taps = Vec::new();
    for d in 0..n_days {
        let plan = DayPlan::on(first + Duration::days(i64::from(d)));
        taps.extend(generate_synthetic_day(spec, &plan, seed)?);
    }
    taps.sort_by_key(|t| t.timestamp);
    Ok(taps)
}

fn bump(b: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((b - centre) / width).powi(2)).exp()
}

/// A plausible 8-station line with weekday/weekend demand. All numbers are
/// synthetic.
pub fn demo_line() -> (LineTopology, GenSpec) {
    let n = 8usize;
    let ids: Vec<StationId> = (1..=n).map(|i| StationId::from(format!("S{i}").as_str())).collect();
    let schema = ExogSchema::new(vec![
        "major_event_nearby".into(),
        "planned_closure".into(),
        "unplanned_closure".into(),
        "weather_flag".into(),
    ])
    .expect("static schema");
    let topology =
        LineTopology::new(ids.clone(), vec![30.0; n], vec![120.0; n - 1], 600, 150.0, schema).expect("static topology");

    let bins = 96usize;
    let mut stations = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        // outer stations feed the morning peak, central ones the evening
        let centrality = 1.0 - ((i as f64 - (n as f64 - 1.0) / 2.0).abs() / ((n as f64 - 1.0) / 2.0));
        let am = 260.0 * (1.2 - centrality);
        let pm = 160.0 + 160.0 * centrality;
        let weekday: Vec<f64> = (0..bins)
            .map(|b| {
                let b = b as f64;
                let service = if (20.0..96.0).contains(&b) { 1.0 } else { 0.1 };
                service * (25.0 + 50.0 * bump(b, 52.0, 14.0) + am * bump(b, 33.0, 3.0) + pm * bump(b, 71.0, 4.0))
            })
            .collect();
        let weekend: Vec<f64> = (0..bins)
            .map(|b| {
                let b = b as f64;
                let service = if (24.0..96.0).contains(&b) { 1.0 } else { 0.05 };
                service * (15.0 + 70.0 * bump(b, 58.0, 16.0))
            })
            .collect();
        let od_shares: BTreeMap<StationId, f64> = ids
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, d)| {
                let c = 1.0 - ((j as f64 - (n as f64 - 1.0) / 2.0).abs() / ((n as f64 - 1.0) / 2.0));
                (d.clone(), (0.5 + c) / (1.0 + 0.15 * (j as f64 - i as f64).abs()))
            })
            .collect();
        let travel_s = ids
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, d)| (d.clone(), 60.0 + 150.0 * (j as f64 - i as f64).abs()))
            .collect();
        stations.insert(
            id.clone(),
            StationGen {
                day_types: vec![
                    DayType { name: "weekday".into(), rates: weekday, od_shares: od_shares.clone() },
                    DayType { name: "weekend".into(), rates: weekend, od_shares },
                ],
                travel_s,
                level: Some(LevelProcess { phi: 0.97, sd: 6.0 }),
            },
        );
    }
    let spec = GenSpec {
        bin_minutes: 15,
        day_start: NaiveTime::MIN,
        stations,
        weekly_pattern: Some([0, 0, 0, 0, 0, 1, 1]),
        boosts: Vec::new(),
    };
    (topology, spec)
}
