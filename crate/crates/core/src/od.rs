//! Destination shares per origin and time-of-day period, and the
//! origin-destination flow forecasts built from them.
//!
//! Shares are smoothed counts: `(c_d + alpha) / (sum c + alpha * |D|)` over
//! every other station on the line, so each share is strictly positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ArrivalForecast, Horizon};
use crate::ingest::Journey;
use crate::network::{LineTopology, StationId};
use crate::time::{BinClock, TimeBin};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BINS_PER_PERIOD: u32 = 4;

/// Smoothed destination counts for one origin over one inclusive bin range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationShares {
    pub origin: StationId,
    #[serde(rename = "bins")]
    pub period: [u32; 2],
    pub alpha: f64,
    /// Effective counts; the key set is the destination support.
    pub counts: BTreeMap<StationId, f64>,
}

impl DestinationShares {
    pub fn empty(origin: StationId, period: [u32; 2], alpha: f64, support: Vec<StationId>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        if support.is_empty() {
            return Err(Error::Config("destination support is empty".into()));
        }
        Ok(Self { origin, period, alpha, counts: support.into_iter().map(|d| (d, 0.0)).collect() })
    }

    pub fn contains_bin(&self, bin: u32) -> bool {
        (self.period[0]..=self.period[1]).contains(&bin)
    }

    pub fn total_count(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn share(&self, dest: &StationId) -> Option<f64> {
        let denom = self.total_count() + self.alpha * self.counts.len() as f64;
        self.counts.get(dest).map(|c| (c + self.alpha) / denom)
    }

    pub fn shares(&self) -> BTreeMap<StationId, f64> {
        let denom = self.total_count() + self.alpha * self.counts.len() as f64;
        self.counts.iter().map(|(d, c)| (d.clone(), (c + self.alpha) / denom)).collect()
    }

    fn record(&mut self, dest: &StationId, weight: f64) {
        if let Some(c) = self.counts.get_mut(dest) {
            *c += weight;
        }
    }
}

/// Decay the effective counts by `lambda`, then add the new journeys from
/// this origin. Journeys to destinations outside the support are ignored.
pub fn update_shares_online(shares: &DestinationShares, new: &[Journey], lambda: f64) -> Result<DestinationShares> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!("forgetting factor must be in (0, 1], got {lambda}")));
    }
    let mut out = shares.clone();
    out.counts.values_mut().for_each(|c| *c *= lambda);
    for j in new.iter().filter(|j| j.origin == shares.origin) {
        out.record(&j.destination, 1.0);
    }
    Ok(out)
}

/// All periods of one origin, covering the service day without overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableDoc", into = "TableDoc")]
pub struct ShareTable {
    origin: StationId,
    alpha: f64,
    periods: Vec<DestinationShares>,
}

#[derive(Serialize, Deserialize)]
struct PeriodDoc {
    bins: [u32; 2],
    counts: BTreeMap<StationId, f64>,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    origin: StationId,
    alpha: f64,
    periods: Vec<PeriodDoc>,
}

impl TryFrom<TableDoc> for ShareTable {
    type Error = Error;

    fn try_from(doc: TableDoc) -> Result<Self> {
        if !(doc.alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        let mut next = 0u32;
        let mut periods = Vec::with_capacity(doc.periods.len());
        for p in doc.periods {
            if p.bins[0] != next || p.bins[1] < p.bins[0] {
                return Err(Error::Config(format!("share periods must tile the day; got {:?}", p.bins)));
            }
            if p.counts.is_empty() || p.counts.values().any(|c| !(*c >= 0.0)) {
                return Err(Error::Config("share counts must be >= 0 over a non-empty support".into()));
            }
            next = p.bins[1] + 1;
            periods.push(DestinationShares {
                origin: doc.origin.clone(),
                period: p.bins,
                alpha: doc.alpha,
                counts: p.counts,
            });
        }
        Ok(ShareTable { origin: doc.origin, alpha: doc.alpha, periods })
    }
}

impl From<ShareTable> for TableDoc {
    fn from(t: ShareTable) -> Self {
        TableDoc {
            origin: t.origin,
            alpha: t.alpha,
            periods: t.periods.into_iter().map(|p| PeriodDoc { bins: p.period, counts: p.counts }).collect(),
        }
    }
}

impl ShareTable {
    pub fn origin(&self) -> &StationId {
        &self.origin
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn periods(&self) -> &[DestinationShares] {
        &self.periods
    }

    pub fn period_for(&self, bin: u32) -> Result<&DestinationShares> {
        self.periods.iter().find(|p| p.contains_bin(bin)).ok_or(Error::PeriodMismatch { bin })
    }

    /// Fold the journeys that entered during `bin` into its period.
    pub fn update_online(&mut self, bin: u32, journeys: &[Journey], lambda: f64) -> Result<()> {
        let idx = self.periods.iter().position(|p| p.contains_bin(bin)).ok_or(Error::PeriodMismatch { bin })?;
        self.periods[idx] = update_shares_online(&self.periods[idx], journeys, lambda)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("share table serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Period boundaries: consecutive groups of `bins_per_period`, the last one
/// possibly shorter.
pub fn periods(bins_per_day: u32, bins_per_period: u32) -> Result<Vec<[u32; 2]>> {
    if bins_per_period == 0 {
        return Err(Error::Config("bins_per_period must be > 0".into()));
    }
    Ok((0..bins_per_day)
        .step_by(bins_per_period as usize)
        .map(|s| [s, (s + bins_per_period - 1).min(bins_per_day - 1)])
        .collect())
}

/// Estimate the share table of `origin` from historical journeys.
pub fn estimate_shares(
    journeys: &[Journey],
    origin: &StationId,
    topology: &LineTopology,
    clock: &BinClock,
    bins_per_period: u32,
    alpha: f64,
) -> Result<ShareTable> {
    topology.require(origin)?;
    let support = topology.destinations_from(origin);
    let mut table = ShareTable {
        origin: origin.clone(),
        alpha,
        periods: periods(clock.bins_per_day(), bins_per_period)?
            .into_iter()
            .map(|p| DestinationShares::empty(origin.clone(), p, alpha, support.clone()))
            .collect::<Result<_>>()?,
    };
    for j in journeys.iter().filter(|j| &j.origin == origin) {
        let bin = clock.bin_of(j.entry_time).index;
        let p = table.periods.iter_mut().find(|p| p.contains_bin(bin)).expect("periods tile the day");
        p.record(&j.destination, 1.0);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ODForecast {
    pub origin: StationId,
    pub target_bin: TimeBin,
    pub horizon: Horizon,
    pub flows: BTreeMap<StationId, f64>,
    pub shares: BTreeMap<StationId, f64>,
    pub total: f64,
}

/// Split an arrival forecast over destinations.
pub fn forecast_od(arrival: &ArrivalForecast, shares: &DestinationShares) -> Result<ODForecast> {
    if arrival.station != shares.origin {
        return Err(Error::Config(format!("forecast for {} with shares of {}", arrival.station, shares.origin)));
    }
    if !shares.contains_bin(arrival.target_bin.index) {
        return Err(Error::PeriodMismatch { bin: arrival.target_bin.index });
    }
    let total = arrival.clamped_point;
    let s = shares.shares();
    Ok(ODForecast {
        origin: arrival.station.clone(),
        target_bin: arrival.target_bin,
        horizon: arrival.horizon,
        flows: s.iter().map(|(d, p)| (d.clone(), total * p)).collect(),
        shares: s,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use proptest::prelude::*;

    fn shares_with(counts: &[f64], alpha: f64) -> DestinationShares {
        let mut s = DestinationShares::empty(
            "A".into(),
            [32, 35],
            alpha,
            ["B", "C", "D"].iter().take(counts.len()).map(|&d| d.into()).collect(),
        )
        .unwrap();
        for (c, v) in s.counts.values_mut().zip(counts) {
            *c = *v;
        }
        s
    }

    fn journey(dest: &str, at: &str) -> Journey {
        let t: NaiveDateTime = format!("2013-02-05T{at}:00").parse().unwrap();
        Journey {
            card_id: "c".into(),
            origin: "A".into(),
            destination: dest.into(),
            entry_time: t,
            exit_time: t + chrono::Duration::minutes(10),
        }
    }

    #[test]
    fn prior_only_is_uniform() {
        let s = shares_with(&[0.0, 0.0, 0.0], 1.0);
        for v in s.shares().values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_formula() {
        let s = shares_with(&[30.0, 10.0, 0.0], 1.0).shares();
        let got: Vec<f64> = s.values().copied().collect();
        let want = [31.0 / 43.0, 11.0 / 43.0, 1.0 / 43.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_alpha_concentrates() {
        let s = shares_with(&[50.0, 0.0, 0.0], 1e-6);
        assert!((s.share(&"B".into()).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn estimates_from_journeys_per_period() {
        let topo = LineTopology::new(
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
            vec![30.0; 4],
            vec![60.0; 3],
            100,
            120.0,
            Default::default(),
        )
        .unwrap();
        let js: Vec<Journey> = std::iter::repeat_n(journey("B", "08:05"), 30)
            .chain(std::iter::repeat_n(journey("C", "08:50"), 10))
            .chain([journey("D", "09:00")])
            .collect();
        let t = estimate_shares(&js, &"A".into(), &topo, &BinClock::default(), 4, 1.0).unwrap();
        assert_eq!(t.periods().len(), 24);
        let p = t.period_for(33).unwrap();
        assert_eq!(p.period, [32, 35]);
        assert!((p.share(&"B".into()).unwrap() - 31.0 / 43.0).abs() < 1e-12);
        assert!(p.share(&"A".into()).is_none());
        assert_eq!(t.period_for(36).unwrap().counts[&StationId::from("D")], 1.0);
        assert!(estimate_shares(&js, &"Z".into(), &topo, &BinClock::default(), 4, 1.0).is_err());

        let back = ShareTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn online_update_examples() {
        let s = shares_with(&[30.0, 10.0, 0.0], 1.0);
        assert_eq!(update_shares_online(&s, &[], 1.0).unwrap(), s);

        let new: Vec<Journey> = std::iter::repeat_n(journey("D", "08:05"), 43).collect();
        let u = update_shares_online(&s, &new, 1.0).unwrap().shares();
        let want = [31.0 / 86.0, 11.0 / 86.0, 44.0 / 86.0];
        for (g, w) in u.values().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }

        let halved = update_shares_online(&s, &[], 0.5).unwrap();
        assert_eq!(halved.counts.values().copied().collect::<Vec<_>>(), vec![15.0, 5.0, 0.0]);
        assert!(update_shares_online(&s, &[], 0.0).is_err());
        assert!(update_shares_online(&s, &[], 1.5).is_err());
    }

    fn arrival(total: f64, bin: u32) -> ArrivalForecast {
        let day = chrono::NaiveDate::from_ymd_opt(2013, 2, 5).unwrap();
        ArrivalForecast {
            station: "A".into(),
            target_bin: TimeBin::new(day, bin, 15).unwrap(),
            horizon: Horizon::One,
            point: total,
            variance: 1.0,
            clamped_point: total.max(0.0),
            baseline: total,
        }
    }

    #[test]
    fn od_forecast_examples() {
        let mut s = shares_with(&[0.0, 0.0], 1.0);
        s.counts.insert("B".into(), 2.0);
        s.counts.insert("C".into(), 1.0);
        // shares (3/5, 2/5)
        let f = forecast_od(&arrival(100.0, 33), &s).unwrap();
        assert!((f.flows[&StationId::from("B")] - 60.0).abs() < 1e-9);
        assert!((f.flows[&StationId::from("C")] - 40.0).abs() < 1e-9);

        let f = forecast_od(&arrival(-3.0, 33), &s).unwrap();
        assert!(f.flows.values().all(|&v| v == 0.0));

        let s = shares_with(&[30.0, 10.0, 0.0], 1.0);
        let f = forecast_od(&arrival(43.0, 33), &s).unwrap();
        let flows: Vec<f64> = f.flows.values().copied().collect();
        for (g, w) in flows.iter().zip([31.0, 11.0, 1.0]) {
            assert!((g - w).abs() < 1e-9);
        }
        assert!(matches!(forecast_od(&arrival(43.0, 40), &s), Err(Error::PeriodMismatch { bin: 40 })));
    }

    proptest! {
        #[test]
        fn shares_stay_on_the_simplex(counts in prop::collection::vec(0.0f64..1e6, 1..3), alpha in 1e-6f64..50.0) {
            let s = shares_with(&counts, alpha);
            let v = s.shares();
            prop_assert!((v.values().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(v.values().all(|&p| p > 0.0));
        }

        #[test]
        fn more_trips_never_lower_a_share(counts in prop::collection::vec(0.0f64..1000.0, 3), extra in 0.0f64..500.0, alpha in 0.01f64..10.0) {
            let before = shares_with(&counts, alpha);
            let mut bumped = counts.clone();
            bumped[1] += extra;
            let after = shares_with(&bumped, alpha);
            prop_assert!(after.share(&"C".into()).unwrap() >= before.share(&"C".into()).unwrap() - 1e-15);
        }

        #[test]
        fn flows_conserve_the_total(counts in prop::collection::vec(0.0f64..1000.0, 3), total in 0.0f64..5000.0) {
            let s = shares_with(&counts, 1.0);
            let f = forecast_od(&arrival(total, 33), &s).unwrap();
            prop_assert!((f.flows.values().sum::<f64>() - total).abs() < 1e-6);
            prop_assert!(f.flows.values().all(|&v| v >= 0.0));
        }
    }
}
