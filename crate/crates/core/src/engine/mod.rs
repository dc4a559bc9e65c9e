//! The forecasting cycle.
//!
//! At every bin boundary the engine counts the bin that just closed, joins
//! those counts onto earlier forecasts, re-classifies each station's day,
//! runs one Kalman step per station, forecasts one and two bins ahead,
//! splits the forecasts over destinations, simulates the line over the
//! forecast horizon and derives alerts and denial estimates. Everything a
//! cycle produces is returned as one immutable [`CycleSnapshot`].
//!
//! The engine never reads a clock. Live service and replay drive the same
//! [`Engine::run_cycle`] with explicit bin-boundary instants.

mod journal;
mod records;
mod source;

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

pub use journal::{read_records, Journal};
pub use records::{evaluate_accuracy, AccuracyReport, AccuracyRow, ForecastRecord};
pub use source::{AfcFileTail, Feed, MemoryFeed, NoFeed, PositionFileTail, Timestamped};

use crate::decisions::{
    denial_probability, denial_probability_ensemble, detect_hotspots, evaluate_gate_closure, DenialEstimate,
    GateClosurePlan, HotspotAlert, Thresholds, WhatIfResult,
};
use crate::error::{Error, Result};
use crate::forecast::{filter_update, predict, ArrivalForecast, FilterState, Horizon, StateSpaceParams};
use crate::ingest::{EventCalendar, JourneyLinker, LinkOptions, TapEvent, TrainPositionReport};
use crate::mesosim::{self, init_trains, ArrivalMode, Demand, SimConfig, SimResult, TrainState};
use crate::models::ModelSet;
use crate::network::{LineTopology, StationId};
use crate::od::{forecast_od, ODForecast, ShareTable};
use crate::patterns::{classify_partial, Classification, ClusterSet};
use crate::time::{BinClock, TimeBin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub tick_s: u32,
    /// Bins simulated per cycle: 1 or 2, matching the forecast horizons.
    pub horizon_bins: u32,
    pub seed: u64,
    pub arrival_mode: ArrivalMode,
    /// Poisson runs for ensemble denial estimates; 0 uses the single run.
    pub ensemble_runs: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            tick_s: mesosim::DEFAULT_TICK_S,
            horizon_bins: 2,
            seed: 0,
            arrival_mode: ArrivalMode::ExpectedFlow,
            ensemble_runs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub sim: SimSettings,
    pub thresholds: Thresholds,
    /// Forgetting factor for online destination-share updates.
    pub od_lambda: f64,
    pub max_gap_hours: i64,
    /// Observed bins kept per station for history queries.
    pub history_bins: usize,
}

impl EngineOptions {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            sim: SimSettings::default(),
            thresholds,
            od_lambda: 1.0,
            max_gap_hours: crate::ingest::DEFAULT_MAX_GAP_HOURS,
            history_bins: 192,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if !(1..=2).contains(&self.sim.horizon_bins) {
            return Err(Error::Config(format!("sim horizon_bins must be 1 or 2, got {}", self.sim.horizon_bins)));
        }
        if !(self.od_lambda > 0.0 && self.od_lambda <= 1.0) {
            return Err(Error::Config(format!("od_lambda must be in (0, 1], got {}", self.od_lambda)));
        }
        if self.sim.ensemble_runs > 0 && self.sim.arrival_mode != ArrivalMode::PoissonSample {
            return Err(Error::Config("ensemble_runs needs arrival_mode = poisson-sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCount {
    pub bin: TimeBin,
    pub count: u32,
}

/// One observed bin of a station, with what was forecast for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub bin: TimeBin,
    pub observed: u32,
    pub baseline: f64,
    pub cluster: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_h1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_h2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSnapshot {
    pub station: StationId,
    /// Bins counted and filtered in this cycle, usually just the last one.
    pub observed: Vec<BinCount>,
    pub classification: Classification,
    pub cluster_switched: bool,
    /// True when the forecasts came from the centroid instead of a model.
    pub fallback: bool,
    pub filter: FilterState,
    pub arrivals: Vec<ArrivalForecast>,
    pub od: Vec<ODForecast>,
}

/// What the cycle handed the simulator; what-ifs rerun from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimInputs {
    pub start: NaiveDateTime,
    pub first_bin: u32,
    pub tick_s: u32,
    pub bin_s: u32,
    pub horizon_s: u32,
    pub seed: u64,
    pub arrival_mode: ArrivalMode,
    pub demand: Demand,
    pub trains: Vec<TrainState>,
}

impl SimInputs {
    pub fn config(&self, topology: &LineTopology) -> SimConfig {
        SimConfig {
            topology: topology.clone(),
            tick_s: self.tick_s,
            bin_s: self.bin_s,
            horizon_s: self.horizon_s,
            seed: self.seed,
            arrival_mode: self.arrival_mode,
            start: self.start,
            first_bin: self.first_bin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSnapshot {
    pub seq: u64,
    pub cycle_time: NaiveDateTime,
    pub last_observed_bin: TimeBin,
    pub stations: Vec<StationSnapshot>,
    pub sim: SimResult,
    pub sim_inputs: SimInputs,
    pub alerts: Vec<HotspotAlert>,
    pub denial: Vec<DenialEstimate>,
    pub model_versions: BTreeMap<String, String>,
}

impl CycleSnapshot {
    pub fn station(&self, id: &StationId) -> Option<&StationSnapshot> {
        self.stations.iter().find(|s| &s.station == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    /// Evaluate a gate closure against this cycle's simulation inputs.
    pub fn whatif(&self, topology: &LineTopology, plan: &GateClosurePlan) -> Result<WhatIfResult> {
        let config = self.sim_inputs.config(topology);
        evaluate_gate_closure(plan, &config, &self.sim_inputs.demand, &self.sim_inputs.trains)
    }
}

struct StationRuntime {
    id: StationId,
    clusters: ClusterSet,
    params: Vec<Option<StateSpaceParams>>,
    /// Centroid-only parameters per cluster.
    fallback: Vec<StateSpaceParams>,
    shares: ShareTable,
    day: Option<NaiveDate>,
    counts: Vec<u32>,
    next_bin: u32,
    cluster: usize,
    filter: FilterState,
    history: VecDeque<HistoryPoint>,
}

impl StationRuntime {
    fn params(&self, cluster: usize) -> (&StateSpaceParams, bool) {
        match &self.params[cluster] {
            Some(p) => (p, false),
            None => (&self.fallback[cluster], true),
        }
    }

    fn start_day(&mut self, day: NaiveDate, bins: usize) {
        self.day = Some(day);
        self.counts = vec![0; bins];
        self.next_bin = 0;
        self.cluster = self.clusters.largest_cluster();
        self.filter = FilterState::stationary(self.params(self.cluster).0);
    }
}

pub struct Engine {
    topology: LineTopology,
    clock: BinClock,
    calendar: EventCalendar,
    opts: EngineOptions,
    model_version: String,
    stations: Vec<StationRuntime>,
    index: HashMap<StationId, usize>,
    tap_buffer: Vec<TapEvent>,
    position_buffer: Vec<TrainPositionReport>,
    positions: BTreeMap<String, TrainPositionReport>,
    linker: JourneyLinker,
    pending: Vec<ForecastRecord>,
    joined: Vec<ForecastRecord>,
    last_cycle: Option<NaiveDateTime>,
    seq: u64,
    late_entries: u64,
}

impl Engine {
    pub fn new(topology: LineTopology, models: ModelSet, calendar: EventCalendar, opts: EngineOptions) -> Result<Self> {
        opts.validate()?;
        let clock = models.clock()?;
        let n_cov = topology.exog_schema().len();
        if calendar.schema().names() != topology.exog_schema().names() {
            return Err(Error::Config("event calendar schema differs from the topology's".into()));
        }
        let missing: Vec<String> =
            topology.stations().iter().filter(|s| !models.stations.contains_key(*s)).map(|s| s.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingModels(missing));
        }
        let mut stations = Vec::with_capacity(topology.len());
        for id in topology.stations() {
            let m = &models.stations[id];
            if m.params.len() != m.clusters.k {
                return Err(Error::Config(format!(
                    "{id}: {} parameter slots for {} clusters",
                    m.params.len(),
                    m.clusters.k
                )));
            }
            let fallback = m
                .clusters
                .centroids
                .iter()
                .map(|c| StateSpaceParams::baseline(n_cov, c.iter().sum::<f64>() / c.len() as f64))
                .collect();
            stations.push(StationRuntime {
                id: id.clone(),
                clusters: m.clusters.clone(),
                params: m.params.clone(),
                fallback,
                shares: m.shares.clone(),
                day: None,
                counts: Vec::new(),
                next_bin: 0,
                cluster: m.clusters.largest_cluster(),
                filter: FilterState::new(0.0, 0.0),
                history: VecDeque::new(),
            });
        }
        let index = topology.stations().iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let linker = JourneyLinker::new(LinkOptions::with_max_gap(chrono::Duration::hours(opts.max_gap_hours)));
        Ok(Self {
            topology,
            clock,
            calendar,
            opts,
            model_version: models.version,
            stations,
            index,
            tap_buffer: Vec::new(),
            position_buffer: Vec::new(),
            positions: BTreeMap::new(),
            linker,
            pending: Vec::new(),
            joined: Vec::new(),
            last_cycle: None,
            seq: 0,
            late_entries: 0,
        })
    }

    pub fn clock(&self) -> &BinClock {
        &self.clock
    }

    pub fn topology(&self) -> &LineTopology {
        &self.topology
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    pub fn last_cycle(&self) -> Option<NaiveDateTime> {
        self.last_cycle
    }

    /// Entry taps that arrived after their bin had already been filtered.
    pub fn late_entries(&self) -> u64 {
        self.late_entries
    }

    pub fn ingest_taps(&mut self, taps: impl IntoIterator<Item = TapEvent>) {
        self.tap_buffer.extend(taps);
    }

    pub fn ingest_positions(&mut self, reports: impl IntoIterator<Item = TrainPositionReport>) {
        self.position_buffer.extend(reports);
    }

    /// Forecasts issued but not yet matched with a count.
    pub fn pending(&self) -> &[ForecastRecord] {
        &self.pending
    }

    /// Take the forecasts joined with counts since the last call.
    pub fn drain_joined(&mut self) -> Vec<ForecastRecord> {
        std::mem::take(&mut self.joined)
    }

    pub fn history(&self, station: &StationId, n: usize) -> Result<Vec<HistoryPoint>> {
        let rt = &self.stations[*self.index.get(station).ok_or_else(|| Error::UnknownStation(station.to_string()))?];
        let skip = rt.history.len().saturating_sub(n);
        Ok(rt.history.iter().skip(skip).cloned().collect())
    }

    /// Filter states by station, for warm restarts.
    pub fn checkpoint(&self) -> BTreeMap<StationId, FilterState> {
        self.stations.iter().map(|s| (s.id.clone(), s.filter.clone())).collect()
    }

    /// Poll the feeds up to `now`, then run the cycle.
    pub fn cycle_from(
        &mut self,
        now: NaiveDateTime,
        taps: &mut dyn Feed<TapEvent>,
        positions: &mut dyn Feed<TrainPositionReport>,
    ) -> Result<CycleSnapshot> {
        self.ingest_taps(taps.poll(now)?);
        self.ingest_positions(positions.poll(now)?);
        self.run_cycle(now)
    }

    pub fn run_cycle(&mut self, now: NaiveDateTime) -> Result<CycleSnapshot> {
        if !self.clock.is_boundary(now) {
            return Err(Error::Config(format!("cycle time {now} is not a bin boundary")));
        }
        if self.last_cycle.is_some_and(|prev| now <= prev) {
            return Err(Error::Config(format!("cycle time {now} does not advance")));
        }
        let last = self.clock.bin_of(now).prev();
        let bins = self.clock.bins_per_day() as usize;
        for rt in &mut self.stations {
            if rt.day != Some(last.service_day) {
                if let Some(d) = rt.day {
                    debug!(station = %rt.id, from = %d, to = %last.service_day, "new service day");
                }
                rt.start_day(last.service_day, bins);
            }
        }

        self.absorb_taps(now)?;
        let mut observed: Vec<Vec<BinCount>> = vec![Vec::new(); self.stations.len()];
        let mut classification: Vec<Option<Classification>> = vec![None; self.stations.len()];
        let mut switched = vec![false; self.stations.len()];
        let mut failed = vec![false; self.stations.len()];
        for i in 0..self.stations.len() {
            for b in self.stations[i].next_bin..=last.index {
                let bin = TimeBin::new(last.service_day, b, self.clock.bin_minutes())?;
                let (count, class, sw, ok) = self.observe(i, bin)?;
                observed[i].push(BinCount { bin, count });
                classification[i] = Some(class);
                switched[i] |= sw;
                failed[i] |= !ok;
            }
            self.stations[i].next_bin = last.index + 1;
        }

        let mut snaps = Vec::with_capacity(self.stations.len());
        let mut od_all = Vec::new();
        for i in 0..self.stations.len() {
            let (arrivals, od, fallback) = self.forecast_station(i, last, now, failed[i])?;
            od_all.extend(od.iter().cloned());
            let rt = &self.stations[i];
            let class = match classification[i].take() {
                Some(c) => c,
                None => classify_partial(&counts_f64(&rt.counts[..=last.index as usize]), &rt.clusters)?,
            };
            snaps.push(StationSnapshot {
                station: rt.id.clone(),
                observed: std::mem::take(&mut observed[i]),
                classification: class,
                cluster_switched: switched[i],
                fallback,
                filter: rt.filter.clone(),
                arrivals,
                od,
            });
        }

        let (sim, sim_inputs, denial) = self.simulate(now, last, &od_all)?;
        let alerts = detect_hotspots(&sim, &self.opts.thresholds)?;
        self.seq += 1;
        self.last_cycle = Some(now);
        let mut model_versions = BTreeMap::new();
        model_versions.insert("models".to_string(), self.model_version.clone());
        Ok(CycleSnapshot {
            seq: self.seq,
            cycle_time: now,
            last_observed_bin: last,
            stations: snaps,
            sim,
            sim_inputs,
            alerts,
            denial,
            model_versions,
        })
    }

    /// Move buffered taps stamped before `now` into counts and journeys.
    fn absorb_taps(&mut self, now: NaiveDateTime) -> Result<()> {
        self.tap_buffer.sort_by_key(|t| t.timestamp);
        let split = self.tap_buffer.partition_point(|t| t.timestamp < now);
        let ready: Vec<TapEvent> = self.tap_buffer.drain(..split).collect();
        let mut journeys: BTreeMap<(usize, u32), Vec<crate::ingest::Journey>> = BTreeMap::new();
        for tap in &ready {
            let Some(&i) = self.index.get(&tap.station) else {
                warn!(station = %tap.station, "tap at a station outside the line");
                continue;
            };
            if tap.is_entry() {
                let bin = self.clock.bin_of(tap.timestamp);
                let rt = &mut self.stations[i];
                if Some(bin.service_day) == rt.day {
                    rt.counts[bin.index as usize] += 1;
                    if bin.index < rt.next_bin {
                        self.late_entries += 1;
                    }
                } else {
                    self.late_entries += 1;
                }
            }
            if let Some(j) = self.linker.push(tap) {
                if let Some(&o) = self.index.get(&j.origin) {
                    journeys.entry((o, self.clock.bin_of(j.entry_time).index)).or_default().push(j);
                }
            }
        }
        self.linker.expire(now);
        for ((o, bin), js) in journeys {
            self.stations[o].shares.update_online(bin, &js, self.opts.od_lambda)?;
        }
        Ok(())
    }

    /// Count, join, classify and filter one closed bin of station `i`.
    fn observe(&mut self, i: usize, bin: TimeBin) -> Result<(u32, Classification, bool, bool)> {
        let rt = &mut self.stations[i];
        let y = rt.counts[bin.index as usize];
        let mut predicted = [None, None];
        let mut k = 0;
        while k < self.pending.len() {
            if self.pending[k].station == rt.id && self.pending[k].target_bin == bin {
                let mut r = self.pending.swap_remove(k);
                r.observed = Some(y);
                predicted[usize::from(r.horizon.steps()) - 1] = Some(r.clamped_point);
                self.joined.push(r);
            } else {
                k += 1;
            }
        }

        let class = classify_partial(&counts_f64(&rt.counts[..=bin.index as usize]), &rt.clusters)?;
        let switched = class.cluster_id != rt.cluster;
        if switched {
            info!(station = %rt.id, from = rt.cluster, to = class.cluster_id, bin = bin.index, "cluster switch");
            rt.cluster = class.cluster_id;
        }
        let centroid = rt.clusters.centroids[rt.cluster][bin.index as usize];
        let x = self.calendar.exog_at(&rt.id, bin, &self.clock);
        let (params, _) = rt.params(rt.cluster);
        let ok = match filter_update(&rt.filter, params, f64::from(y), centroid, &x) {
            Ok(step) => {
                rt.filter = step.state;
                true
            }
            Err(e) => {
                warn!(station = %rt.id, error = %e, "filter update failed, falling back to the centroid");
                rt.filter = FilterState::stationary(&rt.fallback[rt.cluster]);
                false
            }
        };
        rt.filter.last_bin = Some(bin);
        rt.history.push_back(HistoryPoint {
            bin,
            observed: y,
            baseline: centroid,
            cluster: rt.cluster,
            predicted_h1: predicted[0],
            predicted_h2: predicted[1],
        });
        while rt.history.len() > self.opts.history_bins {
            rt.history.pop_front();
        }
        Ok((y, class, switched, ok))
    }

    fn forecast_station(
        &mut self,
        i: usize,
        last: TimeBin,
        now: NaiveDateTime,
        failed: bool,
    ) -> Result<(Vec<ArrivalForecast>, Vec<ODForecast>, bool)> {
        let rt = &self.stations[i];
        let c = rt.cluster;
        let (mut params, mut fallback) = rt.params(c);
        if failed {
            (params, fallback) = (&rt.fallback[c], true);
        }
        let mut arrivals = Vec::with_capacity(2);
        let mut od = Vec::with_capacity(2);
        for h in Horizon::ALL {
            let target = last.offset(i64::from(h.steps()));
            let centroid = rt.clusters.centroids[c][target.index as usize];
            let x = self.calendar.exog_at(&rt.id, target, &self.clock);
            let pred = match predict(&rt.filter, params, centroid, &x, h) {
                Ok(p) => p,
                Err(e) => {
                    warn!(station = %rt.id, error = %e, "prediction failed, using the centroid");
                    fallback = true;
                    predict(&FilterState::stationary(&rt.fallback[c]), &rt.fallback[c], centroid, &x, h)?
                }
            };
            let f = ArrivalForecast::new(rt.id.clone(), last, h, pred, centroid);
            od.push(forecast_od(&f, rt.shares.period_for(target.index)?)?);
            self.pending.push(ForecastRecord::issue(&f, now, c, fallback));
            arrivals.push(f);
        }
        Ok((arrivals, od, fallback))
    }

    fn simulate(
        &mut self,
        now: NaiveDateTime,
        last: TimeBin,
        od: &[ODForecast],
    ) -> Result<(SimResult, SimInputs, Vec<DenialEstimate>)> {
        let s = &self.opts.sim;
        let bin_s = self.clock.bin_seconds();
        let first = last.next();
        let demand = Demand::from_od(&self.topology, od, first, s.horizon_bins as usize)?;
        let config = SimConfig {
            topology: self.topology.clone(),
            tick_s: s.tick_s,
            bin_s,
            horizon_s: s.horizon_bins * bin_s,
            seed: s.seed.wrapping_add((now.and_utc().timestamp() / i64::from(bin_s)) as u64),
            arrival_mode: s.arrival_mode,
            start: now,
            first_bin: first.index,
        };
        config.validate()?;

        self.position_buffer.sort_by_key(|r| r.timestamp);
        let split = self.position_buffer.partition_point(|r| r.timestamp <= now);
        for r in self.position_buffer.drain(..split) {
            self.positions.insert(r.train_id.clone(), r);
        }
        let fresh = chrono::Duration::seconds(i64::from(bin_s));
        self.positions.retain(|_, r| now - r.timestamp < fresh);
        let reports: Vec<TrainPositionReport> = self
            .positions
            .values()
            .map(|r| TrainPositionReport {
                offset_s: r.offset_s + (now - r.timestamp).num_milliseconds() as f64 / 1000.0,
                ..r.clone()
            })
            .collect();
        let trains = init_trains(&reports, &self.topology, config.tick_s, config.horizon_ticks(), |st| {
            demand.onboard_weights(st)
        })?;

        let sim = mesosim::run(&config, &demand, trains.clone())?;
        let mut denial = Vec::new();
        let runs = if s.ensemble_runs > 0 {
            mesosim::run_ensemble(&config, &demand, &trains, s.ensemble_runs)?
        } else {
            Vec::new()
        };
        for p in &sim.platforms {
            denial.push(if runs.is_empty() {
                denial_probability(&sim, &p.station, p.bin)?
            } else {
                denial_probability_ensemble(&runs, &p.station, p.bin)?
            });
        }
        let inputs = SimInputs {
            start: now,
            first_bin: first.index,
            tick_s: config.tick_s,
            bin_s,
            horizon_s: config.horizon_s,
            seed: config.seed,
            arrival_mode: config.arrival_mode,
            demand,
            trains,
        };
        Ok((sim, inputs, denial))
    }
}

fn counts_f64(c: &[u32]) -> Vec<f64> {
    c.iter().map(|&v| f64::from(v)).collect()
}

/// Everything a replay produced.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub snapshots: Vec<CycleSnapshot>,
    pub records: Vec<ForecastRecord>,
    pub report: AccuracyReport,
}

/// Drive the engine over `[from, to]` one bin boundary at a time, pulling
/// taps and positions from the feeds. `on_cycle` sees each snapshot and the
/// forecasts joined during that cycle.
pub fn replay(
    engine: &mut Engine,
    taps: &mut dyn Feed<TapEvent>,
    positions: &mut dyn Feed<TrainPositionReport>,
    from: NaiveDateTime,
    to: NaiveDateTime,
    mut on_cycle: impl FnMut(&CycleSnapshot, &[ForecastRecord]) -> Result<()>,
) -> Result<ReplayOutcome> {
    let step = chrono::Duration::seconds(i64::from(engine.clock().bin_seconds()));
    let mut now = from;
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    while now <= to {
        let snap = engine.cycle_from(now, taps, positions)?;
        let joined = engine.drain_joined();
        on_cycle(&snap, &joined)?;
        records.extend(joined);
        snapshots.push(snap);
        now += step;
    }
    let report = evaluate_accuracy(&records);
    Ok(ReplayOutcome { snapshots, records, report })
}

#[cfg(test)]
mod tests;
