//! Meso-scale simulation of one directed line: individual trains with fixed
//! run and dwell times, passengers as FIFO groups on each platform.
//!
//! Time advances in ticks (10 s by default). Run, dwell and headway times are
//! rounded to whole ticks, at least one each. Within a tick, arrivals join
//! their platform first, then trains advance in list order; boarding happens
//! at departure so anyone who turned up during the dwell can still get on.

mod demand;
mod train;

use std::io::Write;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use demand::{arrival_stream, Arrival, ArrivalMode, Demand};
pub use train::{
    board_alight, init_trains, spawn_schedule, split_load, BoardOutcome, Group, PlatformState, Position, TrainState,
};

use crate::error::{Error, Result};
use crate::network::{LineTopology, StationId};
use train::ticks;

pub const DEFAULT_TICK_S: u32 = 10;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: LineTopology,
    pub tick_s: u32,
    pub bin_s: u32,
    pub horizon_s: u32,
    pub seed: u64,
    pub arrival_mode: ArrivalMode,
    /// Wall-clock instant of tick 0, used for gate-closure windows.
    pub start: NaiveDateTime,
    /// Time-of-day bin index of the first simulated bin, used in outputs.
    pub first_bin: u32,
}

impl SimConfig {
    pub fn new(topology: LineTopology, horizon_s: u32) -> Self {
        Self {
            topology,
            tick_s: DEFAULT_TICK_S,
            bin_s: 900,
            horizon_s,
            seed: 0,
            arrival_mode: ArrivalMode::ExpectedFlow,
            start: NaiveDateTime::default(),
            first_bin: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_s == 0 || self.bin_s == 0 || self.horizon_s == 0 {
            return Err(Error::Config("tick_s, bin_s and horizon_s must be > 0".into()));
        }
        if !self.bin_s.is_multiple_of(self.tick_s) {
            return Err(Error::Config(format!("bin_s {} is not a multiple of tick_s {}", self.bin_s, self.tick_s)));
        }
        Ok(())
    }

    pub fn ticks_per_bin(&self) -> u32 {
        self.bin_s / self.tick_s
    }

    pub fn horizon_ticks(&self) -> u32 {
        self.horizon_s.div_ceil(self.tick_s)
    }

    pub fn n_bins(&self) -> usize {
        self.horizon_ticks().div_ceil(self.ticks_per_bin()) as usize
    }

    /// First tick at or after `instant`, relative to `start`. May be negative
    /// or beyond the horizon.
    pub fn tick_at(&self, instant: NaiveDateTime) -> i64 {
        let ms = (instant - self.start).num_milliseconds();
        let per = i64::from(self.tick_s) * 1000;
        ms.div_euclid(per) + i64::from(ms.rem_euclid(per) != 0)
    }

    pub fn arrivals(&self, demand: &Demand) -> Result<Vec<Arrival>> {
        self.validate()?;
        if demand.n_stations() != self.topology.len() {
            return Err(Error::Simulation("demand grid does not match the topology".into()));
        }
        arrival_stream(demand, self.arrival_mode, self.ticks_per_bin(), self.horizon_ticks(), self.seed)
    }

    pub fn default_trains(&self) -> Vec<TrainState> {
        spawn_schedule(&self.topology, self.tick_s, self.horizon_ticks())
    }
}

/// Platform statistics for one station and bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformBin {
    pub station: StationId,
    pub bin: u32,
    /// Mean queue length over the bin's ticks, sampled after each tick.
    pub waiting_avg: f64,
    pub waiting_max: u64,
    /// Passengers still queued when a train left, summed over departures.
    pub left_behind: u64,
    /// Distinct passengers left behind at least once in this bin.
    pub left_behind_unique: u64,
    pub arrivals: u64,
    pub queue_at_start: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Departure {
    pub train_id: String,
    pub station: StationId,
    pub depart_s: u32,
    pub load: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    /// Passengers that reached a platform during the run.
    pub generated: u64,
    /// Passengers already aboard reported trains at tick 0.
    pub initial_onboard: u64,
    pub onboard: u64,
    pub alighted: u64,
    pub waiting: u64,
}

impl Totals {
    pub fn balanced(&self) -> bool {
        self.generated + self.initial_onboard == self.onboard + self.alighted + self.waiting
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub seed: u64,
    pub tick_s: u32,
    pub bin_s: u32,
    pub horizon_s: u32,
    pub first_bin: u32,
    pub stations: Vec<StationId>,
    /// Station-major, then bin.
    pub platforms: Vec<PlatformBin>,
    /// Train departures in time order; `load` is the load leaving the station.
    pub departures: Vec<Departure>,
    pub totals: Totals,
}

impl SimResult {
    pub fn n_bins(&self) -> usize {
        self.platforms.len() / self.stations.len().max(1)
    }

    pub fn station_rows(&self, station: &StationId) -> &[PlatformBin] {
        let nb = self.n_bins();
        match self.stations.iter().position(|s| s == station) {
            Some(i) => &self.platforms[i * nb..(i + 1) * nb],
            None => &[],
        }
    }

    pub fn platform(&self, station: &StationId, bin: u32) -> Option<&PlatformBin> {
        self.station_rows(station).iter().find(|p| p.bin == bin)
    }

    pub fn left_behind_total(&self, station: &StationId) -> u64 {
        self.station_rows(station).iter().map(|p| p.left_behind).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sim result serializes")
    }

    /// `station,bin,waiting_avg,waiting_max,left_behind,arrivals`
    pub fn write_platform_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["station", "bin", "waiting_avg", "waiting_max", "left_behind", "arrivals"])?;
        for p in &self.platforms {
            w.write_record([
                p.station.to_string(),
                p.bin.to_string(),
                p.waiting_avg.to_string(),
                p.waiting_max.to_string(),
                p.left_behind.to_string(),
                p.arrivals.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `train_id,station,depart_s,load`
    pub fn write_trains_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train_id", "station", "depart_s", "load"])?;
        for d in &self.departures {
            w.write_record([d.train_id.clone(), d.station.to_string(), d.depart_s.to_string(), d.load.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default, Clone)]
struct BinStats {
    waiting_sum: u64,
    waiting_max: u64,
    left_behind: u64,
    left_behind_unique: u64,
    arrivals: u64,
    queue_at_start: u64,
}

/// Expand `demand` per the config's arrival mode and simulate.
pub fn run(config: &SimConfig, demand: &Demand, trains: Vec<TrainState>) -> Result<SimResult> {
    let arrivals = config.arrivals(demand)?;
    run_arrivals(config, &arrivals, trains)
}

/// Simulate a ready-made arrival stream (sorted by tick).
pub fn run_arrivals(config: &SimConfig, arrivals: &[Arrival], mut trains: Vec<TrainState>) -> Result<SimResult> {
    config.validate()?;
    let topo = &config.topology;
    let n = topo.len();
    let tpb = config.ticks_per_bin();
    let horizon = config.horizon_ticks();
    let n_bins = config.n_bins();
    let dwell: Vec<u32> = topo.dwell_s().iter().map(|&d| ticks(d, config.tick_s)).collect();
    let run: Vec<u32> = topo.run_s().iter().map(|&r| ticks(r, config.tick_s)).collect();

    for a in arrivals {
        if a.origin >= n || a.dest >= n || a.dest <= a.origin {
            return Err(Error::Simulation(format!("arrival {}->{} is not a downstream trip", a.origin, a.dest)));
        }
    }
    if arrivals.windows(2).any(|w| w[0].tick > w[1].tick) {
        return Err(Error::Simulation("arrival stream is not sorted by tick".into()));
    }
    for t in &trains {
        if t.load_by_dest.len() != n || t.load() > t.capacity {
            return Err(Error::Simulation(format!("train {} does not fit the line", t.train_id)));
        }
    }

    let mut platforms: Vec<PlatformState> = (0..n).map(PlatformState::new).collect();
    let mut stats = vec![BinStats::default(); n * n_bins];
    let mut departures = Vec::new();
    let mut generated = 0u64;
    let mut alighted = 0u64;
    let mut next_arrival = 0;
    let initial_onboard: u64 = trains.iter().map(|t| u64::from(t.load())).sum();
    let mut totals = Totals { initial_onboard, ..Totals::default() };

    for tick in 0..horizon {
        let bin = tick / tpb;
        if tick % tpb == 0 {
            for (s, p) in platforms.iter().enumerate() {
                stats[s * n_bins + bin as usize].queue_at_start = p.waiting();
            }
        }
        while let Some(a) = arrivals.get(next_arrival).filter(|a| a.tick <= tick) {
            next_arrival += 1;
            if a.tick < tick || a.count == 0 {
                continue;
            }
            platforms[a.origin].push(Group { dest: a.dest, count: a.count, arrival_tick: tick, denied_in_bin: None });
            stats[a.origin * n_bins + bin as usize].arrivals += u64::from(a.count);
            generated += u64::from(a.count);
        }

        for train in trains.iter_mut() {
            match train.position {
                Position::Scheduled { spawn_tick } if spawn_tick == tick => {
                    train.position = Position::Dwelling { station: 0, depart_tick: tick + dwell[0] };
                }
                Position::Running { from, arrive_tick } if arrive_tick <= tick => {
                    let s = from + 1;
                    train.position = Position::Dwelling { station: s, depart_tick: tick + dwell[s] };
                }
                Position::Dwelling { station, depart_tick } if depart_tick == tick => {
                    let platform = &mut platforms[station];
                    let out = board_alight(train, platform);
                    alighted += u64::from(out.alighted);
                    if train.load() > train.capacity {
                        return Err(Error::Simulation(format!("train {} over capacity", train.train_id)));
                    }
                    if out.denied > 0 {
                        let st = &mut stats[station * n_bins + bin as usize];
                        st.left_behind += u64::from(out.denied);
                        for g in platform.queue.iter_mut().filter(|g| g.denied_in_bin != Some(bin)) {
                            g.denied_in_bin = Some(bin);
                            st.left_behind_unique += u64::from(g.count);
                        }
                    }
                    departures.push(Departure {
                        train_id: train.train_id.clone(),
                        station: topo.stations()[station].clone(),
                        depart_s: tick * config.tick_s,
                        load: train.load(),
                    });
                    train.position = if station + 1 == n {
                        Position::Retired
                    } else {
                        Position::Running { from: station, arrive_tick: tick + run[station] }
                    };
                }
                _ => {}
            }
        }

        let mut waiting = 0;
        for (s, p) in platforms.iter().enumerate() {
            let w = p.waiting();
            let st = &mut stats[s * n_bins + bin as usize];
            st.waiting_sum += w;
            st.waiting_max = st.waiting_max.max(w);
            waiting += w;
        }
        totals = Totals {
            generated,
            initial_onboard,
            onboard: trains.iter().map(|t| u64::from(t.load())).sum(),
            alighted,
            waiting,
        };
        if !totals.balanced() {
            return Err(Error::Simulation(format!("passenger conservation broken at tick {tick}")));
        }
    }

    let mut rows = Vec::with_capacity(n * n_bins);
    for (s, station) in topo.stations().iter().enumerate() {
        for b in 0..n_bins {
            let st = &stats[s * n_bins + b];
            let first = b as u32 * tpb;
            let len = (first + tpb).min(horizon) - first;
            rows.push(PlatformBin {
                station: station.clone(),
                bin: config.first_bin + b as u32,
                waiting_avg: st.waiting_sum as f64 / f64::from(len),
                waiting_max: st.waiting_max,
                left_behind: st.left_behind,
                left_behind_unique: st.left_behind_unique,
                arrivals: st.arrivals,
                queue_at_start: st.queue_at_start,
            });
        }
    }
    Ok(SimResult {
        seed: config.seed,
        tick_s: config.tick_s,
        bin_s: config.bin_s,
        horizon_s: config.horizon_s,
        first_bin: config.first_bin,
        stations: topo.stations().to_vec(),
        platforms: rows,
        departures,
        totals,
    })
}

/// `n_runs` Poisson-sampled runs with seeds `seed, seed + 1, ...`, in parallel.
pub fn run_ensemble(
    config: &SimConfig,
    demand: &Demand,
    trains: &[TrainState],
    n_runs: usize,
) -> Result<Vec<SimResult>> {
    if config.arrival_mode != ArrivalMode::PoissonSample {
        return Err(Error::Config("ensembles need poisson-sample arrivals".into()));
    }
    if n_runs == 0 {
        return Err(Error::Config("ensemble needs at least one run".into()));
    }
    (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig { seed: config.seed.wrapping_add(i), ..config.clone() };
            run(&cfg, demand, trains.to_vec())
        })
        .collect()
}
