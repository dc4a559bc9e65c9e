use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::Result;
use crate::ingest::TrainPositionReport;
use crate::network::LineTopology;

/// Where a train is, in simulation ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Position {
    /// Enters service at the first station at `spawn_tick`.
    Scheduled {
        spawn_tick: u32,
    },
    Dwelling {
        station: usize,
        depart_tick: u32,
    },
    /// Left `from`, reaches the next station at `arrive_tick`.
    Running {
        from: usize,
        arrive_tick: u32,
    },
    /// Finished at the terminal.
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub train_id: String,
    pub position: Position,
    /// Passengers aboard by destination station index.
    pub load_by_dest: Vec<u32>,
    pub capacity: u32,
}

impl TrainState {
    pub fn load(&self) -> u32 {
        self.load_by_dest.iter().sum()
    }
}

/// Passengers waiting together with one destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub dest: usize,
    pub count: u32,
    pub arrival_tick: u32,
    /// Last bin in which this group was left behind, for distinct counting.
    pub denied_in_bin: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlatformState {
    pub station: usize,
    pub queue: VecDeque<Group>,
}

impl PlatformState {
    pub fn new(station: usize) -> Self {
        Self { station, queue: VecDeque::new() }
    }

    pub fn waiting(&self) -> u64 {
        self.queue.iter().map(|g| u64::from(g.count)).sum()
    }

    pub fn push(&mut self, group: Group) {
        if group.count > 0 {
            self.queue.push_back(group);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoardOutcome {
    pub boarded: u32,
    pub alighted: u32,
    pub denied: u32,
}

/// Alight everyone bound for this platform, then board the queue in FIFO
/// order up to capacity, splitting the group at the cut. Whoever is still
/// queued afterwards counts as denied.
pub fn board_alight(train: &mut TrainState, platform: &mut PlatformState) -> BoardOutcome {
    let s = platform.station;
    let alighted = std::mem::take(&mut train.load_by_dest[s]);
    let mut room = train.capacity.saturating_sub(train.load());
    let mut boarded = 0;
    while room > 0 {
        let Some(front) = platform.queue.front_mut() else {
            break;
        };
        let take = front.count.min(room);
        train.load_by_dest[front.dest] += take;
        front.count -= take;
        room -= take;
        boarded += take;
        if front.count == 0 {
            platform.queue.pop_front();
        }
    }
    let denied = platform.waiting() as u32;
    BoardOutcome { boarded, alighted, denied }
}

/// Split `load` over `weights` by largest remainder. Zero weights everywhere
/// fall back to an even split over `eligible`.
pub fn split_load(load: u32, weights: &[f64], eligible: &[usize]) -> Vec<u32> {
    let mut out = vec![0u32; weights.len()];
    if eligible.is_empty() || load == 0 {
        return out;
    }
    let total: f64 = eligible.iter().map(|&d| weights[d].max(0.0)).sum();
    let w = |d: usize| {
        if total > 0.0 {
            weights[d].max(0.0) / total
        } else {
            1.0 / eligible.len() as f64
        }
    };
    let mut rema = Vec::with_capacity(eligible.len());
    let mut assigned = 0u32;
    for &d in eligible {
        let exact = load as f64 * w(d);
        let whole = exact.floor() as u32;
        out[d] = whole;
        assigned += whole;
        rema.push((exact - whole as f64, d));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, d) in rema.iter().take((load - assigned) as usize) {
        out[d] += 1;
    }
    out
}

pub(crate) fn ticks(seconds: f64, tick_s: u32) -> u32 {
    ((seconds / tick_s as f64).round() as u32).max(1)
}

/// Trains at the start of a run. With position reports, one train per
/// report; otherwise trains enter at the first station every headway.
/// `weights(s)` gives the destination mix for a train that last left `s`.
pub fn init_trains(
    reports: &[TrainPositionReport],
    topology: &LineTopology,
    tick_s: u32,
    horizon_ticks: u32,
    weights: impl Fn(usize) -> Vec<f64>,
) -> Result<Vec<TrainState>> {
    let n = topology.len();
    let capacity = topology.capacity();
    if reports.is_empty() {
        return Ok(spawn_schedule(topology, tick_s, horizon_ticks));
    }
    let mut trains = Vec::with_capacity(reports.len());
    for r in reports {
        let s = topology.require(&r.last_station)?;
        if s + 1 == n {
            warn!(train = %r.train_id, "report past the terminal, train ignored");
            continue;
        }
        let run = ticks(topology.run_s()[s], tick_s);
        let elapsed = (r.offset_s.max(0.0) / tick_s as f64).round() as u32;
        let mut load = r.load_estimate.unwrap_or(0);
        if load > capacity {
            warn!(train = %r.train_id, load, capacity, "reported load above capacity, clamped");
            load = capacity;
        }
        let eligible: Vec<usize> = (s + 1..n).collect();
        trains.push(TrainState {
            train_id: r.train_id.clone(),
            position: Position::Running { from: s, arrive_tick: run.saturating_sub(elapsed) },
            load_by_dest: split_load(load, &weights(s), &eligible),
            capacity,
        });
    }
    if trains.is_empty() {
        return Ok(spawn_schedule(topology, tick_s, horizon_ticks));
    }
    Ok(trains)
}

/// Empty trains entering at the first station at `0, h, 2h, ...`.
pub fn spawn_schedule(topology: &LineTopology, tick_s: u32, horizon_ticks: u32) -> Vec<TrainState> {
    let headway = ticks(topology.headway_s(), tick_s);
    (0..horizon_ticks)
        .step_by(headway as usize)
        .enumerate()
        .map(|(i, t)| TrainState {
            train_id: format!("spawn-{:03}", i + 1),
            position: Position::Scheduled { spawn_tick: t },
            load_by_dest: vec![0; topology.len()],
            capacity: topology.capacity(),
        })
        .collect()
}
