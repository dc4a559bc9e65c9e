//! Operator-facing products computed from simulation output: crowding
//! hotspots, entrance-denial probabilities and gate-closure what-ifs.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesosim::{run_arrivals, Arrival, Demand, SimConfig, SimResult, Totals, TrainState};
use crate::network::StationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Peak platform queue in the bin.
    PlatformOccupancy,
    LeftBehind,
}

/// Alert thresholds. Both are required; there are no built-in defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub platform_occupancy: f64,
    pub left_behind: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("platform_occupancy", self.platform_occupancy), ("left_behind", self.left_behind)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("threshold {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotAlert {
    pub station: StationId,
    pub bin: u32,
    pub metric: Metric,
    pub value: f64,
    pub threshold: f64,
    pub severity: f64,
}

/// One alert per (station, bin, metric) at or above its threshold, most
/// severe first, ties by station id then bin.
pub fn detect_hotspots(sim: &SimResult, thresholds: &Thresholds) -> Result<Vec<HotspotAlert>> {
    thresholds.validate()?;
    let mut alerts = Vec::new();
    for p in &sim.platforms {
        for (metric, value, threshold) in [
            (Metric::PlatformOccupancy, p.waiting_max as f64, thresholds.platform_occupancy),
            (Metric::LeftBehind, p.left_behind as f64, thresholds.left_behind),
        ] {
            if value >= threshold {
                alerts.push(HotspotAlert {
                    station: p.station.clone(),
                    bin: p.bin,
                    metric,
                    value,
                    threshold,
                    severity: value / threshold,
                });
            }
        }
    }
    alerts.sort_by(|a, b| {
        b.severity
            .total_cmp(&a.severity)
            .then_with(|| a.station.cmp(&b.station))
            .then(a.bin.cmp(&b.bin))
            .then(a.metric.cmp(&b.metric))
    });
    Ok(alerts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialMethod {
    Ratio,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenialEstimate {
    pub station: StationId,
    pub bin: u32,
    pub probability: f64,
    pub method: DenialMethod,
}

fn denial_ratio(sim: &SimResult, station: &StationId, bin: u32) -> Result<f64> {
    let p = sim
        .platform(station, bin)
        .ok_or_else(|| Error::OutOfRange(format!("no simulated bin {bin} for station {station}")))?;
    let exposed = p.queue_at_start + p.arrivals;
    Ok(if exposed == 0 { 0.0 } else { p.left_behind_unique as f64 / exposed as f64 })
}

/// Share of passengers on the platform during the bin who were left behind
/// at least once.
pub fn denial_probability(sim: &SimResult, station: &StationId, bin: u32) -> Result<DenialEstimate> {
    Ok(DenialEstimate {
        station: station.clone(),
        bin,
        probability: denial_ratio(sim, station, bin)?,
        method: DenialMethod::Ratio,
    })
}

/// Mean of the per-run ratio over an ensemble.
pub fn denial_probability_ensemble(runs: &[SimResult], station: &StationId, bin: u32) -> Result<DenialEstimate> {
    if runs.is_empty() {
        return Err(Error::Config("empty ensemble".into()));
    }
    let sum = runs.iter().map(|r| denial_ratio(r, station, bin)).sum::<Result<f64>>()?;
    Ok(DenialEstimate {
        station: station.clone(),
        bin,
        probability: sum / runs.len() as f64,
        method: DenialMethod::Ensemble,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Upstream,
    Downstream,
}

/// What happens to passengers who find the gates closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Handling {
    /// Wait outside and enter when the gates reopen, in arrival order.
    Defer,
    /// `fraction` walk to the adjacent station on `toward`; the rest defer.
    Divert {
        fraction: f64,
        #[serde(default)]
        toward: Side,
    },
    /// Give up on the trip.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateClosurePlan {
    pub station: StationId,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub handling: Handling,
    /// Station whose crowding the closure is meant to relieve. Defaults to
    /// the next station down the line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<StationId>,
}

impl GateClosurePlan {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Where the passengers caught by the closure went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransformReport {
    /// Arrivals at the closed station inside the window.
    pub affected: u64,
    pub released: u64,
    /// Deferred passengers whose release falls after the horizon.
    pub still_deferred: u64,
    pub diverted: u64,
    /// Diverted passengers whose new origin is already their destination.
    pub diverted_walked: u64,
    pub dropped: u64,
}

/// Rewrite an arrival stream for a gate closure. Returns the treated stream
/// and the accounting of affected passengers.
pub fn apply_gate_closure(
    plan: &GateClosurePlan,
    config: &SimConfig,
    arrivals: &[Arrival],
) -> Result<(Vec<Arrival>, TransformReport)> {
    let topo = &config.topology;
    let s = topo.require(&plan.station)?;
    if plan.end < plan.start {
        return Err(Error::Plan("closure ends before it starts".into()));
    }
    let horizon_end = config.start + chrono::Duration::seconds(i64::from(config.horizon_s));
    if plan.start < config.start || plan.end > horizon_end {
        return Err(Error::Plan(format!(
            "closure window {} - {} outside the simulated horizon {} - {}",
            plan.start, plan.end, config.start, horizon_end
        )));
    }
    let divert_to = match plan.handling {
        Handling::Divert { fraction, toward } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Plan(format!("divert fraction must be in [0, 1], got {fraction}")));
            }
            let adj = match toward {
                Side::Upstream => s.checked_sub(1),
                Side::Downstream => Some(s + 1).filter(|&i| i < topo.len()),
            };
            Some((fraction, adj.ok_or_else(|| Error::Plan(format!("{} has no {toward:?} neighbour", plan.station)))?))
        }
        _ => None,
    };
    let (open_tick, close_tick) = (config.tick_at(plan.start), config.tick_at(plan.end));
    let horizon = i64::from(config.horizon_ticks());

    let mut report = TransformReport::default();
    let mut keyed: Vec<(u32, u8, usize, Arrival)> = Vec::with_capacity(arrivals.len());
    let mut seen = 0u64;
    for (i, a) in arrivals.iter().enumerate() {
        let t = i64::from(a.tick);
        if a.origin != s || t < open_tick || t >= close_tick {
            keyed.push((a.tick, 1, i, *a));
            continue;
        }
        report.affected += u64::from(a.count);
        let mut deferred = a.count;
        match plan.handling {
            Handling::Drop => {
                report.dropped += u64::from(a.count);
                continue;
            }
            Handling::Divert { .. } => {
                let (fraction, adj) = divert_to.expect("checked above");
                // Cumulative rounding keeps the diverted total at round-down of fraction * affected.
                let target = (fraction * (seen + u64::from(a.count)) as f64 + 1e-9).floor() as u64;
                let moved = (target - report.diverted.min(target)).min(u64::from(a.count)) as u32;
                seen += u64::from(a.count);
                report.diverted += u64::from(moved);
                deferred -= moved;
                if moved > 0 {
                    if a.dest > adj {
                        keyed.push((a.tick, 1, i, Arrival { origin: adj, count: moved, ..*a }));
                    } else {
                        report.diverted_walked += u64::from(moved);
                    }
                }
            }
            Handling::Defer => {}
        }
        if deferred == 0 {
            continue;
        }
        if close_tick >= horizon {
            report.still_deferred += u64::from(deferred);
        } else {
            report.released += u64::from(deferred);
            keyed.push((close_tick as u32, 0, i, Arrival { tick: close_tick as u32, count: deferred, ..*a }));
        }
    }
    keyed.sort_by_key(|k| (k.0, k.1, k.2));
    Ok((keyed.into_iter().map(|k| k.3).collect(), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSummary {
    pub station: StationId,
    pub arrivals: u64,
    pub waiting_max: u64,
    pub left_behind: u64,
    pub left_behind_unique: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub totals: Totals,
    pub stations: Vec<StationSummary>,
}

impl SimSummary {
    pub fn of(sim: &SimResult) -> Self {
        let stations = sim
            .stations
            .iter()
            .map(|st| {
                let rows = sim.station_rows(st);
                StationSummary {
                    station: st.clone(),
                    arrivals: rows.iter().map(|p| p.arrivals).sum(),
                    waiting_max: rows.iter().map(|p| p.waiting_max).max().unwrap_or(0),
                    left_behind: rows.iter().map(|p| p.left_behind).sum(),
                    left_behind_unique: rows.iter().map(|p| p.left_behind_unique).sum(),
                }
            })
            .collect();
        Self { totals: sim.totals, stations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub station: StationId,
    pub bin: u32,
    /// treated minus baseline
    pub waiting_max: i64,
    pub left_behind: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub plan: GateClosurePlan,
    pub baseline: SimSummary,
    pub treated: SimSummary,
    pub deltas: Vec<CellDelta>,
    pub target_station: StationId,
    /// Baseline minus treated peak queue at the target over the bins the
    /// window touches.
    pub target_station_improvement: f64,
    pub transform: TransformReport,
}

/// Both runs behind a what-if, for callers that need more than the summary.
#[derive(Debug, Clone)]
pub struct GateClosureRuns {
    pub baseline: SimResult,
    pub treated: SimResult,
    pub result: WhatIfResult,
}

pub fn evaluate_gate_closure(
    plan: &GateClosurePlan,
    config: &SimConfig,
    demand: &Demand,
    trains: &[TrainState],
) -> Result<WhatIfResult> {
    run_gate_closure(plan, config, demand, trains).map(|r| r.result)
}

/// Simulate baseline and treated from the same arrival stream and seed; they
/// differ only by the plan's rewrite of that stream.
pub fn run_gate_closure(
    plan: &GateClosurePlan,
    config: &SimConfig,
    demand: &Demand,
    trains: &[TrainState],
) -> Result<GateClosureRuns> {
    let topo = &config.topology;
    let s = topo.require(&plan.station)?;
    let target = match &plan.target {
        Some(t) => {
            topo.require(t)?;
            t.clone()
        }
        None => topo.stations()[(s + 1).min(topo.len() - 1)].clone(),
    };
    let arrivals = config.arrivals(demand)?;
    let (treated_arrivals, transform) = apply_gate_closure(plan, config, &arrivals)?;
    let (baseline, treated) = rayon::join(
        || run_arrivals(config, &arrivals, trains.to_vec()),
        || run_arrivals(config, &treated_arrivals, trains.to_vec()),
    );
    let (baseline, treated) = (baseline?, treated?);

    let deltas = baseline
        .platforms
        .iter()
        .zip(&treated.platforms)
        .map(|(b, t)| CellDelta {
            station: b.station.clone(),
            bin: b.bin,
            waiting_max: t.waiting_max as i64 - b.waiting_max as i64,
            left_behind: t.left_behind as i64 - b.left_behind as i64,
        })
        .collect();

    let tpb = i64::from(config.ticks_per_bin());
    let (a, b) = (config.tick_at(plan.start), config.tick_at(plan.end));
    let window: Vec<u32> =
        if b > a { (a / tpb..=(b - 1) / tpb).map(|k| config.first_bin + k as u32).collect() } else { Vec::new() };
    let peak = |r: &SimResult| {
        r.station_rows(&target).iter().filter(|p| window.contains(&p.bin)).map(|p| p.waiting_max).max().unwrap_or(0)
            as f64
    };
    let result = WhatIfResult {
        plan: plan.clone(),
        baseline: SimSummary::of(&baseline),
        treated: SimSummary::of(&treated),
        deltas,
        target_station_improvement: peak(&baseline) - peak(&treated),
        target_station: target,
        transform,
    };
    Ok(GateClosureRuns { baseline, treated, result })
}

/// Per-station change in peak queue and total left-behind, treated minus
/// baseline.
pub fn delta_by_station(result: &WhatIfResult) -> BTreeMap<StationId, (i64, i64)> {
    result
        .baseline
        .stations
        .iter()
        .zip(&result.treated.stations)
        .map(|(b, t)| {
            (
                b.station.clone(),
                (t.waiting_max as i64 - b.waiting_max as i64, t.left_behind as i64 - b.left_behind as i64),
            )
        })
        .collect()
}

/// Three-station line whose first station fills the trains during a peak
/// bin, so passengers at the middle station are left behind. Returns the
/// config (07:30-08:30, 15-minute bins), demand and a closure of the first
/// station for the 07:45 peak bin.
pub fn upstream_overload_scenario() -> (SimConfig, Demand, GateClosurePlan) {
    use crate::network::{ExogSchema, LineTopology};

    let topology = LineTopology::new(
        vec!["S1".into(), "S2".into(), "S3".into()],
        vec![30.0; 3],
        vec![90.0; 2],
        100,
        120.0,
        ExogSchema::default(),
    )
    .expect("valid line");
    let start: NaiveDateTime = "2013-02-05T07:30:00".parse().expect("valid instant");
    let mut config = SimConfig::new(topology, 3600);
    config.start = start;
    config.first_bin = 30;
    let mut demand = Demand::zeros(3, 4);
    for (b, s1) in [300.0, 800.0, 300.0, 200.0].into_iter().enumerate() {
        demand.set(b, 0, 2, s1).expect("valid cell");
        demand.set(b, 1, 2, 150.0).expect("valid cell");
    }
    let plan = GateClosurePlan {
        station: "S1".into(),
        start: start + chrono::Duration::minutes(15),
        end: start + chrono::Duration::minutes(30),
        handling: Handling::Defer,
        target: Some("S2".into()),
    };
    (config, demand, plan)
}
