use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::LineTopology;
use crate::od::ODForecast;
use crate::time::TimeBin;

/// Expected passenger flows per bin, indexed `[bin][origin][dest]` by
/// station position on the line. Only downstream trips are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    n_stations: usize,
    bins: Vec<Vec<f64>>,
    /// Expected flow that targeted stations behind the origin, so no train on
    /// this line could carry it.
    pub dropped_upstream: f64,
}

impl Demand {
    pub fn zeros(n_stations: usize, n_bins: usize) -> Self {
        Self { n_stations, bins: vec![vec![0.0; n_stations * n_stations]; n_bins], dropped_upstream: 0.0 }
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn get(&self, bin: usize, origin: usize, dest: usize) -> f64 {
        self.bins[bin][origin * self.n_stations + dest]
    }

    /// Set the expected flow; upstream or same-station trips are tallied as
    /// dropped instead.
    pub fn set(&mut self, bin: usize, origin: usize, dest: usize, flow: f64) -> Result<()> {
        if !(flow >= 0.0 && flow.is_finite()) {
            return Err(Error::Simulation(format!("flow must be finite and >= 0, got {flow}")));
        }
        if bin >= self.bins.len() || origin >= self.n_stations || dest >= self.n_stations {
            return Err(Error::OutOfRange(format!("demand cell ({bin}, {origin}, {dest})")));
        }
        if dest <= origin {
            self.dropped_upstream += flow;
        } else {
            self.bins[bin][origin * self.n_stations + dest] = flow;
        }
        Ok(())
    }

    /// Build a grid from OD forecasts targeting `first_bin .. first_bin + n_bins`.
    /// Every station needs a forecast for every bin.
    pub fn from_od(
        topology: &LineTopology,
        forecasts: &[ODForecast],
        first_bin: TimeBin,
        n_bins: usize,
    ) -> Result<Self> {
        let n = topology.len();
        let mut demand = Self::zeros(n, n_bins);
        let mut covered = vec![false; n * n_bins];
        for f in forecasts {
            let o = topology.require(&f.origin)?;
            let k = (0..n_bins).find(|&k| first_bin.offset(k as i64) == f.target_bin);
            let Some(k) = k else { continue };
            if covered[k * n + o] {
                return Err(Error::Simulation(format!(
                    "duplicate OD input for {} at bin {}",
                    f.origin, f.target_bin.index
                )));
            }
            covered[k * n + o] = true;
            for (dest, flow) in &f.flows {
                demand.set(k, o, topology.require(dest)?, *flow)?;
            }
        }
        if let Some(gap) = covered.iter().position(|c| !c) {
            return Err(Error::Simulation(format!(
                "no OD input for {} at bin {}",
                topology.stations()[gap % n],
                first_bin.offset((gap / n) as i64).index
            )));
        }
        Ok(demand)
    }

    /// Weights over destinations for passengers already aboard a train that
    /// departed station `s`: trips from `0..=s` to each station after `s`.
    pub fn onboard_weights(&self, s: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.n_stations];
        if let Some(first) = self.bins.first() {
            for o in 0..=s.min(self.n_stations - 1) {
                for d in s + 1..self.n_stations {
                    w[d] += first[o * self.n_stations + d];
                }
            }
        }
        w
    }
}

/// A group of passengers reaching the platform of `origin` at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub tick: u32,
    pub origin: usize,
    pub dest: usize,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalMode {
    #[default]
    ExpectedFlow,
    PoissonSample,
}

/// Expand a demand grid into a tick-ordered arrival stream.
///
/// Expected-flow mode spreads each bin's flow evenly over its ticks and
/// releases whole passengers as the running total crosses each integer.
/// Poisson mode draws a count per bin and cell, then a uniform tick for
/// every passenger.
pub fn arrival_stream(
    demand: &Demand,
    mode: ArrivalMode,
    ticks_per_bin: u32,
    horizon_ticks: u32,
    seed: u64,
) -> Result<Vec<Arrival>> {
    let n = demand.n_stations;
    let needed = horizon_ticks.div_ceil(ticks_per_bin) as usize;
    if needed > demand.n_bins() {
        return Err(Error::Simulation(format!(
            "horizon needs {needed} bins of demand, only {} available",
            demand.n_bins()
        )));
    }
    let mut out = Vec::new();
    match mode {
        ArrivalMode::ExpectedFlow => {
            let mut cum = vec![0.0f64; n * n];
            let mut emitted = vec![0u64; n * n];
            for tick in 0..horizon_ticks {
                let bin = &demand.bins[(tick / ticks_per_bin) as usize];
                for o in 0..n {
                    for d in o + 1..n {
                        let c = o * n + d;
                        cum[c] += bin[c] / ticks_per_bin as f64;
                        let whole = (cum[c] + 1e-9).floor() as u64;
                        if whole > emitted[c] {
                            out.push(Arrival { tick, origin: o, dest: d, count: (whole - emitted[c]) as u32 });
                            emitted[c] = whole;
                        }
                    }
                }
            }
        }
        ArrivalMode::PoissonSample => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in 0..needed as u32 {
                let first = b * ticks_per_bin;
                let last = (first + ticks_per_bin).min(horizon_ticks);
                // Only the part of the bin inside the horizon generates arrivals.
                let frac = (last - first) as f64 / ticks_per_bin as f64;
                for o in 0..n {
                    for d in o + 1..n {
                        let mean = demand.bins[b as usize][o * n + d] * frac;
                        if mean <= 0.0 {
                            continue;
                        }
                        let k =
                            Poisson::new(mean).map_err(|e| Error::Simulation(e.to_string()))?.sample(&mut rng) as u64;
                        for _ in 0..k {
                            out.push(Arrival { tick: rng.random_range(first..last), origin: o, dest: d, count: 1 });
                        }
                    }
                }
            }
            out.sort_by_key(|a| (a.tick, a.origin, a.dest));
            out.dedup_by(|next, prev| {
                let same = (next.tick, next.origin, next.dest) == (prev.tick, prev.origin, prev.dest);
                if same {
                    prev.count += next.count;
                }
                same
            });
        }
    }
    Ok(out)
}
