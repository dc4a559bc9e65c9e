use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use chrono::{Duration, NaiveDateTime};
use metrocast::engine::{evaluate_accuracy, CycleSnapshot, Engine, Feed, ForecastRecord, Journal};
use metrocast::ingest::{TapEvent, TrainPositionReport};
use tracing::{error, info};

use crate::state::AppState;

/// Single writer over the engine: runs cycles, journals them and publishes
/// each snapshot.
pub struct Orchestrator {
    engine: Engine,
    taps: Box<dyn Feed<TapEvent>>,
    positions: Box<dyn Feed<TrainPositionReport>>,
    journal: Option<Journal>,
    state: Arc<AppState>,
    records: Vec<ForecastRecord>,
}

impl Orchestrator {
    pub fn new(
        engine: Engine,
        taps: Box<dyn Feed<TapEvent>>,
        positions: Box<dyn Feed<TrainPositionReport>>,
        journal: Option<Journal>,
        state: Arc<AppState>,
    ) -> Self {
        Self { engine, taps, positions, journal, state, records: Vec::new() }
    }

    pub fn step(&mut self, now: NaiveDateTime) -> metrocast::Result<Arc<CycleSnapshot>> {
        let snap = self.engine.cycle_from(now, self.taps.as_mut(), self.positions.as_mut())?;
        let joined = self.engine.drain_joined();
        if let Some(j) = &self.journal {
            j.record_cycle(&snap, &joined)?;
        }
        self.records.extend(joined);
        let accuracy = evaluate_accuracy(&self.records);
        let n = self.engine.options().history_bins;
        let history: BTreeMap<_, _> = self
            .engine
            .topology()
            .stations()
            .iter()
            .map(|s| Ok((s.clone(), self.engine.history(s, n)?)))
            .collect::<metrocast::Result<_>>()?;
        info!(seq = snap.seq, at = %now, alerts = snap.alerts.len(), "cycle published");
        self.state.publish(snap, history, accuracy);
        Ok(self.state.current().latest().expect("just published").clone())
    }

    /// Fire a cycle at every bin boundary of the local wall clock until `stop`.
    pub fn run_live(mut self, stop: Arc<AtomicBool>) {
        let bin = Duration::seconds(i64::from(self.engine.clock().bin_seconds()));
        while !stop.load(Ordering::Relaxed) {
            let now = chrono::Local::now().naive_local();
            let next = next_boundary(now, self.engine.clock().day_origin(now.date()), bin);
            if !sleep_until(next, &stop) {
                break;
            }
            if let Err(e) = self.step(next) {
                error!(error = %e, at = %next, "cycle failed");
            }
        }
    }

    /// Run the cycles `[from, to]` back to back, pausing `pause` between them.
    pub fn run_replay(mut self, from: NaiveDateTime, to: NaiveDateTime, pause: StdDuration, stop: Arc<AtomicBool>) {
        let bin = Duration::seconds(i64::from(self.engine.clock().bin_seconds()));
        let mut now = from;
        while now <= to && !stop.load(Ordering::Relaxed) {
            if let Err(e) = self.step(now) {
                error!(error = %e, at = %now, "replay cycle failed, stopping");
                return;
            }
            now += bin;
            std::thread::sleep(pause);
        }
        info!("replay finished");
    }
}

/// The first bin boundary strictly after `now`.
pub fn next_boundary(now: NaiveDateTime, day_origin: NaiveDateTime, bin: Duration) -> NaiveDateTime {
    let base = if day_origin > now { day_origin - Duration::days(1) } else { day_origin };
    let elapsed = (now - base).num_milliseconds();
    let step = bin.num_milliseconds();
    base + Duration::milliseconds((elapsed / step + 1) * step)
}

fn sleep_until(t: NaiveDateTime, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let left = t - chrono::Local::now().naive_local();
        if left <= Duration::zero() {
            return true;
        }
        std::thread::sleep(left.to_std().unwrap_or_default().min(StdDuration::from_millis(500)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn boundaries() {
        let d = NaiveDate::from_ymd_opt(2013, 2, 5).unwrap();
        let t = |h, m, s| d.and_hms_opt(h, m, s).unwrap();
        let q = Duration::minutes(15);
        assert_eq!(next_boundary(t(8, 0, 0), t(0, 0, 0), q), t(8, 15, 0));
        assert_eq!(next_boundary(t(8, 14, 59), t(0, 0, 0), q), t(8, 15, 0));
        assert_eq!(next_boundary(t(3, 0, 1), t(4, 30, 0), q), t(3, 15, 0));
        assert_eq!(next_boundary(t(23, 50, 0), t(0, 0, 0), q), d.succ_opt().unwrap().and_hms_opt(0, 0, 0).unwrap());
    }
}
