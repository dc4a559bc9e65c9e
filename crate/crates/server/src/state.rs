use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};

use chrono::NaiveDateTime;
use metrocast::config::Mode;
use metrocast::engine::{AccuracyReport, CycleSnapshot, HistoryPoint};
use metrocast::{BinClock, LineTopology, StationId, TimeBin};
use serde::Serialize;
use tokio::sync::broadcast;

/// Everything readers see, replaced as a whole once per cycle.
#[derive(Debug, Default)]
pub struct Published {
    /// Oldest first.
    pub snapshots: VecDeque<Arc<CycleSnapshot>>,
    pub history: BTreeMap<StationId, Vec<HistoryPoint>>,
    pub accuracy: AccuracyReport,
}

impl Published {
    pub fn latest(&self) -> Option<&Arc<CycleSnapshot>> {
        self.snapshots.back()
    }
}

/// Pushed to `/v1/events` subscribers after each publish.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotEvent {
    pub seq: u64,
    pub cycle_time: NaiveDateTime,
    pub last_observed_bin: TimeBin,
    pub alerts: usize,
}

pub struct AppState {
    pub topology: LineTopology,
    pub clock: BinClock,
    pub mode: Mode,
    pub model_version: String,
    retain: usize,
    published: RwLock<Arc<Published>>,
    events: broadcast::Sender<SnapshotEvent>,
}

impl AppState {
    pub fn new(topology: LineTopology, clock: BinClock, mode: Mode, model_version: String, retain: usize) -> Self {
        let (events, _) = broadcast::channel(64);
        Self { topology, clock, mode, model_version, retain: retain.max(1), published: RwLock::default(), events }
    }

    pub fn current(&self) -> Arc<Published> {
        self.published.read().expect("publish lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SnapshotEvent> {
        self.events.subscribe()
    }

    pub fn publish(
        &self,
        snapshot: CycleSnapshot,
        history: BTreeMap<StationId, Vec<HistoryPoint>>,
        accuracy: AccuracyReport,
    ) {
        let event = SnapshotEvent {
            seq: snapshot.seq,
            cycle_time: snapshot.cycle_time,
            last_observed_bin: snapshot.last_observed_bin,
            alerts: snapshot.alerts.len(),
        };
        let mut snapshots = self.current().snapshots.clone();
        snapshots.push_back(Arc::new(snapshot));
        while snapshots.len() > self.retain {
            snapshots.pop_front();
        }
        let next = Arc::new(Published { snapshots, history, accuracy });
        *self.published.write().expect("publish lock") = next;
        // no subscribers is fine
        let _ = self.events.send(event);
    }
}
