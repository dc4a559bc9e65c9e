use std::collections::HashMap;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::afc::{Direction, TapEvent};
use crate::network::StationId;

pub const DEFAULT_MAX_GAP_HOURS: i64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Journey {
    pub card_id: String,
    pub origin: StationId,
    pub destination: StationId,
    pub entry_time: NaiveDateTime,
    pub exit_time: NaiveDateTime,
}

#[derive(Debug, Clone, Copy)]
pub struct LinkOptions {
    pub max_gap: Duration,
    /// Keep entry/exit pairs at the same station as journeys.
    pub keep_same_station: bool,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self { max_gap: Duration::hours(DEFAULT_MAX_GAP_HOURS), keep_same_station: false }
    }
}

impl LinkOptions {
    pub fn with_max_gap(max_gap: Duration) -> Self {
        Self { max_gap, ..Self::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkOutcome {
    pub journeys: Vec<Journey>,
    /// Taps that did not become part of a journey, in time order. Both taps
    /// of a dropped same-station pair land here too.
    pub unlinked: Vec<TapEvent>,
    pub same_station_pairs: usize,
}

/// Pair entries with exits per card.
///
/// Walking each card's taps in time order, an exit closes the card's most
/// recent open entry when it follows within `max_gap`. A second entry while
/// one is open abandons the earlier one. Every tap ends up in exactly one
/// journey or in `unlinked`.
pub fn link_journeys(taps: &[TapEvent], opts: LinkOptions) -> LinkOutcome {
    let mut order: Vec<usize> = (0..taps.len()).collect();
    order.sort_by_key(|&i| taps[i].timestamp);

    let mut open: HashMap<&str, usize> = HashMap::new();
    let mut unlinked = Vec::new();
    let mut out = LinkOutcome::default();

    for &i in &order {
        let tap = &taps[i];
        match tap.direction {
            Direction::Entry => {
                if let Some(prev) = open.insert(&tap.card_id, i) {
                    unlinked.push(prev);
                }
            }
            Direction::Exit => {
                let Some(e) = open.remove(tap.card_id.as_str()) else {
                    unlinked.push(i);
                    continue;
                };
                let entry = &taps[e];
                let gap = tap.timestamp - entry.timestamp;
                if gap <= Duration::zero() || gap > opts.max_gap {
                    unlinked.extend([e, i]);
                } else if entry.station == tap.station && !opts.keep_same_station {
                    out.same_station_pairs += 1;
                    unlinked.extend([e, i]);
                } else {
                    out.journeys.push(Journey {
                        card_id: tap.card_id.clone(),
                        origin: entry.station.clone(),
                        destination: tap.station.clone(),
                        entry_time: entry.timestamp,
                        exit_time: tap.timestamp,
                    });
                }
            }
        }
    }
    unlinked.extend(open.into_values());
    unlinked.sort_by_key(|&i| (taps[i].timestamp, i));
    out.unlinked = unlinked.into_iter().map(|i| taps[i].clone()).collect();
    out
}

/// Incremental form of [`link_journeys`] for taps that arrive in time order.
#[derive(Debug, Clone, Default)]
pub struct JourneyLinker {
    opts: LinkOptions,
    open: HashMap<String, TapEvent>,
    pub same_station_pairs: usize,
    pub unlinked: usize,
}

impl JourneyLinker {
    pub fn new(opts: LinkOptions) -> Self {
        Self { opts, ..Self::default() }
    }

    pub fn push(&mut self, tap: &TapEvent) -> Option<Journey> {
        match tap.direction {
            Direction::Entry => {
                if self.open.insert(tap.card_id.clone(), tap.clone()).is_some() {
                    self.unlinked += 1;
                }
                None
            }
            Direction::Exit => {
                let Some(entry) = self.open.remove(&tap.card_id) else {
                    self.unlinked += 1;
                    return None;
                };
                let gap = tap.timestamp - entry.timestamp;
                if gap <= Duration::zero() || gap > self.opts.max_gap {
                    self.unlinked += 2;
                    None
                } else if entry.station == tap.station && !self.opts.keep_same_station {
                    self.same_station_pairs += 1;
                    self.unlinked += 2;
                    None
                } else {
                    Some(Journey {
                        card_id: tap.card_id.clone(),
                        origin: entry.station,
                        destination: tap.station.clone(),
                        entry_time: entry.timestamp,
                        exit_time: tap.timestamp,
                    })
                }
            }
        }
    }

    /// Forget open entries too old to be closed by any exit at or after `now`.
    pub fn expire(&mut self, now: NaiveDateTime) {
        let max_gap = self.opts.max_gap;
        let before = self.open.len();
        self.open.retain(|_, e| now - e.timestamp <= max_gap);
        self.unlinked += before - self.open.len();
    }

    pub fn open_entries(&self) -> usize {
        self.open.len()
    }
}
