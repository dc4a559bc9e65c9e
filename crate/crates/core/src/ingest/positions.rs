use std::io::BufRead;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::afc::RowError;
use crate::error::Result;
use crate::network::{LineTopology, StationId};

/// A live train position, one JSON object per line in the feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPositionReport {
    pub train_id: String,
    pub last_station: StationId,
    /// Seconds since departing `last_station`.
    pub offset_s: f64,
    #[serde(default, rename = "load", skip_serializing_if = "Option::is_none")]
    pub load_estimate: Option<u32>,
    #[serde(rename = "ts")]
    pub timestamp: NaiveDateTime,
}

pub fn parse_positions<R: BufRead>(
    reader: R,
    topology: &LineTopology,
) -> Result<(Vec<TrainPositionReport>, Vec<RowError>)> {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let report: TrainPositionReport = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line: line_no, reason: e.to_string() });
                continue;
            }
        };
        let reason = if report.train_id.is_empty() {
            Some("empty train id".to_string())
        } else if !topology.contains(&report.last_station) {
            Some(format!("unknown station `{}`", report.last_station))
        } else if !(report.offset_s >= 0.0 && report.offset_s.is_finite()) {
            Some("offset_s must be >= 0".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => errors.push(RowError { line: line_no, reason }),
            None => reports.push(report),
        }
    }
    Ok((reports, errors))
}
