use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::records::ForecastRecord;
use super::CycleSnapshot;
use crate::error::Result;

/// Append-only JSON-lines files per service day:
/// `observations-<day>.jsonl`, `forecasts-<day>.jsonl` (joined records, by
/// target day) and `snapshots-<day>.jsonl`.
#[derive(Debug, Clone)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append<T: Serialize>(
        &self,
        kind: &str,
        day: chrono::NaiveDate,
        items: impl IntoIterator<Item = T>,
    ) -> Result<()> {
        let path = self.dir.join(format!("{kind}-{day}.jsonl"));
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, &item)?;
            buf.push(b'\n');
        }
        if !buf.is_empty() {
            OpenOptions::new().create(true).append(true).open(path)?.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn record_cycle(&self, snapshot: &CycleSnapshot, joined: &[ForecastRecord]) -> Result<()> {
        let day = snapshot.last_observed_bin.service_day;
        let obs = snapshot.stations.iter().flat_map(|s| {
            s.observed.iter().map(move |o| serde_json::json!({"station": s.station, "bin": o.bin, "count": o.count}))
        });
        self.append("observations", day, obs)?;
        let mut by_day: std::collections::BTreeMap<chrono::NaiveDate, Vec<&ForecastRecord>> = Default::default();
        for r in joined {
            by_day.entry(r.target_bin.service_day).or_default().push(r);
        }
        for (d, rs) in by_day {
            self.append("forecasts", d, rs)?;
        }
        self.append("snapshots", day, [snapshot])
    }
}

/// All joined forecast records in a journal directory, oldest day first.
pub fn read_records(dir: &Path) -> Result<Vec<ForecastRecord>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("forecasts-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        for line in BufReader::new(fs::File::open(&f)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
    }
    Ok(out)
}
