//! File-level workflows behind the CLI: generate a synthetic dataset, fit
//! models from a tap file, replay held-out days through the engine, and
//! score a journal.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{Mode, ServiceConfig, Sources};
use crate::decisions::Thresholds;
use crate::engine::{self, evaluate_accuracy, AccuracyReport, Engine, Journal, MemoryFeed, ReplayOutcome};
use crate::error::{Error, Result};
use crate::ingest::synthetic::{demo_line, EventBoost};
use crate::ingest::{
    generate_days, parse_afc, parse_positions, write_afc, EventCalendar, TapEvent, TrainPositionReport,
};
use crate::models::{train, FitReport, ModelSet};
use crate::network::LineTopology;
use crate::time::BinClock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub first_day: NaiveDate,
    /// Total service days, training plus held out.
    pub days: u32,
    /// Trailing days left for replay.
    pub test_days: u32,
    pub seed: u64,
    /// Multiplier on every demand rate.
    pub scale: f64,
    /// Announce an evening event at the central station on a few days.
    pub events: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            first_day: NaiveDate::from_ymd_opt(2013, 2, 1).expect("static date"),
            days: 31,
            test_days: 1,
            seed: 1,
            scale: 1.0,
            events: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config_path: PathBuf,
    pub taps: usize,
    pub replay_from: NaiveDate,
}

/// Write a synthetic dataset for the demo line into `dir`: `topology.json`,
/// `gen_spec.json`, `taps.csv`, `events.json` and a ready-to-use
/// `config.toml` that fits on the leading days and replays the rest.
pub fn generate_dataset(dir: &Path, opts: &GenerateOptions) -> Result<Dataset> {
    if opts.test_days == 0 || opts.test_days >= opts.days {
        return Err(Error::Config(format!("test_days must be in 1..{}, got {}", opts.days, opts.test_days)));
    }
    if !(opts.scale > 0.0 && opts.scale.is_finite()) {
        return Err(Error::Config(format!("scale must be > 0, got {}", opts.scale)));
    }
    let (topology, mut spec) = demo_line();
    for g in spec.stations.values_mut() {
        for dt in &mut g.day_types {
            dt.rates.iter_mut().for_each(|r| *r *= opts.scale);
        }
    }
    let replay_from = opts.first_day + Duration::days(i64::from(opts.days - opts.test_days));
    if opts.events {
        let centre = topology.stations()[topology.len() / 2].clone();
        let mut dates: Vec<NaiveDate> =
            [3, 10, 17].iter().map(|d| opts.first_day + Duration::days(*d)).filter(|d| *d < replay_from).collect();
        dates.push(replay_from);
        for date in dates {
            spec.boosts.push(EventBoost {
                date,
                station: centre.clone(),
                bins: [76, 80],
                multiplier: 1.0,
                add: 120.0 * opts.scale,
                covariate: Some("major_event_nearby".into()),
            });
        }
    }
    spec.validate()?;
    let taps = generate_days(&spec, opts.first_day, opts.days, opts.seed)?;

    fs::create_dir_all(dir)?;
    fs::write(dir.join("topology.json"), topology.to_json())?;
    fs::write(dir.join("gen_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    fs::write(dir.join("events.json"), serde_json::to_string_pretty(&spec.event_calendar()?)?)?;
    write_afc(std::io::BufWriter::new(fs::File::create(dir.join("taps.csv"))?), &taps)?;

    let cap = f64::from(topology.capacity());
    let config = ServiceConfig {
        bin_minutes: spec.bin_minutes,
        day_start: spec.day_start,
        topology: "topology.json".into(),
        model_dir: "models".into(),
        data_dir: "journal".into(),
        mode: Mode::Replay,
        bind: "127.0.0.1:8080".into(),
        seed: opts.seed,
        retain: 96,
        sources: Sources { afc: "taps.csv".into(), positions: None, events: Some("events.json".into()) },
        replay: crate::config::ReplaySettings { from: Some(replay_from), days: opts.test_days, speed: 0.0 },
        sim: Default::default(),
        thresholds: Thresholds { platform_occupancy: (cap * 0.5).round(), left_behind: (cap * 0.05).round() },
        od: Default::default(),
        fit: Default::default(),
    };
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config.to_toml())?;
    info!(taps = taps.len(), dir = %dir.display(), "dataset written");
    Ok(Dataset { config_path, taps: taps.len(), replay_from })
}

pub fn clock(cfg: &ServiceConfig) -> Result<BinClock> {
    BinClock::new(cfg.bin_minutes, cfg.day_start)
}

/// All rows of the configured AFC file; malformed rows are logged and skipped.
pub fn read_taps(path: &Path, topology: &LineTopology) -> Result<Vec<TapEvent>> {
    let file = fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let (mut taps, errors) = parse_afc(BufReader::new(file), topology)?;
    if !errors.is_empty() {
        warn!(path = %path.display(), rejected = errors.len(), first = %errors[0].reason, "malformed AFC rows skipped");
    }
    taps.sort_by_key(|t| t.timestamp);
    Ok(taps)
}

pub fn read_positions(path: &Path, topology: &LineTopology) -> Result<Vec<TrainPositionReport>> {
    let file = fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let (reports, errors) = parse_positions(BufReader::new(file), topology)?;
    if !errors.is_empty() {
        warn!(path = %path.display(), rejected = errors.len(), "malformed position reports skipped");
    }
    Ok(reports)
}

pub fn load_calendar(cfg: &ServiceConfig, topology: &LineTopology) -> Result<EventCalendar> {
    match &cfg.sources.events {
        Some(p) => EventCalendar::from_json(&fs::read_to_string(p)?, topology.exog_schema().clone()),
        None => EventCalendar::new(topology.exog_schema().clone(), Vec::new()),
    }
}

/// Train on every service day before `[replay] from` (all days when unset)
/// and write the model directory.
pub fn fit_models(cfg: &ServiceConfig) -> Result<FitReport> {
    let topology = LineTopology::load(&cfg.topology)?;
    let clock = clock(cfg)?;
    let mut taps = read_taps(&cfg.sources.afc, &topology)?;
    if let Some(from) = cfg.replay.from {
        let cutoff = clock.day_origin(from);
        taps.retain(|t| t.timestamp < cutoff);
    }
    let calendar = load_calendar(cfg, &topology)?;
    let (models, report) = train(&taps, &topology, &calendar, &clock, &cfg.train_options())?;
    models.save(&cfg.model_dir, Some(&report))?;
    info!(version = %models.version, dir = %cfg.model_dir.display(), "models saved");
    Ok(report)
}

pub fn build_engine(cfg: &ServiceConfig) -> Result<Engine> {
    let topology = LineTopology::load(&cfg.topology)?;
    let models = ModelSet::load(&cfg.model_dir, &topology)?;
    if models.bin_minutes != cfg.bin_minutes || models.day_start != cfg.day_start {
        return Err(Error::Config(format!(
            "models were fitted on {}-minute bins from {}, config says {} from {}",
            models.bin_minutes, models.day_start, cfg.bin_minutes, cfg.day_start
        )));
    }
    let calendar = load_calendar(cfg, &topology)?;
    Engine::new(topology, models, calendar, cfg.engine_options())
}

/// First and last cycle instants of the configured replay window.
pub fn replay_window(cfg: &ServiceConfig) -> Result<(NaiveDateTime, NaiveDateTime)> {
    let from = cfg.replay.from.ok_or_else(|| Error::Config("[replay] from is not set".into()))?;
    let clock = clock(cfg)?;
    let start = clock.day_origin(from);
    let end = clock.day_origin(from + Duration::days(i64::from(cfg.replay.days)));
    Ok((start + Duration::seconds(i64::from(clock.bin_seconds())), end))
}

/// Inputs for a replay: the window's taps and position reports.
pub fn replay_inputs(
    cfg: &ServiceConfig,
    topology: &LineTopology,
) -> Result<(Vec<TapEvent>, Vec<TrainPositionReport>)> {
    let (first, last) = replay_window(cfg)?;
    let start = first - Duration::seconds(i64::from(clock(cfg)?.bin_seconds()));
    let mut taps = read_taps(&cfg.sources.afc, topology)?;
    taps.retain(|t| t.timestamp >= start && t.timestamp < last);
    let mut positions = match &cfg.sources.positions {
        Some(p) => read_positions(p, topology)?,
        None => Vec::new(),
    };
    positions.retain(|r| r.timestamp >= start && r.timestamp <= last);
    Ok((taps, positions))
}

/// Replay the configured window, journaling every cycle into `data_dir`
/// and writing `accuracy.json` and `accuracy.txt` there. Journal files of
/// the replayed days are replaced.
pub fn replay_dataset(cfg: &ServiceConfig) -> Result<ReplayOutcome> {
    let mut engine = build_engine(cfg)?;
    let (taps, positions) = replay_inputs(cfg, engine.topology())?;
    let (first, last) = replay_window(cfg)?;
    fs::create_dir_all(&cfg.data_dir)?;
    let from = cfg.replay.from.expect("checked by replay_window");
    for d in 0..=cfg.replay.days {
        let day = from + Duration::days(i64::from(d));
        for kind in ["observations", "forecasts", "snapshots"] {
            let p = cfg.data_dir.join(format!("{kind}-{day}.jsonl"));
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    let journal = Journal::open(&cfg.data_dir)?;
    let out = engine::replay(
        &mut engine,
        &mut MemoryFeed::new(taps),
        &mut MemoryFeed::new(positions),
        first,
        last,
        |snap, joined| journal.record_cycle(snap, joined),
    )?;
    write_report(&cfg.data_dir, &out.report)?;
    info!(cycles = out.snapshots.len(), records = out.records.len(), "replay done");
    Ok(out)
}

pub fn write_report(dir: &Path, report: &AccuracyReport) -> Result<()> {
    fs::write(dir.join("accuracy.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("accuracy.txt"), report.render())?;
    Ok(())
}

/// Score every joined forecast record in a journal directory.
pub fn evaluate_journal(dir: &Path) -> Result<AccuracyReport> {
    Ok(evaluate_accuracy(&engine::read_records(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dataset_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions { days: 5, test_days: 1, scale: 0.2, ..GenerateOptions::default() };
        let ds = generate_dataset(dir.path(), &opts).unwrap();
        assert_eq!(ds.replay_from, NaiveDate::from_ymd_opt(2013, 2, 5).unwrap());
        let cfg = ServiceConfig::load_with_env(&ds.config_path, Vec::new()).unwrap();
        let report = fit_models(&cfg).unwrap();
        assert_eq!(report.training_days.len(), 4);
        let out = replay_dataset(&cfg).unwrap();
        assert_eq!(out.snapshots.len(), 96);
        assert!(!out.report.is_empty());
        let again = evaluate_journal(&cfg.data_dir).unwrap();
        assert_eq!(again, out.report);
        assert!(cfg.data_dir.join("accuracy.txt").exists());

        // a second replay replaces the journal rather than appending to it
        replay_dataset(&cfg).unwrap();
        assert_eq!(evaluate_journal(&cfg.data_dir).unwrap(), out.report);
    }

    #[test]
    fn config_and_models_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions { days: 3, test_days: 1, scale: 0.1, events: false, ..GenerateOptions::default() };
        let ds = generate_dataset(dir.path(), &opts).unwrap();
        let cfg = ServiceConfig::load_with_env(&ds.config_path, Vec::new()).unwrap();
        assert!(matches!(build_engine(&cfg), Err(Error::MissingModels(s)) if s.len() == 8));
        fit_models(&cfg).unwrap();
        let mut other = cfg.clone();
        other.bin_minutes = 30;
        assert!(matches!(build_engine(&other), Err(Error::Config(_))));
        assert!(build_engine(&cfg).is_ok());
    }

    #[test]
    fn rejects_bad_split() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions { days: 3, test_days: 3, ..GenerateOptions::default() };
        assert!(generate_dataset(dir.path(), &opts).is_err());
    }
}
