//! Service configuration: one TOML or JSON file plus `TS_` environment
//! overrides.
//!
//! `TS_SEED=9` sets the top-level `seed`; a double underscore descends into
//! a table, so `TS_THRESHOLDS__LEFT_BEHIND=20` sets `[thresholds] left_behind`.
//! Override values are read as TOML literals when they parse as one and as
//! plain strings otherwise. Relative paths resolve against the directory
//! holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Deserializer, Serialize};

use crate::decisions::Thresholds;
use crate::engine::{EngineOptions, SimSettings};
use crate::error::{Error, Result};
use crate::models::TrainOptions;
use crate::od::{DEFAULT_ALPHA, DEFAULT_BINS_PER_PERIOD};
use crate::time::DEFAULT_BIN_MINUTES;

pub const ENV_PREFIX: &str = "TS_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    /// AFC tap CSV; tailed in live mode, read whole for fit and replay.
    pub afc: PathBuf,
    #[serde(default)]
    pub positions: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    /// First service day replayed. Taps from earlier days are fit data.
    pub from: Option<NaiveDate>,
    pub days: u32,
    /// Wall-clock seconds between cycles when serving a replay; 0 runs flat out.
    pub speed: f64,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self { from: None, days: 1, speed: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdSettings {
    pub alpha: f64,
    pub bins_per_period: u32,
    pub lambda: f64,
}

impl Default for OdSettings {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, bins_per_period: DEFAULT_BINS_PER_PERIOD, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub k_min: usize,
    pub k_max: usize,
    pub min_days: usize,
    pub max_gap_hours: i64,
}

impl Default for FitSettings {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self { k_min: t.k_min, k_max: t.k_max, min_days: t.min_days, max_gap_hours: t.max_gap_hours }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bin_minutes")]
    pub bin_minutes: u32,
    #[serde(default, deserialize_with = "clock_time", serialize_with = "clock_time_out")]
    pub day_start: NaiveTime,
    pub topology: PathBuf,
    pub model_dir: PathBuf,
    /// Journal directory for observations, forecast records and snapshots.
    pub data_dir: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub seed: u64,
    /// Snapshots kept in memory by the server.
    #[serde(default = "default_retain")]
    pub retain: usize,
    pub sources: Sources,
    #[serde(default)]
    pub replay: ReplaySettings,
    #[serde(default)]
    pub sim: SimSettings,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub od: OdSettings,
    #[serde(default)]
    pub fit: FitSettings,
}

fn default_bin_minutes() -> u32 {
    DEFAULT_BIN_MINUTES
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_retain() -> usize {
    96
}

fn clock_time<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NaiveTime, D::Error> {
    let s = String::deserialize(d)?;
    NaiveTime::parse_from_str(&s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(&s, "%H:%M:%S"))
        .map_err(|e| serde::de::Error::custom(format!("day_start `{s}`: {e}")))
}

fn clock_time_out<S: serde::Serializer>(t: &NaiveTime, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&t.format("%H:%M").to_string())
}

impl ServiceConfig {
    /// Read `path` (TOML unless it ends in `.json`), apply overrides from the
    /// process environment and resolve paths.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, is_json, base, env)
    }

    pub fn parse(
        text: &str,
        is_json: bool,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut tree: toml::Table = if is_json {
            let v: serde_json::Value = serde_json::from_str(text)?;
            match toml::Value::try_from(v).map_err(|e| Error::Config(e.to_string()))? {
                toml::Value::Table(t) => t,
                _ => return Err(Error::Config("config must be an object".into())),
            }
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (k, v) in vars {
            apply_override(&mut tree, &k[ENV_PREFIX.len()..], &v)?;
        }
        let mut cfg: ServiceConfig =
            toml::Value::Table(tree).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.topology);
        fix(&mut self.model_dir);
        fix(&mut self.data_dir);
        fix(&mut self.sources.afc);
        if let Some(p) = self.sources.positions.as_mut() {
            fix(p);
        }
        if let Some(p) = self.sources.events.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::time::bins_per_day(self.bin_minutes)?;
        self.engine_options().validate()?;
        if self.mode == Mode::Replay && self.replay.from.is_none() {
            return Err(Error::Config("replay mode needs [replay] from".into()));
        }
        if self.replay.days == 0 {
            return Err(Error::Config("[replay] days must be >= 1".into()));
        }
        if self.replay.speed < 0.0 || !self.replay.speed.is_finite() {
            return Err(Error::Config("[replay] speed must be >= 0".into()));
        }
        if self.retain == 0 {
            return Err(Error::Config("retain must be >= 1".into()));
        }
        Ok(())
    }

    pub fn engine_options(&self) -> EngineOptions {
        let mut sim = self.sim.clone();
        sim.seed = self.seed;
        EngineOptions {
            sim,
            thresholds: self.thresholds,
            od_lambda: self.od.lambda,
            max_gap_hours: self.fit.max_gap_hours,
            history_bins: 2 * crate::time::bins_per_day(self.bin_minutes).unwrap_or(96) as usize,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            k_min: self.fit.k_min,
            k_max: self.fit.k_max,
            seed: self.seed,
            min_days: self.fit.min_days,
            od_alpha: self.od.alpha,
            bins_per_period: self.od.bins_per_period,
            max_gap_hours: self.fit.max_gap_hours,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(tree: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key.split("__").map(str::to_ascii_lowercase).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override {ENV_PREFIX}{key}")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = tree;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table =
            entry.as_table_mut().ok_or_else(|| Error::Config(format!("{ENV_PREFIX}{key}: `{p}` is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
topology = "topology.json"
model_dir = "models"
data_dir = "/var/lib/metrocast"
day_start = "04:30"
mode = "replay"

[sources]
afc = "taps.csv"

[replay]
from = "2013-03-06"

[thresholds]
platform_occupancy = 400
left_behind = 50
"#;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn toml_with_defaults_and_paths() {
        let c = ServiceConfig::parse(SAMPLE, false, Path::new("/data/demo"), no_env()).unwrap();
        assert_eq!(c.bin_minutes, 15);
        assert_eq!(c.day_start, NaiveTime::from_hms_opt(4, 30, 0).unwrap());
        assert_eq!(c.topology, PathBuf::from("/data/demo/topology.json"));
        assert_eq!(c.data_dir, PathBuf::from("/var/lib/metrocast"));
        assert_eq!(c.sources.afc, PathBuf::from("/data/demo/taps.csv"));
        assert_eq!(c.sim.horizon_bins, 2);
        assert_eq!(c.retain, 96);
        assert_eq!(c.mode, Mode::Replay);
    }

    #[test]
    fn env_overrides() {
        let env = vec![
            ("TS_SEED".to_string(), "9".to_string()),
            ("TS_THRESHOLDS__LEFT_BEHIND".to_string(), "20.5".to_string()),
            ("TS_BIND".to_string(), "0.0.0.0:9000".to_string()),
            ("TS_SIM__ENSEMBLE_RUNS".to_string(), "4".to_string()),
            ("TS_SIM__ARRIVAL_MODE".to_string(), "poisson-sample".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = ServiceConfig::parse(SAMPLE, false, Path::new("."), env).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.thresholds.left_behind, 20.5);
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.sim.ensemble_runs, 4);
        assert_eq!(c.engine_options().sim.seed, 9);
    }

    #[test]
    fn json_matches_toml() {
        let t = ServiceConfig::parse(SAMPLE, false, Path::new("/x"), no_env()).unwrap();
        let json = serde_json::json!({
            "topology": "topology.json", "model_dir": "models", "data_dir": "/var/lib/metrocast",
            "day_start": "04:30", "mode": "replay",
            "sources": {"afc": "taps.csv"}, "replay": {"from": "2013-03-06"},
            "thresholds": {"platform_occupancy": 400.0, "left_behind": 50.0}
        });
        let j = ServiceConfig::parse(&json.to_string(), true, Path::new("/x"), no_env()).unwrap();
        assert_eq!(t, j);
        let again = ServiceConfig::parse(&t.to_toml(), false, Path::new("/x"), no_env()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = Path::new(".");
        let no_thresholds = SAMPLE.replace("[thresholds]\nplatform_occupancy = 400\nleft_behind = 50\n", "");
        assert!(ServiceConfig::parse(&no_thresholds, false, base, no_env()).is_err());
        let no_from = SAMPLE.replace("from = \"2013-03-06\"", "");
        assert!(ServiceConfig::parse(&no_from, false, base, no_env()).is_err());
        let typo = format!("{SAMPLE}\n[od]\nlamda = 0.5\n");
        assert!(ServiceConfig::parse(&typo, false, base, no_env()).is_err());
        let bad_bin = vec![("TS_BIN_MINUTES".to_string(), "7".to_string())];
        assert!(ServiceConfig::parse(SAMPLE, false, base, bad_bin).is_err());
        let bad_path = vec![("TS_SEED__X".to_string(), "1".to_string())];
        assert!(ServiceConfig::parse(SAMPLE, false, base, bad_path).is_err());
    }
}
