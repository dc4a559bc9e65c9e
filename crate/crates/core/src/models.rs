//! Fitted models per station and their on-disk layout.
//!
//! A model directory holds:
//!
//! ```text
//! manifest.json                    version, bin width, stations, fit summary
//! clusters/<station>.json          ClusterSet
//! params/<station>/cluster-<c>.json  StateSpaceParams
//! shares/<station>.json            ShareTable
//! ```
//!
//! Cluster files are required for every station. Missing parameter files
//! degrade that cluster to the centroid forecast; missing share files fall
//! back to uniform destination shares.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::error::{Error, Result};
use crate::forecast::{fit_mle, FitMethod, FitOptions, Observation, StateSpaceParams};
use crate::ingest::{build_all_profiles, link_journeys, EventCalendar, LinkOptions, TapEvent};
use crate::network::{LineTopology, StationId};
use crate::od::{estimate_shares, ShareTable, DEFAULT_ALPHA, DEFAULT_BINS_PER_PERIOD};
use crate::patterns::{cluster_days, ClusterOptions, ClusterSet};
use crate::time::{BinClock, TimeBin};

pub const MODEL_FORMAT: &str = "metrocast-models/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationModel {
    pub clusters: ClusterSet,
    /// One entry per cluster; `None` means forecast the centroid.
    pub params: Vec<Option<StateSpaceParams>>,
    pub shares: ShareTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub version: String,
    pub bin_minutes: u32,
    pub day_start: NaiveTime,
    pub stations: BTreeMap<StationId, StationModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFit {
    pub cluster: usize,
    pub days: usize,
    pub method: FitMethod,
    pub loglik: f64,
    pub params: StateSpaceParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFit {
    pub station: StationId,
    pub k: usize,
    pub clusters: Vec<ClusterFit>,
    pub journeys: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub version: String,
    pub training_days: Vec<NaiveDate>,
    pub stations: Vec<StationFit>,
}

impl FitReport {
    pub fn render(&self) -> String {
        let mut out = format!("model version {} ({} training days)\n", self.version, self.training_days.len());
        let _ = writeln!(
            out,
            "{:<10} {:>3} {:>5} {:>10} {:>7} {:>10} {:>10}  beta",
            "station", "c", "days", "method", "phi", "s2_eps", "s2_eta"
        );
        for s in &self.stations {
            for c in &s.clusters {
                let p = &c.params;
                let beta: Vec<String> = p.beta.iter().map(|b| format!("{b:.2}")).collect();
                let _ = writeln!(
                    out,
                    "{:<10} {:>3} {:>5} {:>10} {:>7.3} {:>10.2} {:>10.2}  [{}]",
                    s.station.as_str(),
                    c.cluster,
                    c.days,
                    format!("{:?}", c.method).to_lowercase(),
                    p.phi,
                    p.sigma2_eps,
                    p.sigma2_eta,
                    beta.join(", ")
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub min_days: usize,
    pub od_alpha: f64,
    pub bins_per_period: u32,
    pub max_gap_hours: i64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 6,
            seed: 0,
            min_days: FitOptions::default().min_days,
            od_alpha: DEFAULT_ALPHA,
            bins_per_period: DEFAULT_BINS_PER_PERIOD,
            max_gap_hours: crate::ingest::DEFAULT_MAX_GAP_HOURS,
        }
    }
}

/// Training series of one station under one cluster: every member day, all
/// bins, deviations measured against that cluster's centroid.
pub fn cluster_series(
    clusters: &ClusterSet,
    cluster: usize,
    profiles: &BTreeMap<NaiveDate, Vec<u32>>,
    calendar: &EventCalendar,
    clock: &BinClock,
) -> Result<Vec<Vec<Observation>>> {
    let centroid = clusters.centroid(cluster)?;
    let mut days = Vec::new();
    for (day, &c) in &clusters.members {
        if c != cluster {
            continue;
        }
        let Some(counts) = profiles.get(day) else {
            continue;
        };
        let mut obs = Vec::with_capacity(counts.len());
        for (b, &y) in counts.iter().enumerate() {
            let bin = TimeBin::new(*day, b as u32, clock.bin_minutes())?;
            obs.push(Observation::new(f64::from(y), centroid[b], calendar.exog_at(&clusters.station, bin, clock)));
        }
        days.push(obs);
    }
    Ok(days)
}

/// Offline training over historical taps: cluster each station's days, fit
/// one state-space model per cluster, estimate destination shares.
pub fn train(
    taps: &[TapEvent],
    topology: &LineTopology,
    calendar: &EventCalendar,
    clock: &BinClock,
    opts: &TrainOptions,
) -> Result<(ModelSet, FitReport)> {
    let profiles = build_all_profiles(taps, topology, clock);
    let mut training_days: Vec<NaiveDate> = profiles.values().flatten().map(|p| p.service_day).collect();
    training_days.sort();
    training_days.dedup();
    if training_days.len() < 2 {
        return Err(Error::Config(format!("training needs >= 2 service days, got {}", training_days.len())));
    }
    let journeys = link_journeys(taps, LinkOptions::with_max_gap(chrono::Duration::hours(opts.max_gap_hours))).journeys;
    let cluster_opts =
        ClusterOptions { k_min: opts.k_min, k_max: opts.k_max, seed: opts.seed, ..ClusterOptions::default() };
    let fit_opts = FitOptions { min_days: opts.min_days, ..FitOptions::default() };

    let fitted: Vec<(StationModel, StationFit)> = topology
        .stations()
        .par_iter()
        .map(|station| {
            let days = &profiles[station];
            let clusters = cluster_days(days, &cluster_opts)?;
            let by_day: BTreeMap<NaiveDate, Vec<u32>> =
                days.iter().map(|p| (p.service_day, p.counts.clone())).collect();
            let mut params = Vec::with_capacity(clusters.k);
            let mut fits = Vec::with_capacity(clusters.k);
            for c in 0..clusters.k {
                let series = cluster_series(&clusters, c, &by_day, calendar, clock)?;
                let label = format!("{station}/cluster-{c}");
                let out = fit_mle(&series, None, &fit_opts, &label)?;
                info!(%label, phi = out.params.phi, method = ?out.method, "fitted");
                fits.push(ClusterFit {
                    cluster: c,
                    days: out.days,
                    method: out.method,
                    loglik: out.loglik,
                    params: out.params.clone(),
                });
                params.push(Some(out.params));
            }
            let shares = estimate_shares(&journeys, station, topology, clock, opts.bins_per_period, opts.od_alpha)?;
            let n_journeys = journeys.iter().filter(|j| &j.origin == station).count();
            let fit = StationFit { station: station.clone(), k: clusters.k, clusters: fits, journeys: n_journeys };
            Ok((StationModel { clusters, params, shares }, fit))
        })
        .collect::<Result<_>>()?;

    let version = format!(
        "{}_{}_{}d",
        training_days[0].format("%Y%m%d"),
        training_days[training_days.len() - 1].format("%Y%m%d"),
        training_days.len()
    );
    let mut stations = BTreeMap::new();
    let mut report = FitReport { version: version.clone(), training_days, stations: Vec::new() };
    for (model, fit) in fitted {
        stations.insert(fit.station.clone(), model);
        report.stations.push(fit);
    }
    let models = ModelSet { version, bin_minutes: clock.bin_minutes(), day_start: clock.day_start(), stations };
    Ok((models, report))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: String,
    bin_minutes: u32,
    day_start: NaiveTime,
    stations: Vec<StationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitReport>,
}

/// File-name form of a station id: anything outside `[A-Za-z0-9_.-]`
/// becomes `_`.
pub fn file_stem(station: &StationId) -> String {
    station.as_str().chars().map(|c| if c.is_ascii_alphanumeric() || "_.-".contains(c) { c } else { '_' }).collect()
}

impl ModelSet {
    pub fn clock(&self) -> Result<BinClock> {
        BinClock::new(self.bin_minutes, self.day_start)
    }

    pub fn save(&self, dir: &Path, report: Option<&FitReport>) -> Result<()> {
        for sub in ["clusters", "params", "shares"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for (station, m) in &self.stations {
            let stem = file_stem(station);
            fs::write(dir.join("clusters").join(format!("{stem}.json")), m.clusters.to_json())?;
            fs::write(dir.join("shares").join(format!("{stem}.json")), m.shares.to_json())?;
            let pdir = dir.join("params").join(&stem);
            if pdir.exists() {
                fs::remove_dir_all(&pdir)?;
            }
            fs::create_dir_all(&pdir)?;
            for (c, p) in m.params.iter().enumerate() {
                if let Some(p) = p {
                    fs::write(pdir.join(format!("cluster-{c}.json")), serde_json::to_string_pretty(p)?)?;
                }
            }
        }
        let manifest = Manifest {
            format: MODEL_FORMAT.into(),
            version: self.version.clone(),
            bin_minutes: self.bin_minutes,
            day_start: self.day_start,
            stations: self.stations.keys().cloned().collect(),
            fit: report.cloned(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Load models for every station of `topology`. Fails with
    /// [`Error::MissingModels`] naming each station without a cluster file,
    /// or every station when the directory holds no manifest.
    pub fn load(dir: &Path, topology: &LineTopology) -> Result<Self> {
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingModels(topology.stations().iter().map(|s| s.to_string()).collect()));
        }
        let manifest: Manifest = serde_json::from_str(
            &fs::read_to_string(dir.join("manifest.json"))
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?,
        )?;
        if manifest.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model format {}", manifest.format)));
        }
        let clock = BinClock::new(manifest.bin_minutes, manifest.day_start)?;
        let mut missing = Vec::new();
        let mut stations = BTreeMap::new();
        for station in topology.stations() {
            let stem = file_stem(station);
            let path = dir.join("clusters").join(format!("{stem}.json"));
            let Ok(text) = fs::read_to_string(&path) else {
                missing.push(station.to_string());
                continue;
            };
            let clusters = ClusterSet::from_json(&text)?;
            if clusters.station != *station || clusters.bins() != clock.bins_per_day() as usize {
                return Err(Error::Config(format!("{} does not match station {station}", path.display())));
            }
            let params = (0..clusters.k)
                .map(|c| {
                    let p = dir.join("params").join(&stem).join(format!("cluster-{c}.json"));
                    match fs::read_to_string(&p) {
                        Ok(t) => {
                            let params: StateSpaceParams = serde_json::from_str(&t)?;
                            params.validate()?;
                            if params.beta.len() != topology.exog_schema().len() {
                                return Err(Error::Config(format!(
                                    "{}: beta length does not match the schema",
                                    p.display()
                                )));
                            }
                            Ok(Some(params))
                        }
                        Err(_) => {
                            warn!(%station, cluster = c, "no fitted parameters, centroid forecast");
                            Ok(None)
                        }
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let shares = match fs::read_to_string(dir.join("shares").join(format!("{stem}.json"))) {
                Ok(t) => ShareTable::from_json(&t)?,
                Err(_) => {
                    warn!(%station, "no destination shares, uniform prior");
                    estimate_shares(&[], station, topology, &clock, DEFAULT_BINS_PER_PERIOD, DEFAULT_ALPHA)?
                }
            };
            stations.insert(station.clone(), StationModel { clusters, params, shares });
        }
        if !missing.is_empty() {
            return Err(Error::MissingModels(missing));
        }
        Ok(Self {
            version: manifest.version,
            bin_minutes: manifest.bin_minutes,
            day_start: manifest.day_start,
            stations,
        })
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::ingest::{generate_days, synthetic::demo_line};

    fn trained() -> (LineTopology, ModelSet, FitReport) {
        let (topology, spec) = demo_line();
        let taps = generate_days(&spec, NaiveDate::from_ymd_opt(2013, 2, 4).unwrap(), 6, 3).unwrap();
        let calendar = EventCalendar::new(topology.exog_schema().clone(), spec.event_calendar().unwrap()).unwrap();
        let opts = TrainOptions { k_max: 3, min_days: 2, ..TrainOptions::default() };
        let (m, r) = train(&taps, &topology, &calendar, &spec.clock().unwrap(), &opts).unwrap();
        (topology, m, r)
    }

    #[test]
    fn save_load_round_trip() {
        let (topology, models, report) = trained();
        assert_eq!(models.version, "20130204_20130209_6d");
        assert_eq!(report.stations.len(), topology.len());
        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path(), Some(&report)).unwrap();
        let back = ModelSet::load(dir.path(), &topology).unwrap();
        assert_eq!(back.version, models.version);
        for (id, m) in &models.stations {
            let b = &back.stations[id];
            assert_eq!(b.clusters, m.clusters);
            assert_eq!(b.params, m.params);
            assert_eq!(b.shares, m.shares);
        }
        assert!(report.render().contains("S1"));
    }

    #[test]
    fn missing_files() {
        let (topology, models, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path(), None).unwrap();
        fs::remove_dir_all(dir.path().join("params").join("S2")).unwrap();
        fs::remove_file(dir.path().join("shares").join("S3.json")).unwrap();
        let back = ModelSet::load(dir.path(), &topology).unwrap();
        assert!(back.stations[&StationId::from("S2")].params.iter().all(Option::is_none));
        let uniform = back.stations[&StationId::from("S3")].shares.periods()[0].shares();
        assert!(uniform.values().all(|&s| (s - 1.0 / 7.0).abs() < 1e-12));

        fs::remove_file(dir.path().join("clusters").join("S4.json")).unwrap();
        fs::remove_file(dir.path().join("clusters").join("S7.json")).unwrap();
        match ModelSet::load(dir.path(), &topology) {
            Err(Error::MissingModels(s)) => assert_eq!(s, vec!["S4".to_string(), "S7".to_string()]),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn too_few_days() {
        let (topology, spec) = demo_line();
        let taps = generate_days(&spec, NaiveDate::from_ymd_opt(2013, 2, 4).unwrap(), 1, 3).unwrap();
        let cal = EventCalendar::new(topology.exog_schema().clone(), Vec::new()).unwrap();
        assert!(matches!(
            train(&taps, &topology, &cal, &spec.clock().unwrap(), &TrainOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
