//! Stations, the line they sit on, and exogenous covariates.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::TimeBin;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(String);

impl StationId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Topology("empty station id".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    /// Panics on an empty id; use [`StationId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        Self::new(s).expect("non-empty station id")
    }
}

/// Ordered covariate names shared by every station model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExogSchema(Vec<String>);

impl ExogSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n.is_empty() || !seen.insert(n) {
                return Err(Error::Config(format!("bad or duplicate covariate name `{n}`")));
            }
        }
        Ok(Self(names))
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn zeros(&self) -> ExogenousVector {
        ExogenousVector(vec![0.0; self.len()])
    }
}

/// Covariate values for one (station, bin), ordered like the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExogenousVector(pub Vec<f64>);

impl ExogenousVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, coef: &[f64]) -> f64 {
        self.0.iter().zip(coef).map(|(x, b)| x * b).sum()
    }
}

/// A single directed line: ordered stations with run and dwell times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct LineTopology {
    stations: Vec<StationId>,
    dwell_s: Vec<f64>,
    run_s: Vec<f64>,
    capacity: u32,
    headway_s: f64,
    exog_schema: ExogSchema,
    #[serde(skip)]
    index: HashMap<StationId, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StationDoc {
    id: String,
    dwell_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyDoc {
    stations: Vec<StationDoc>,
    run_s: Vec<f64>,
    capacity: u32,
    headway_s: f64,
    #[serde(default)]
    exog_schema: Vec<String>,
}

impl TryFrom<TopologyDoc> for LineTopology {
    type Error = Error;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        let mut stations = Vec::with_capacity(doc.stations.len());
        let mut dwell = Vec::with_capacity(doc.stations.len());
        for s in doc.stations {
            stations.push(StationId::new(s.id)?);
            dwell.push(s.dwell_s);
        }
        LineTopology::new(stations, dwell, doc.run_s, doc.capacity, doc.headway_s, ExogSchema::new(doc.exog_schema)?)
    }
}

impl From<LineTopology> for TopologyDoc {
    fn from(t: LineTopology) -> Self {
        TopologyDoc {
            stations: t
                .stations
                .iter()
                .zip(&t.dwell_s)
                .map(|(id, &dwell_s)| StationDoc { id: id.0.clone(), dwell_s })
                .collect(),
            run_s: t.run_s,
            capacity: t.capacity,
            headway_s: t.headway_s,
            exog_schema: t.exog_schema.0,
        }
    }
}

impl LineTopology {
    pub fn new(
        stations: Vec<StationId>,
        dwell_s: Vec<f64>,
        run_s: Vec<f64>,
        capacity: u32,
        headway_s: f64,
        exog_schema: ExogSchema,
    ) -> Result<Self> {
        if stations.len() < 2 {
            return Err(Error::Topology("a line needs at least 2 stations".into()));
        }
        if dwell_s.len() != stations.len() {
            return Err(Error::Topology("one dwell time per station required".into()));
        }
        if run_s.len() + 1 != stations.len() {
            return Err(Error::Topology(format!("run_s has {} entries, expected {}", run_s.len(), stations.len() - 1)));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !dwell_s.iter().chain(&run_s).all(|&v| positive(v)) || !positive(headway_s) {
            return Err(Error::Topology("all times must be finite and > 0".into()));
        }
        if capacity == 0 {
            return Err(Error::Topology("train capacity must be > 0".into()));
        }
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Topology(format!("duplicate station id `{s}`")));
            }
        }
        Ok(Self { stations, dwell_s, run_s, capacity, headway_s, exog_schema, index })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn stations(&self) -> &[StationId] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn index_of(&self, id: &StationId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn index_of_str(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.as_str() == id)
    }

    pub fn contains(&self, id: &StationId) -> bool {
        self.index.contains_key(id)
    }

    pub fn require(&self, id: &StationId) -> Result<usize> {
        self.index_of(id).ok_or_else(|| Error::UnknownStation(id.to_string()))
    }

    pub fn dwell_s(&self) -> &[f64] {
        &self.dwell_s
    }

    pub fn run_s(&self) -> &[f64] {
        &self.run_s
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn headway_s(&self) -> f64 {
        self.headway_s
    }

    pub fn exog_schema(&self) -> &ExogSchema {
        &self.exog_schema
    }

    /// Every station except `origin`, in line order.
    pub fn destinations_from(&self, origin: &StationId) -> Vec<StationId> {
        self.stations.iter().filter(|s| *s != origin).cloned().collect()
    }

    pub fn with_capacity(mut self, capacity: u32) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Topology("train capacity must be > 0".into()));
        }
        self.capacity = capacity;
        Ok(self)
    }
}

/// Observed counts for one station, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeries {
    pub station: StationId,
    bins: Vec<(TimeBin, u32)>,
}

impl CountSeries {
    pub fn new(station: StationId, bins: Vec<(TimeBin, u32)>) -> Result<Self> {
        if bins.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("count series bins must be strictly increasing".into()));
        }
        Ok(Self { station, bins })
    }

    pub fn bins(&self) -> &[(TimeBin, u32)] {
        &self.bins
    }

    pub fn push(&mut self, bin: TimeBin, count: u32) -> Result<()> {
        if self.bins.last().is_some_and(|(last, _)| *last >= bin) {
            return Err(Error::Config(format!("bin {bin} is not after the series end")));
        }
        self.bins.push((bin, count));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "stations": [{"id":"S1","dwell_s":30},{"id":"S2","dwell_s":40},{"id":"S3","dwell_s":30}],
        "run_s": [120, 90],
        "capacity": 100,
        "headway_s": 180,
        "exog_schema": ["major_event_nearby","planned_closure"]
    }"#;

    #[test]
    fn loads_topology_json() {
        let t = LineTopology::from_json(DOC).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.index_of(&"S2".into()), Some(1));
        assert_eq!(t.run_s(), &[120.0, 90.0]);
        assert_eq!(t.exog_schema().position("planned_closure"), Some(1));
        let back = LineTopology::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_topologies() {
        let bad = [
            DOC.replace("[120, 90]", "[120]"),
            DOC.replace("\"S3\"", "\"S1\""),
            DOC.replace("\"capacity\": 100", "\"capacity\": 0"),
            DOC.replace("\"run_s\": [120, 90]", "\"run_s\": [120, -1]"),
            r#"{"stations":[{"id":"S1","dwell_s":30}],"run_s":[],"capacity":1,"headway_s":1}"#.to_string(),
        ];
        for doc in bad {
            assert!(LineTopology::from_json(&doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn count_series_must_increase() {
        let day = chrono::NaiveDate::from_ymd_opt(2013, 2, 5).unwrap();
        let b = |i| TimeBin::new(day, i, 15).unwrap();
        assert!(CountSeries::new("S1".into(), vec![(b(1), 3), (b(1), 4)]).is_err());
        let mut s = CountSeries::new("S1".into(), vec![(b(1), 3)]).unwrap();
        assert!(s.push(b(0), 1).is_err());
        s.push(b(2), 0).unwrap();
        assert_eq!(s.bins().len(), 2);
    }
}
