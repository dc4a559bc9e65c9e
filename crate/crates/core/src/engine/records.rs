use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::forecast::{ArrivalForecast, Horizon};
use crate::network::StationId;
use crate::time::TimeBin;

/// An issued forecast, later joined with what was actually counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub station: StationId,
    pub target_bin: TimeBin,
    pub horizon: Horizon,
    pub issue_time: NaiveDateTime,
    pub point: f64,
    pub clamped_point: f64,
    pub variance: f64,
    /// Centroid value for the target bin: the historical-average forecast.
    pub baseline: f64,
    pub cluster: usize,
    /// True when the centroid was used because no fitted model applied.
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<u32>,
}

impl ForecastRecord {
    pub fn issue(f: &ArrivalForecast, issue_time: NaiveDateTime, cluster: usize, fallback: bool) -> Self {
        Self {
            station: f.station.clone(),
            target_bin: f.target_bin,
            horizon: f.horizon,
            issue_time,
            point: f.point,
            clamped_point: f.clamped_point,
            variance: f.variance,
            baseline: f.baseline,
            cluster,
            fallback,
            observed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    /// `None` for the pooled row over all stations.
    pub station: Option<StationId>,
    pub horizon: Horizon,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub baseline_mae: f64,
    pub baseline_rmse: f64,
    /// `mae / baseline_mae`; infinite when the baseline is perfect and the
    /// model is not, 1 when both are perfect.
    pub mae_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    abs: f64,
    sq: f64,
    base_abs: f64,
    base_sq: f64,
}

impl Acc {
    fn add(&mut self, err: f64, base_err: f64) {
        self.n += 1;
        self.abs += err.abs();
        self.sq += err * err;
        self.base_abs += base_err.abs();
        self.base_sq += base_err * base_err;
    }

    fn row(&self, station: Option<StationId>, horizon: Horizon) -> AccuracyRow {
        let n = self.n as f64;
        let (mae, baseline_mae) = (self.abs / n, self.base_abs / n);
        let mae_ratio = if baseline_mae > 0.0 {
            mae / baseline_mae
        } else if mae > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        AccuracyRow {
            station,
            horizon,
            n: self.n,
            mae,
            rmse: (self.sq / n).sqrt(),
            baseline_mae,
            baseline_rmse: (self.base_sq / n).sqrt(),
            mae_ratio,
        }
    }
}

/// MAE and RMSE of the delivered (clamped) forecast and of the centroid
/// baseline, per station and horizon plus pooled rows. Records without an
/// observation are skipped.
pub fn evaluate_accuracy(records: &[ForecastRecord]) -> AccuracyReport {
    let mut per: BTreeMap<(Horizon, Option<StationId>), Acc> = BTreeMap::new();
    for r in records {
        let Some(y) = r.observed else { continue };
        let y = f64::from(y);
        for key in [(r.horizon, Some(r.station.clone())), (r.horizon, None)] {
            per.entry(key).or_default().add(r.clamped_point - y, r.baseline - y);
        }
    }
    let mut rows: Vec<AccuracyRow> = per.iter().map(|((h, s), acc)| acc.row(s.clone(), *h)).collect();
    // Station rows first, pooled row last within each horizon.
    rows.sort_by(|a, b| {
        a.horizon.cmp(&b.horizon).then(a.station.is_none().cmp(&b.station.is_none())).then(a.station.cmp(&b.station))
    });
    AccuracyReport { rows }
}

impl AccuracyReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn pooled(&self, horizon: Horizon) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.station.is_none() && r.horizon == horizon)
    }

    pub fn render(&self) -> String {
        if self.rows.is_empty() {
            return "no joined forecasts\n".into();
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>2} {:>6} {:>9} {:>9} {:>9} {:>9} {:>7}",
            "station", "h", "n", "mae", "rmse", "base_mae", "base_rmse", "ratio"
        );
        for r in &self.rows {
            let name = r.station.as_ref().map_or("ALL", |s| s.as_str());
            let _ = writeln!(
                out,
                "{:<10} {:>2} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>7.3}",
                name,
                r.horizon.steps(),
                r.n,
                r.mae,
                r.rmse,
                r.baseline_mae,
                r.baseline_rmse,
                r.mae_ratio
            );
        }
        out
    }
}
