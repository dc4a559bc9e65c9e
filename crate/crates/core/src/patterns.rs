//! Day-type patterns per station.
//!
//! Offline, a station's daily profiles are clustered with k-means (raw
//! counts, Euclidean distance, seeded k-means++ start) and k is picked by
//! mean silhouette. Online, the partially observed day is matched to the
//! nearest centroid prefix. Centroids double as the historical-average
//! baseline that forecasts revert to.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DailyProfile;
use crate::network::StationId;

pub const CLUSTER_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct ClusterOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// k-means++ restarts per candidate k; the lowest SSE wins.
    pub n_init: usize,
    /// When k = 1 is a candidate, it is chosen unless the best k >= 2 reaches
    /// this mean silhouette.
    pub min_silhouette: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { k_min: 1, k_max: 6, seed: 0, max_iter: 100, n_init: 4, min_silhouette: 0.25 }
    }
}

impl ClusterOptions {
    pub fn with_k(k_min: usize, k_max: usize) -> Self {
        Self { k_min, k_max, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClusterDoc", into = "ClusterDoc")]
pub struct ClusterSet {
    pub station: StationId,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub members: BTreeMap<NaiveDate, usize>,
    pub day_count: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    #[serde(default = "current_version")]
    version: u32,
    station: StationId,
    k: usize,
    centroids: Vec<Vec<f64>>,
    members: BTreeMap<NaiveDate, usize>,
}

fn current_version() -> u32 {
    CLUSTER_FILE_VERSION
}

impl TryFrom<ClusterDoc> for ClusterSet {
    type Error = Error;

    fn try_from(doc: ClusterDoc) -> Result<Self> {
        if doc.version != CLUSTER_FILE_VERSION {
            return Err(Error::Config(format!("unsupported cluster file version {}", doc.version)));
        }
        if doc.k == 0 || doc.centroids.len() != doc.k {
            return Err(Error::Config("cluster file: k must match the centroid count".into()));
        }
        let len = doc.centroids[0].len();
        if doc.centroids.iter().any(|c| c.len() != len || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("cluster file: ragged or non-finite centroids".into()));
        }
        let mut day_count = vec![0; doc.k];
        for &c in doc.members.values() {
            *day_count
                .get_mut(c)
                .ok_or_else(|| Error::Config(format!("cluster file: member of missing cluster {c}")))? += 1;
        }
        Ok(ClusterSet { station: doc.station, k: doc.k, centroids: doc.centroids, members: doc.members, day_count })
    }
}

impl From<ClusterSet> for ClusterDoc {
    fn from(s: ClusterSet) -> Self {
        ClusterDoc {
            version: CLUSTER_FILE_VERSION,
            station: s.station,
            k: s.k,
            centroids: s.centroids,
            members: s.members,
        }
    }
}

impl ClusterSet {
    pub fn bins(&self) -> usize {
        self.centroids[0].len()
    }

    /// Cluster with the most training days; the prior before any bin of the
    /// day is observed.
    pub fn largest_cluster(&self) -> usize {
        (0..self.k).max_by_key(|&c| (self.day_count.get(c).copied().unwrap_or(0), std::cmp::Reverse(c))).unwrap_or(0)
    }

    pub fn centroid(&self, cluster: usize) -> Result<&[f64]> {
        self.centroids
            .get(cluster)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::OutOfRange(format!("cluster {cluster} of {}", self.k)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster set serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

pub fn centroid_value(set: &ClusterSet, cluster: usize, bin: usize) -> Result<f64> {
    set.centroid(cluster)?.get(bin).copied().ok_or_else(|| Error::OutOfRange(format!("bin {bin} of {}", set.bins())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub cluster_id: usize,
    pub distances: Vec<f64>,
    pub bins_observed: usize,
}

/// Nearest centroid by per-bin RMS distance over the observed prefix.
pub fn classify_partial(partial: &[f64], set: &ClusterSet) -> Result<Classification> {
    let b = partial.len();
    if b == 0 {
        return Err(Error::NoObservation);
    }
    if b > set.bins() {
        return Err(Error::OutOfRange(format!("{b} observed bins, day has {}", set.bins())));
    }
    let distances: Vec<f64> = set.centroids.iter().map(|c| (sq_dist(partial, &c[..b]) / b as f64).sqrt()).collect();
    Ok(Classification { cluster_id: argmin(&distances), distances, bins_observed: b })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means solution.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse: f64,
    /// SSE after each Lloyd iteration.
    pub history: Vec<f64>,
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| argmin(&centroids.iter().map(|c| sq_dist(p, c)).collect::<Vec<_>>())).collect()
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn sse(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

/// Move the worst-fitting point of a multi-member cluster into each empty one.
fn fill_empty(points: &[Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let centroids = means(points, assignment, k);
        let donor = (0..points.len()).filter(|&i| counts[assignment[i]] > 1).max_by(|&i, &j| {
            let di = sq_dist(&points[i], &centroids[assignment[i]]);
            let dj = sq_dist(&points[j], &centroids[assignment[j]]);
            di.total_cmp(&dj).then(j.cmp(&i))
        });
        match donor {
            Some(i) => assignment[i] = empty,
            None => return,
        }
    }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> =
            points.iter().map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centre already
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Lloyd's algorithm from a seeded k-means++ start, to an assignment fixpoint
/// or `max_iter` iterations. Returned centroids are exactly the member means.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> KMeansFit {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_init(points, k, &mut rng);
    let mut assignment = assign(points, &init);
    fill_empty(points, &mut assignment, k);
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let centroids = means(points, &assignment, k);
        history.push(sse(points, &assignment, &centroids));
        let mut next = assign(points, &centroids);
        fill_empty(points, &mut next, k);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let centroids = means(points, &assignment, k);
    let sse = sse(points, &assignment, &centroids);
    KMeansFit { assignment, centroids, sse, history }
}

/// Mean silhouette; singleton members score 0.
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let n = points.len();
    if k < 2 || n < 2 {
        return 0.0;
    }
    let mut size = vec![0usize; k];
    assignment.iter().for_each(|&c| size[c] += 1);
    let mut total = 0.0;
    for i in 0..n {
        let own = assignment[i];
        if size[own] <= 1 {
            continue;
        }
        let mut dist_sum = vec![0.0; k];
        for j in 0..n {
            if i != j {
                dist_sum[assignment[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = dist_sum[own] / (size[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && size[c] > 0)
            .map(|c| dist_sum[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

fn best_of(points: &[Vec<f64>], k: usize, opts: &ClusterOptions) -> KMeansFit {
    (0..opts.n_init.max(1))
        .map(|r| {
            let seed = opts.seed ^ ((k as u64) << 32 | r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            kmeans(points, k, seed, opts.max_iter)
        })
        .min_by(|a, b| a.sse.total_cmp(&b.sse))
        .expect("n_init >= 1")
}

/// Cluster one station's daily profiles.
pub fn cluster_days(profiles: &[DailyProfile], opts: &ClusterOptions) -> Result<ClusterSet> {
    if profiles.len() < 2 {
        return Err(Error::Config(format!("clustering needs >= 2 profiles, got {}", profiles.len())));
    }
    let station = profiles[0].station.clone();
    let bins = profiles[0].counts.len();
    if profiles.iter().any(|p| p.station != station || p.counts.len() != bins) {
        return Err(Error::Config("profiles must share station and length".into()));
    }
    if opts.k_min == 0 || opts.k_min > opts.k_max {
        return Err(Error::Config(format!("bad k range {}..={}", opts.k_min, opts.k_max)));
    }

    let mut sorted: Vec<&DailyProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.service_day.cmp(&b.service_day).then_with(|| a.counts.cmp(&b.counts)));
    let points: Vec<Vec<f64>> = sorted.iter().map(|p| p.as_f64()).collect();
    let n = points.len();

    let mut k_max = opts.k_max;
    if k_max >= n {
        tracing::warn!(%station, k_max, n, "k range upper bound clamped below the number of profiles");
        k_max = n - 1;
    }
    let distinct = {
        let mut d: Vec<&Vec<u32>> = sorted.iter().map(|p| &p.counts).collect();
        d.sort();
        d.dedup();
        d.len()
    };
    let candidates: Vec<usize> = (opts.k_min..=k_max.min(distinct)).collect();

    let fit = match candidates.as_slice() {
        [] => best_of(&points, 1, opts),
        [k] => best_of(&points, *k, opts),
        ks => {
            let mut best: Option<(f64, KMeansFit)> = None;
            for &k in ks.iter().filter(|&&k| k >= 2) {
                let fit = best_of(&points, k, opts);
                let s = silhouette(&points, &fit.assignment, k);
                if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                    best = Some((s, fit));
                }
            }
            match best {
                Some((s, fit)) if !(ks[0] == 1 && s < opts.min_silhouette) => fit,
                _ => best_of(&points, 1, opts),
            }
        }
    };

    let k = fit.centroids.len();
    let mut day_count = vec![0; k];
    fit.assignment.iter().for_each(|&c| day_count[c] += 1);
    let members = sorted.iter().zip(&fit.assignment).map(|(p, &c)| (p.service_day, c)).collect();
    Ok(ClusterSet { station, k, centroids: fit.centroids, members, day_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 2, 1).unwrap() + chrono::Duration::days(i64::from(i))
    }

    fn profiles(rows: &[Vec<u32>]) -> Vec<DailyProfile> {
        rows.iter()
            .enumerate()
            .map(|(i, c)| DailyProfile { station: "S1".into(), service_day: day(i as u32), counts: c.clone() })
            .collect()
    }

    #[test]
    fn identical_profiles_collapse_to_one_cluster() {
        let p = profiles(&vec![vec![3, 5, 7]; 4]);
        let set = cluster_days(&p, &ClusterOptions::with_k(1, 2)).unwrap();
        assert_eq!(set.k, 1);
        assert_eq!(set.centroids[0], vec![3.0, 5.0, 7.0]);
    }

    /// Exhaustive search over all 2-partitions for minimal within-cluster SSE.
    fn best_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let c = means(points, &labels, 2);
            let s = sse(points, &labels, &c);
            if s < best.0 {
                best = (s, labels);
            }
        }
        best
    }

    #[test]
    fn two_obvious_groups() {
        let rows = vec![vec![0, 0, 0], vec![0, 0, 0], vec![10, 10, 10], vec![10, 10, 10]];
        let p = profiles(&rows);
        let set = cluster_days(&p, &ClusterOptions::with_k(2, 2)).unwrap();
        assert_eq!(set.k, 2);
        assert_eq!(set.day_count, vec![2, 2]);
        let pts: Vec<Vec<f64>> = p.iter().map(|p| p.as_f64()).collect();
        let (oracle_sse, oracle_labels) = best_two_partition(&pts);
        let labels: Vec<usize> = p.iter().map(|p| set.members[&p.service_day]).collect();
        let fitted_sse = sse(&pts, &labels, &set.centroids);
        assert!((fitted_sse - oracle_sse).abs() < 1e-9);
        // same partition up to relabelling
        assert!(labels == oracle_labels || labels.iter().zip(&oracle_labels).all(|(a, b)| a != b));
        let hi = set.members[&day(2)];
        assert_eq!(centroid_value(&set, hi, 0).unwrap(), 10.0);
        assert_eq!(centroid_value(&set, 1 - hi, 0).unwrap(), 0.0);
    }

    #[test]
    fn k_one_gives_elementwise_mean() {
        let p = profiles(&[vec![2, 0], vec![4, 6], vec![6, 3]]);
        let set = cluster_days(&p, &ClusterOptions::with_k(1, 1)).unwrap();
        assert_eq!(set.centroids, vec![vec![4.0, 3.0]]);
        let two = profiles(&[vec![2, 2], vec![4, 4]]);
        let set = cluster_days(&two, &ClusterOptions::with_k(1, 1)).unwrap();
        assert_eq!(centroid_value(&set, 0, 0).unwrap(), 3.0);
        assert!(centroid_value(&set, 1, 0).is_err());
        assert!(centroid_value(&set, 0, 2).is_err());
    }

    #[test]
    fn too_few_profiles_is_an_error() {
        assert!(matches!(cluster_days(&profiles(&[vec![1]]), &ClusterOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn k_range_is_clamped_to_profile_count() {
        let p = profiles(&[vec![0, 0], vec![1, 0], vec![50, 50]]);
        let set = cluster_days(&p, &ClusterOptions::with_k(2, 9)).unwrap();
        assert!(set.k <= 2);
    }

    #[test]
    fn classify_examples() {
        let set = ClusterSet {
            station: "S1".into(),
            k: 3,
            centroids: vec![vec![0.0, 0.0, 5.0], vec![10.0, 10.0, 5.0], vec![3.0, 4.0, 5.0]],
            members: BTreeMap::new(),
            day_count: vec![0; 3],
        };
        let c = classify_partial(&[3.0, 4.0], &set).unwrap();
        assert_eq!(c.cluster_id, 2);
        assert_eq!(c.distances[2], 0.0);

        let two = ClusterSet { k: 2, centroids: set.centroids[..2].to_vec(), day_count: vec![0; 2], ..set.clone() };
        let c = classify_partial(&[6.0, 6.0], &two).unwrap();
        assert!((c.distances[0] - 6.0).abs() < 1e-12);
        assert!((c.distances[1] - 4.0).abs() < 1e-12);
        assert_eq!(c.cluster_id, 1);

        // equidistant: lowest id wins
        let c = classify_partial(&[5.0, 5.0], &two).unwrap();
        assert_eq!(c.cluster_id, 0);

        assert!(matches!(classify_partial(&[], &set), Err(Error::NoObservation)));
        assert!(classify_partial(&[0.0; 4], &set).is_err());

        let one = ClusterSet { k: 1, centroids: vec![vec![1.0; 3]], day_count: vec![1], ..set };
        assert_eq!(classify_partial(&[99.0], &one).unwrap().cluster_id, 0);
    }

    #[test]
    fn json_round_trip_rebuilds_counts() {
        let p = profiles(&[vec![0, 0], vec![1, 0], vec![50, 50], vec![52, 49]]);
        let set = cluster_days(&p, &ClusterOptions::with_k(2, 2)).unwrap();
        let back = ClusterSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert!(set.to_json().contains("\"version\": 1"));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..40, 6), 3..12)
    }

    proptest! {
        #[test]
        fn centroids_are_member_means(rows in arb_rows(), seed in any::<u64>()) {
            let p = profiles(&rows);
            let opts = ClusterOptions { seed, ..ClusterOptions::with_k(1, 4) };
            let set = cluster_days(&p, &opts).unwrap();
            for c in 0..set.k {
                let members: Vec<&DailyProfile> =
                    p.iter().filter(|x| set.members[&x.service_day] == c).collect();
                prop_assert!(!members.is_empty());
                prop_assert_eq!(members.len(), set.day_count[c]);
                for b in 0..6 {
                    let mean = members.iter().map(|m| f64::from(m.counts[b])).sum::<f64>() / members.len() as f64;
                    prop_assert!((set.centroids[c][b] - mean).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn lloyd_objective_never_increases(rows in arb_rows(), k in 1usize..4, seed in any::<u64>()) {
            let pts: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
            let k = k.min(pts.len());
            let fit = kmeans(&pts, k, seed, 100);
            for w in fit.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(fit.sse <= fit.history[0] + 1e-9);
        }

        #[test]
        fn input_order_does_not_matter(rows in arb_rows(), seed in any::<u64>(), rot in 0usize..12) {
            let p = profiles(&rows);
            let mut shuffled = p.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let opts = ClusterOptions { seed, ..ClusterOptions::with_k(1, 3) };
            let a = cluster_days(&p, &opts).unwrap();
            let b = cluster_days(&shuffled, &opts).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tie_break_is_lowest_id(v in 0.0f64..100.0, copies in 2usize..5) {
            let set = ClusterSet {
                station: "S1".into(),
                k: copies,
                centroids: vec![vec![v, v]; copies],
                members: BTreeMap::new(),
                day_count: vec![0; copies],
            };
            prop_assert_eq!(classify_partial(&[v + 1.0, v - 1.0], &set).unwrap().cluster_id, 0);
        }
    }
}
