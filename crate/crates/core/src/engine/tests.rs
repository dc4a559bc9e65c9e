use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::*;
use crate::decisions::Handling;
use crate::ingest::TapEvent;
use crate::models::StationModel;
use crate::network::ExogSchema;
use crate::od::estimate_shares;

const CENTROID: f64 = 12.0;

fn topology() -> LineTopology {
    let ids = ["A", "B", "C"].iter().map(|s| StationId::from(*s)).collect();
    LineTopology::new(ids, vec![30.0; 3], vec![120.0; 2], 100, 180.0, ExogSchema::new(vec!["ev".into()]).unwrap())
        .unwrap()
}

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2013, 2, 5).unwrap()
}

fn at(h: u32, m: u32) -> NaiveDateTime {
    day().and_hms_opt(h, m, 0).unwrap()
}

fn models(with_params: bool) -> ModelSet {
    let topo = topology();
    let clock = BinClock::with_bin_minutes(15).unwrap();
    let mut stations = BTreeMap::new();
    for id in topo.stations() {
        let clusters = ClusterSet {
            station: id.clone(),
            k: 1,
            centroids: vec![vec![CENTROID; 96]],
            members: BTreeMap::from([(day().pred_opt().unwrap(), 0)]),
            day_count: vec![1],
        };
        let params = vec![with_params.then(|| StateSpaceParams::new(0.8, 4.0, 9.0, vec![0.0]).unwrap())];
        let shares = estimate_shares(&[], id, &topo, &clock, 4, 1.0).unwrap();
        stations.insert(id.clone(), StationModel { clusters, params, shares });
    }
    ModelSet { version: "test".into(), bin_minutes: 15, day_start: NaiveTime::MIN, stations }
}

fn engine(with_params: bool) -> Engine {
    let topo = topology();
    let calendar = EventCalendar::new(topo.exog_schema().clone(), Vec::new()).unwrap();
    Engine::new(
        topo,
        models(with_params),
        calendar,
        EngineOptions::new(Thresholds { platform_occupancy: 50.0, left_behind: 5.0 }),
    )
    .unwrap()
}

/// Entries at A in every minute of [from, to), each exiting at C ten minutes later.
fn taps(from: NaiveDateTime, to: NaiveDateTime, per_minute: usize) -> Vec<TapEvent> {
    let mut out = Vec::new();
    let mut t = from;
    let mut n = 0;
    while t < to {
        for _ in 0..per_minute {
            let card = format!("c{n}");
            out.push(TapEvent::entry(&card, "A", t));
            out.push(TapEvent::exit(&card, "C", t + chrono::Duration::minutes(10)));
            n += 1;
        }
        t += chrono::Duration::minutes(1);
    }
    out.sort_by_key(|t| t.timestamp);
    out
}

fn clock() -> BinClock {
    BinClock::with_bin_minutes(15).unwrap()
}

#[test]
fn cycle_at_0800_targets_0815_and_0830() {
    let mut e = engine(true);
    e.ingest_taps(taps(at(7, 45), at(8, 0), 1));
    let snap = e.run_cycle(at(8, 0)).unwrap();
    for s in &snap.stations {
        let ends: Vec<NaiveDateTime> = s.arrivals.iter().map(|a| clock().bin_end(a.target_bin)).collect();
        assert_eq!(ends, vec![at(8, 15), at(8, 30)], "{}", s.station);
    }
    let snap = e.run_cycle(at(8, 15)).unwrap();
    for s in &snap.stations {
        let ends: Vec<NaiveDateTime> = s.arrivals.iter().map(|a| clock().bin_end(a.target_bin)).collect();
        assert_eq!(ends, vec![at(8, 30), at(8, 45)]);
    }
    assert_eq!(snap.seq, 2);
}

#[test]
fn counts_last_bin_and_joins_forecasts() {
    let mut e = engine(true);
    e.ingest_taps(taps(at(7, 45), at(8, 15), 2));
    let snap = e.run_cycle(at(8, 0)).unwrap();
    let a = snap.station(&"A".into()).unwrap();
    assert_eq!(a.observed.last().unwrap().count, 30);
    assert_eq!(a.observed.last().unwrap().bin.index, 31);
    assert!(e.drain_joined().is_empty());

    e.run_cycle(at(8, 15)).unwrap();
    let joined = e.drain_joined();
    // one h=1 record per station targeting bin 32
    assert_eq!(joined.len(), 3);
    assert!(joined.iter().all(|r| r.horizon == Horizon::One && r.target_bin.index == 32));
    let ja = joined.iter().find(|r| r.station.as_str() == "A").unwrap();
    assert_eq!(ja.observed, Some(30));
    let h = e.history(&"A".into(), 1).unwrap();
    assert_eq!(h[0].observed, 30);
    assert!(h[0].predicted_h1.is_some());
}

#[test]
fn empty_bin_updates_with_zero() {
    let mut e = engine(true);
    let snap = e.run_cycle(at(8, 0)).unwrap();
    for s in &snap.stations {
        assert!(s.observed.iter().all(|o| o.count == 0));
        assert_eq!(s.filter.last_bin, Some(snap.last_observed_bin));
        assert!(s.arrivals[0].point < CENTROID);
    }
}

#[test]
fn first_cycle_catches_up_the_whole_day() {
    let mut e = engine(true);
    let snap = e.run_cycle(at(8, 0)).unwrap();
    assert_eq!(snap.stations[0].observed.len(), 32);
    let snap = e.run_cycle(at(8, 15)).unwrap();
    assert_eq!(snap.stations[0].observed.len(), 1);
}

#[test]
fn no_models_means_centroid_forecasts() {
    let mut e = engine(false);
    e.ingest_taps(taps(at(7, 0), at(9, 0), 3));
    for now in [at(8, 0), at(8, 15), at(8, 30)] {
        let snap = e.run_cycle(now).unwrap();
        for s in &snap.stations {
            assert!(s.fallback);
            for f in &s.arrivals {
                assert!((f.point - CENTROID).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rejects_off_boundary_and_stale_times() {
    let mut e = engine(true);
    assert!(matches!(e.run_cycle(at(8, 1)), Err(Error::Config(_))));
    e.run_cycle(at(8, 0)).unwrap();
    assert!(matches!(e.run_cycle(at(8, 0)), Err(Error::Config(_))));
    assert!(matches!(e.run_cycle(at(7, 45)), Err(Error::Config(_))));
}

#[test]
fn late_taps_are_counted_but_flagged() {
    let mut e = engine(true);
    e.run_cycle(at(8, 0)).unwrap();
    e.ingest_taps([TapEvent::entry("x", "A", at(7, 50))]);
    e.run_cycle(at(8, 15)).unwrap();
    assert_eq!(e.late_entries(), 1);
}

#[test]
fn rollover_starts_a_fresh_day() {
    let mut e = engine(true);
    e.ingest_taps(taps(at(23, 30), at(23, 45), 1));
    e.run_cycle(at(23, 45)).unwrap();
    let snap = e.run_cycle(day().succ_opt().unwrap().and_hms_opt(0, 15, 0).unwrap()).unwrap();
    assert_eq!(snap.last_observed_bin.service_day, day().succ_opt().unwrap());
    assert_eq!(snap.stations[0].observed.len(), 1);
}

fn replay_day(e: &mut Engine, tap_list: Vec<TapEvent>) -> ReplayOutcome {
    replay(e, &mut MemoryFeed::new(tap_list), &mut NoFeed, at(6, 0), at(10, 0), |_, _| Ok(())).unwrap()
}

#[test]
fn replay_is_byte_identical() {
    let input = taps(at(5, 0), at(10, 0), 2);
    let a = replay_day(&mut engine(true), input.clone());
    let b = replay_day(&mut engine(true), input);
    let ja: Vec<String> = a.snapshots.iter().map(CycleSnapshot::to_json).collect();
    let jb: Vec<String> = b.snapshots.iter().map(CycleSnapshot::to_json).collect();
    assert_eq!(ja, jb);
    assert_eq!(a.snapshots.len(), 17);
}

#[test]
fn every_record_joins_once() {
    let mut e = engine(true);
    let out = replay_day(&mut e, taps(at(5, 0), at(10, 0), 2));
    let keys: HashSet<_> = out.records.iter().map(|r| (r.station.clone(), r.target_bin, r.horizon)).collect();
    assert_eq!(keys.len(), out.records.len());
    assert!(out.records.iter().all(|r| r.observed.is_some()));
    // issued 17 cycles x 3 stations x 2 horizons; the last cycle's two and the
    // previous cycle's h=2 target bins not yet observed
    assert_eq!(out.records.len() + e.pending().len(), 17 * 3 * 2);
    assert_eq!(e.pending().len(), 3 * 3);
    for r in &out.records {
        let h = e.history(&r.station, 200).unwrap();
        let obs = h.iter().find(|p| p.bin == r.target_bin).unwrap().observed;
        assert_eq!(r.observed, Some(obs));
    }
}

#[test]
fn live_tail_matches_replay() {
    let input = taps(at(6, 0), at(9, 0), 1);
    let reference =
        replay(&mut engine(true), &mut MemoryFeed::new(input.clone()), &mut NoFeed, at(7, 0), at(9, 0), |_, _| Ok(()))
            .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("afc.csv");
    let mut file = std::fs::File::create(&path).unwrap();
    writeln!(file, "{}", crate::ingest::AFC_HEADER.join(",")).unwrap();
    let mut live = engine(true);
    let mut feed = AfcFileTail::new(&path, topology());
    let mut written = 0;
    let mut now = at(7, 0);
    let mut snaps = Vec::new();
    while now <= at(9, 0) {
        // the gate system flushes everything stamped before the boundary
        let upto = input.partition_point(|t| t.timestamp < now);
        let mut buf = Vec::new();
        crate::ingest::write_afc(&mut buf, &input[written..upto]).unwrap();
        let body = String::from_utf8(buf).unwrap();
        file.write_all(body.split_once('\n').unwrap().1.as_bytes()).unwrap();
        file.flush().unwrap();
        written = upto;
        snaps.push(live.cycle_from(now, &mut feed, &mut NoFeed).unwrap());
        now += chrono::Duration::minutes(15);
    }
    let a: Vec<String> = reference.snapshots.iter().map(CycleSnapshot::to_json).collect();
    let b: Vec<String> = snaps.iter().map(CycleSnapshot::to_json).collect();
    assert_eq!(a, b);
}

#[test]
fn whatif_zero_window_changes_nothing() {
    let mut e = engine(true);
    e.ingest_taps(taps(at(7, 0), at(8, 0), 20));
    let snap = e.run_cycle(at(8, 0)).unwrap();
    let plan = GateClosurePlan {
        station: "A".into(),
        start: at(8, 5),
        end: at(8, 5),
        handling: Handling::Defer,
        target: None,
    };
    let r = snap.whatif(e.topology(), &plan).unwrap();
    assert!(r.deltas.iter().all(|d| d.waiting_max == 0 && d.left_behind == 0));
    assert_eq!(r.target_station_improvement, 0.0);
}

#[test]
fn positions_seed_the_simulator() {
    let mut e = engine(true);
    e.ingest_positions([TrainPositionReport {
        train_id: "T9".into(),
        last_station: "A".into(),
        offset_s: 30.0,
        load_estimate: Some(40),
        timestamp: at(7, 59),
    }]);
    let snap = e.run_cycle(at(8, 0)).unwrap();
    assert!(snap.sim_inputs.trains.iter().any(|t| t.train_id == "T9"));
    assert_eq!(snap.sim.totals.initial_onboard, 40);
    // a report older than one bin is dropped
    let snap = e.run_cycle(at(8, 15)).unwrap();
    assert!(snap.sim_inputs.trains.iter().all(|t| t.train_id != "T9"));
}

#[test]
fn journal_round_trips_records() {
    let dir = tempfile::tempdir().unwrap();
    let journal = Journal::open(dir.path()).unwrap();
    let mut e = engine(true);
    let out =
        replay(&mut e, &mut MemoryFeed::new(taps(at(6, 0), at(9, 0), 1)), &mut NoFeed, at(7, 0), at(9, 0), |s, j| {
            journal.record_cycle(s, j)
        })
        .unwrap();
    let back = read_records(dir.path()).unwrap();
    assert_eq!(back, out.records);
    assert!(dir.path().join("snapshots-2013-02-05.jsonl").exists());
}

#[test]
fn missing_station_models_listed() {
    let mut m = models(true);
    m.stations.remove(&StationId::from("B"));
    let topo = topology();
    let cal = EventCalendar::new(topo.exog_schema().clone(), Vec::new()).unwrap();
    match Engine::new(topo, m, cal, EngineOptions::new(Thresholds { platform_occupancy: 1.0, left_behind: 1.0 })) {
        Err(Error::MissingModels(s)) => assert_eq!(s, vec!["B".to_string()]),
        other => panic!("{:?}", other.err()),
    }
}
