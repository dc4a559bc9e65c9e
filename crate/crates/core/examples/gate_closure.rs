//! Close the gates at an overloaded upstream station for one bin and compare
//! how the downstream platform fares under each way of handling the
//! passengers kept out.
//!
//!     cargo run --example gate_closure

use metrocast::decisions::{delta_by_station, evaluate_gate_closure, upstream_overload_scenario, Handling, Side};

fn main() -> metrocast::Result<()> {
    let (config, demand, plan) = upstream_overload_scenario();
    let trains = config.default_trains();
    println!(
        "closing {} from {} to {}, relieving {}",
        plan.station,
        plan.start.time(),
        plan.end.time(),
        plan.target.as_ref().map_or("next station", |t| t.as_str())
    );

    println!("in-window: drop in the target's peak queue during the closure\n");

    let options = [
        ("defer", Handling::Defer),
        ("divert 50% downstream", Handling::Divert { fraction: 0.5, toward: Side::Downstream }),
        ("drop", Handling::Drop),
    ];
    println!(
        "{:<22} {:>11} {:>10} {:>9} {:>8} {:>8}",
        "handling", "in-window", "affected", "deferred", "diverted", "dropped"
    );
    for (name, handling) in options {
        let mut p = plan.clone();
        p.handling = handling;
        let r = evaluate_gate_closure(&p, &config, &demand, &trains)?;
        let t = r.transform;
        println!(
            "{name:<22} {:>11.0} {:>10} {:>9} {:>8} {:>8}",
            r.target_station_improvement, t.affected, t.released, t.diverted, t.dropped
        );
        // whole-horizon change, treated minus baseline
        for (s, (wait, left)) in delta_by_station(&r) {
            if wait != 0 || left != 0 {
                println!("    {s}: waiting_max {wait:+}, left_behind {left:+}");
            }
        }
    }
    Ok(())
}
