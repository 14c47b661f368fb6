//! Audits a simulated run's event log: exactly-once completion, First-Fit
//! placements, spill loads and idle-stop delays.

use streambin::harness::audit;
use streambin::harness::{Scenario, Simulation};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/single_batch_767.json");
    let mut scenario = Scenario::load(path).expect("bundled scenario is valid");
    scenario.mode = streambin::harness::Mode::Simulated;
    let output = Simulation::run(scenario.clone());

    match audit::conservation(&output.events, &output.submitted) {
        Ok(()) => println!("conservation: {} messages completed once each", output.submitted.len()),
        Err(problems) => println!("conservation: {} problems, first: {}", problems.len(), problems[0]),
    }
    println!("first-fit violations: {}", audit::first_fit_violations(&output.events).len());
    for (at, worker, load) in audit::spill_loads(&output.events).iter().take(5) {
        println!("t={at}ms spilled to {worker}; lowest skipped load {load:.2}");
    }
    let limit = 2 * scenario.irm.idle_timeout_ms();
    match audit::idle_stop_delays(&output.events) {
        Ok(delays) => {
            let worst = delays.values().copied().max().unwrap_or(0);
            println!("{} PEs stopped, worst idle delay {worst}ms (limit {limit}ms)", delays.len());
        }
        Err(missing) => println!("{} PEs never stopped", missing.len()),
    }
}
