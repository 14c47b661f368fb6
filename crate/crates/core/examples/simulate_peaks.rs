//! Runs the bundled `synthetic_peaks` scenario on the virtual clock and
//! writes the run directory (default `runs/synthetic_peaks`).

use streambin::harness::{write_run, Scenario, Simulation};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/synthetic_peaks".into());
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/synthetic_peaks.json");
    let scenario = Scenario::load(path).expect("bundled scenario is valid");

    let output = Simulation::run(scenario);
    let s = &output.summary;
    println!(
        "{} messages, {} completed, {} p2p, {} via backlog, makespan {:.0}s",
        s.submitted, s.completed, s.p2p, s.queued, s.makespan_s
    );
    let peak = output
        .frames
        .iter()
        .map(|f| f.per_worker.len())
        .max()
        .unwrap_or(0);
    println!("workers seen: {peak}, mean |error| {:.2} pp", s.mean_abs_error_pp);
    let dir = write_run(&out, &output).expect("writable output directory");
    println!("wrote {}", dir.display());
}
