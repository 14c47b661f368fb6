//! Runs one synthetic job in this process and checks its CPU use against
//! the kernel's accounting.

use std::time::Instant;

use streambin::protocol::SyntheticJob;
use streambin::worker::synthetic::run_job;
use streambin::worker::{cpu_ticks, ticks_per_second};

fn main() {
    let target: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let job = SyntheticJob {
        target_cpu: target,
        duration_s: 2.0,
    };
    let pid = std::process::id();
    let before = cpu_ticks(pid).expect("/proc is readable");
    let started = Instant::now();
    run_job(job);
    let wall = started.elapsed().as_secs_f64();
    let used = (cpu_ticks(pid).expect("/proc is readable") - before) as f64 / ticks_per_second() as f64;
    println!("target {target:.2}, measured {:.3} over {wall:.2}s", used / wall);
}
