//! Simulates a short scenario and draws all three chart kinds.

use streambin::harness::{plot_file, write_run, PlotKind, Scenario, ScheduleEntry, Simulation, Workload, WorkloadRef};

fn main() {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/plot_demo".into()));
    let scenario = Scenario {
        name: "plot_demo".into(),
        seed: 1,
        workloads: vec![
            Workload {
                image: "encode".into(),
                tag: "latest".into(),
                target_cpu: 0.3,
                duration_s: 8.0,
            },
            Workload {
                image: "index".into(),
                tag: "latest".into(),
                target_cpu: 0.15,
                duration_s: 4.0,
            },
        ],
        schedule: (0..6)
            .map(|i| ScheduleEntry {
                at_s: 10.0 * i as f64,
                batch_size: if i == 2 { 40 } else { 6 },
                workload: WorkloadRef::MIXED,
            })
            .collect(),
        cluster: Default::default(),
        irm: Default::default(),
        mode: Default::default(),
        run: Default::default(),
    };
    let output = Simulation::run(scenario);
    let dir = write_run(&out, &output).expect("writable output directory");
    for kind in PlotKind::ALL {
        let png = dir.join(format!("{}.png", kind.as_str()));
        plot_file(dir.join("metrics.csv"), kind, &png).expect("chart renders");
        println!("wrote {}", png.display());
    }
}
