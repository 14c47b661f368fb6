//! Replays one workload ten times against the same master. The first run
//! packs with the default estimate; later runs use the measured profile.

use streambin::harness::{replay_runs, Scenario, ScheduleEntry, Workload, WorkloadRef};

fn main() {
    let mut scenario = Scenario {
        name: "profiling".into(),
        seed: 3,
        workloads: vec![Workload {
            image: "thumbnailer".into(),
            tag: "latest".into(),
            target_cpu: 0.2,
            duration_s: 6.0,
        }],
        schedule: vec![ScheduleEntry {
            at_s: 0.0,
            batch_size: 30,
            workload: WorkloadRef::Index(0),
        }],
        cluster: Default::default(),
        irm: Default::default(),
        mode: Default::default(),
        run: Default::default(),
    };
    scenario.irm.default_cpu_estimate = 0.5;
    scenario.cluster.pe_startup_delay_s = 0.0;

    for run in replay_runs(scenario, 10) {
        let s = run.summary;
        println!(
            "run {:2}: makespan {:5.1}s  mean |error| {:6.2} pp",
            s.run, s.makespan_s, s.mean_abs_error_pp
        );
    }
}
