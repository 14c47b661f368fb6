use std::collections::BTreeMap;

use proptest::prelude::*;

use streambin::binpack::{
    optimal_bins, pack_sequence, Bin, FitCriterion, PackItem, BIN_CAPACITY, FIT_EPSILON,
};
use streambin::harness::{audit, to_csv, Scenario, ScheduleEntry, Simulation, Workload, WorkloadRef};
use streambin::irm::IrmConfig;
use streambin::protocol::{
    decode, encode, PeStat, PeState, StreamMessage, SyntheticJob, WorkerReport,
};

fn size() -> impl Strategy<Value = f64> {
    // (0, 1]
    (1u32..=1_000_000).prop_map(|k| k as f64 / 1_000_000.0)
}

fn sizes(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(size(), 0..=max)
}

fn items(sizes: &[f64]) -> Vec<PackItem<usize>> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| PackItem::new(i, s))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_item_placed_once_and_no_bin_overflows(sizes in sizes(40)) {
        let plan = pack_sequence(&items(&sizes), Vec::new(), FitCriterion::FirstFit).unwrap();
        prop_assert_eq!(plan.placements.len(), sizes.len());
        let mut load: BTreeMap<usize, f64> = BTreeMap::new();
        for ((id, bin), s) in plan.placements.iter().zip(&sizes) {
            prop_assert_eq!(plan.placements.iter().filter(|(i, _)| i == id).count(), 1);
            *load.entry(*bin).or_default() += s;
        }
        for (bin, l) in &load {
            prop_assert!(*l <= BIN_CAPACITY + 1e-6, "bin {} at {}", bin, l);
        }
        let total: f64 = sizes.iter().sum();
        prop_assert!(plan.bins_used as f64 + 1e-6 >= total);
    }

    #[test]
    fn never_opens_a_bin_while_an_open_one_fits(
        preload in prop::collection::vec(0.0f64..=1.0, 0..5),
        sizes in sizes(30),
    ) {
        let existing: Vec<Bin<usize>> = preload
            .iter()
            .enumerate()
            .map(|(i, &l)| Bin::with_load(i, l))
            .collect();
        let mut residual: Vec<f64> = existing.iter().map(|b| b.residual).collect();
        let plan = pack_sequence(&items(&sizes), existing, FitCriterion::FirstFit).unwrap();
        for step in &plan.trace {
            let s = sizes[step.step];
            let first_fit = residual.iter().position(|r| r + FIT_EPSILON >= s);
            if step.opened {
                prop_assert_eq!(first_fit, None, "step {} opened a bin with room elsewhere", step.step);
                residual.push(BIN_CAPACITY);
            } else {
                prop_assert_eq!(first_fit, Some(step.position));
            }
            residual[step.position] = (residual[step.position] - s).max(0.0);
        }
    }

    #[test]
    fn preexisting_bins_keep_their_indices(
        preload in prop::collection::vec(0.0f64..=1.0, 1..5),
        closed in 0usize..5,
        sizes in sizes(20),
    ) {
        let mut existing: Vec<Bin<usize>> = preload
            .iter()
            .enumerate()
            .map(|(i, &l)| Bin::with_load(i, l))
            .collect();
        let closed = closed % existing.len();
        existing[closed] = Bin::closed(closed);
        let n = existing.len();
        let plan = pack_sequence(&items(&sizes), existing, FitCriterion::FirstFit).unwrap();
        for (i, b) in plan.bins.iter().enumerate() {
            prop_assert_eq!(b.index, i);
        }
        prop_assert!(plan.placements.iter().all(|(_, bin)| *bin != closed));
        prop_assert!(plan.opened_bins.iter().all(|b| *b >= n));
    }

    #[test]
    fn first_fit_within_ratio_bound_of_optimal(sizes in sizes(10)) {
        let items = items(&sizes);
        let ff = pack_sequence(&items, Vec::new(), FitCriterion::FirstFit).unwrap().bins_used;
        let opt = optimal_bins(&items).unwrap();
        prop_assert!(opt <= ff);
        prop_assert!(ff as f64 <= 1.7 * opt as f64 + 1.0);
        let total: f64 = sizes.iter().sum();
        prop_assert!(opt as f64 + 1e-6 >= total);
    }

    #[test]
    fn stream_message_round_trips(
        payload in prop::collection::vec(any::<u8>(), 0..256),
        image in "[a-z][a-z0-9-]{0,15}",
        tag in "[a-z0-9.]{0,8}",
        id in "[a-zA-Z0-9_-]{1,12}",
        created_at in any::<u32>(),
    ) {
        let m = StreamMessage::new(id, &image, &tag, payload, created_at as u64);
        let back: StreamMessage = decode(&encode(&m)).unwrap();
        prop_assert_eq!(&back, &m);
        let headers = m.headers();
        let from_headers = StreamMessage::from_parts(
            |name| headers.iter().find(|(h, _)| h.eq_ignore_ascii_case(name)).map(|(_, v)| v.clone()),
            m.payload.clone(),
        ).unwrap();
        prop_assert_eq!(from_headers, m);
    }

    #[test]
    fn worker_report_round_trips(
        stats in prop::collection::vec((0u8..3, 0.0f64..=1.0, 0usize..3), 0..8),
        sent_at in any::<u32>(),
    ) {
        let pe_stats: Vec<PeStat> = stats
            .iter()
            .enumerate()
            .map(|(i, &(state, cpu, image))| PeStat {
                pe_id: format!("pe-{i}"),
                image: format!("img{image}"),
                tag: "latest".into(),
                cpu_fraction: cpu,
                state: [PeState::Starting, PeState::Running, PeState::Idle][state as usize],
                last_activity: (i % 2 == 0).then_some(sent_at as u64),
            })
            .collect();
        let report = WorkerReport::new("w0", sent_at as u64, pe_stats);
        for (image, avg) in &report.per_image_avg {
            let running: Vec<f64> = report
                .pe_stats
                .iter()
                .filter(|s| &s.image == image && s.state == PeState::Running)
                .map(|s| s.cpu_fraction)
                .collect();
            prop_assert!(!running.is_empty());
            prop_assert!((avg - running.iter().sum::<f64>() / running.len() as f64).abs() < 1e-12);
        }
        let back: WorkerReport = decode(&encode(&report)).unwrap();
        prop_assert_eq!(back, report);
    }

    #[test]
    fn synthetic_payload_round_trips(target in size(), duration in 0u32..600) {
        let job = SyntheticJob { target_cpu: target, duration_s: duration as f64 / 10.0 };
        prop_assert_eq!(SyntheticJob::parse(&job.to_payload()).unwrap(), job);
    }

    #[test]
    fn irm_config_round_trips(
        estimate in size(),
        ttl in 1u32..10,
        window in 1usize..50,
        timeout_ds in 0u64..600,
    ) {
        let config = IrmConfig {
            default_cpu_estimate: estimate,
            ttl_initial: ttl,
            profiler_window_n: window,
            container_idle_timeout: std::time::Duration::from_millis(timeout_ds * 100),
            ..IrmConfig::default()
        };
        let text = serde_json::to_string(&config).unwrap();
        prop_assert_eq!(IrmConfig::from_json(&text).unwrap(), config);
    }
}

fn small_scenario(
    seed: u64,
    workloads: Vec<(f64, u8)>,
    batches: Vec<(u8, u8)>,
    max_workers: usize,
    delay_ds: u8,
) -> Scenario {
    let mut at = 0.0;
    Scenario {
        name: "prop".into(),
        seed,
        workloads: workloads
            .iter()
            .enumerate()
            .map(|(i, &(cpu, d))| Workload {
                image: format!("img{}", i % 2),
                tag: "latest".into(),
                target_cpu: cpu,
                duration_s: d as f64,
            })
            .collect(),
        schedule: batches
            .iter()
            .map(|&(gap, n)| {
                at += gap as f64;
                ScheduleEntry {
                    at_s: at,
                    batch_size: n as usize,
                    workload: WorkloadRef::MIXED,
                }
            })
            .collect(),
        cluster: streambin::harness::ClusterSpec {
            max_workers,
            pe_startup_delay_s: delay_ds as f64 / 10.0,
            ..Default::default()
        },
        irm: IrmConfig {
            max_workers,
            ..IrmConfig::default()
        },
        mode: Default::default(),
        run: Default::default(),
    }
}

fn scenarios() -> impl Strategy<Value = Scenario> {
    (
        any::<u64>(),
        prop::collection::vec((0.05f64..=1.0, 0u8..6), 1..4),
        prop::collection::vec((0u8..8, 1u8..12), 1..4),
        1usize..5,
        0u8..30,
    )
        .prop_map(|(seed, w, b, m, d)| small_scenario(seed, w, b, m, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_deterministic_and_conserves_messages(scenario in scenarios()) {
        let a = Simulation::run(scenario.clone());
        let b = Simulation::run(scenario.clone());
        prop_assert_eq!(a.csv(), b.csv());
        prop_assert_eq!(a.event_log(), b.event_log());
        prop_assert!(!a.summary.timed_out);
        prop_assert_eq!(audit::conservation(&a.events, &a.submitted), Ok(()));
        prop_assert!(audit::first_fit_violations(&a.events).is_empty());
        for frame in &a.frames {
            prop_assert!(frame.active_workers <= scenario.cluster.max_workers);
            for w in &frame.per_worker {
                prop_assert!(w.scheduled_cpu <= 1.0 + 1e-9);
                prop_assert!((-100.0..=100.0).contains(&w.error_pp));
            }
        }
        let mut sim = Simulation::new(scenario);
        let out = sim.run_once(1, false);
        prop_assert_eq!(to_csv(&out.frames), a.csv());
        prop_assert_eq!(sim.master().check_invariants(), Ok(()));
        prop_assert!(sim.master().backlog().is_empty());
    }
}
