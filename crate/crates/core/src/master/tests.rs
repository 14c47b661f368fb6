use super::*;

fn config() -> IrmConfig {
    IrmConfig::default()
}

fn stat(pe: &str, image: &str, cpu: f64, state: PeState, last: Option<Millis>) -> PeStat {
    PeStat {
        pe_id: pe.into(),
        image: image.into(),
        tag: "t".into(),
        cpu_fraction: cpu,
        state,
        last_activity: last,
    }
}

fn msg(id: &str, image: &str) -> StreamMessage {
    StreamMessage::new(id, image, "t", b"{}".to_vec(), 0)
}

/// One active worker hosting an idle PE `p0` of image `a`.
fn with_idle_pe() -> (Master, String) {
    let mut m = Master::new(config(), 0);
    let w = m.register_worker("h", 1, 0);
    let report = WorkerReport::new(&w, 100, vec![stat("p0", "a", 0.0, PeState::Idle, Some(100))]);
    m.ingest_report(&report, 100).unwrap();
    m.take_actions();
    (m, w)
}

#[test]
fn registration_is_idempotent_per_address() {
    let mut m = Master::new(config(), 0);
    let a = m.register_worker("h", 1, 0);
    let b = m.register_worker("h", 2, 0);
    assert_ne!(a, b);
    assert_eq!(m.register_worker("h", 1, 5), a);
    assert_eq!(m.workers().len(), 2);
}

#[test]
fn first_report_activates_and_silence_deactivates() {
    let mut m = Master::new(config(), 0);
    let w = m.register_worker("h", 1, 0);
    assert_eq!(m.worker(&w).unwrap().state, WorkerState::Provisioning);
    m.ingest_report(&WorkerReport::new(&w, 0, vec![]), 0).unwrap();
    assert_eq!(m.worker(&w).unwrap().state, WorkerState::Active);
    m.tick(3_000);
    assert_eq!(m.worker(&w).unwrap().state, WorkerState::Active);
    m.tick(3_100);
    assert_eq!(m.worker(&w).unwrap().state, WorkerState::Provisioning);
    assert!(m
        .take_events()
        .iter()
        .any(|e| e.kind == EventKind::WorkerLost));
}

#[test]
fn lost_worker_removed_after_grace() {
    let mut m = Master::new(config(), 0);
    let w = m.register_worker("h", 1, 0);
    m.ingest_report(&WorkerReport::new(&w, 0, vec![]), 0).unwrap();
    m.tick(3_100);
    m.tick(33_100);
    assert_eq!(m.worker(&w).unwrap().state, WorkerState::Removed);
    assert!(m
        .take_actions()
        .iter()
        .any(|a| matches!(a, Action::Decommission { .. })));
    let late = m.ingest_report(&WorkerReport::new(&w, 34_000, vec![]), 34_000);
    assert_eq!(late, Err(MasterError::WorkerRemoved(w)));
}

#[test]
fn unknown_worker_report_rejected() {
    let mut m = Master::new(config(), 0);
    let err = m.ingest_report(&WorkerReport::new("w9", 0, vec![]), 0);
    assert_eq!(err, Err(MasterError::UnknownWorker("w9".into())));
}

#[test]
fn report_updates_measured_cpu_and_profiler() {
    let (mut m, w) = with_idle_pe();
    let report = WorkerReport::new(&w, 1_000, vec![stat("p0", "a", 0.4, PeState::Running, Some(900))]);
    m.ingest_report(&report, 1_000).unwrap();
    assert_eq!(m.worker(&w).unwrap().pes["p0"].measured_cpu, 0.4);
    m.tick(1_000);
    assert!((m.profiler().estimate("a") - 0.4).abs() < 1e-12);
}

#[test]
fn unknown_pe_is_adopted() {
    let (m, w) = with_idle_pe();
    let pe = &m.worker(&w).unwrap().pes["p0"];
    assert_eq!(pe.image, "a");
    assert_eq!(pe.scheduled_cpu, 0.5);
}

#[test]
fn profiler_sample_is_mean_across_workers() {
    let mut m = Master::new(config(), 0);
    let w0 = m.register_worker("h", 1, 0);
    let w1 = m.register_worker("h", 2, 0);
    m.ingest_report(&WorkerReport::new(&w0, 0, vec![stat("p0", "a", 0.3, PeState::Running, Some(0))]), 0)
        .unwrap();
    m.ingest_report(&WorkerReport::new(&w1, 0, vec![stat("p1", "a", 0.5, PeState::Running, Some(0))]), 0)
        .unwrap();
    m.tick(0);
    let profile = m.profiler().profile("a").unwrap();
    assert_eq!(profile.sample_count, 1);
    assert!((profile.moving_avg - 0.4).abs() < 1e-12);
}

#[test]
fn reservation_blocks_second_query() {
    let (mut m, w) = with_idle_pe();
    let ep = m.find_available_pe("a", "t", 200).unwrap();
    assert_eq!((ep.worker_id.as_str(), ep.pe_id.as_str()), (w.as_str(), "p0"));
    assert!(m.find_available_pe("a", "t", 201).is_none());
}

#[test]
fn reservation_lapses_after_window() {
    let (mut m, _) = with_idle_pe();
    m.find_available_pe("a", "t", 200).unwrap();
    assert!(m.find_available_pe("a", "t", 200 + RESERVATION_WINDOW_MS - 1).is_none());
    assert!(m.find_available_pe("a", "t", 200 + RESERVATION_WINDOW_MS).is_some());
}

#[test]
fn no_pe_or_wrong_image_gives_none() {
    let mut m = Master::new(config(), 0);
    assert!(m.find_available_pe("a", "t", 0).is_none());
    let (mut m, _) = with_idle_pe();
    assert!(m.find_available_pe("b", "t", 200).is_none());
}

#[test]
fn stale_report_does_not_free_claim() {
    let (mut m, w) = with_idle_pe();
    m.find_available_pe("a", "t", 500).unwrap();
    // Sent before the reservation: says nothing about it.
    let stale = WorkerReport::new(&w, 400, vec![stat("p0", "a", 0.0, PeState::Idle, Some(100))]);
    m.ingest_report(&stale, 600).unwrap();
    assert!(m.worker(&w).unwrap().pes["p0"].claim.is_some());
    // Picked up and finished after the claim: free again.
    let fresh = WorkerReport::new(&w, 1_000, vec![stat("p0", "a", 0.0, PeState::Idle, Some(900))]);
    m.ingest_report(&fresh, 1_000).unwrap();
    assert!(m.worker(&w).unwrap().pes["p0"].is_available());
}

#[test]
fn backlog_served_before_advertising() {
    let (mut m, w) = with_idle_pe();
    m.find_available_pe("a", "t", 150).unwrap();
    m.enqueue_backlog(msg("m1", "a"), 160);
    m.enqueue_backlog(msg("m2", "a"), 170);
    // PE finishes the connector's message and goes idle.
    let report = WorkerReport::new(&w, 1_000, vec![stat("p0", "a", 0.0, PeState::Idle, Some(900))]);
    m.ingest_report(&report, 1_000).unwrap();
    let actions = m.take_actions();
    assert!(matches!(&actions[..], [Action::Dispatch { message, .. }] if message.message_id == "m1"));
    assert!(m.find_available_pe("a", "t", 1_001).is_none());
    assert_eq!(m.backlog().len(), 1);
}

#[test]
fn empty_backlog_advertises_normally() {
    let (mut m, _) = with_idle_pe();
    m.drain_backlog(200);
    assert!(m.take_actions().is_empty());
    assert!(m.find_available_pe("a", "t", 200).is_some());
}

#[test]
fn failed_dispatch_requeues_at_front() {
    let (mut m, w) = with_idle_pe();
    m.enqueue_backlog(msg("m1", "a"), 200);
    m.enqueue_backlog(msg("m2", "a"), 201);
    let Some(Action::Dispatch { message, .. }) = m.take_actions().pop() else {
        panic!("expected a dispatch");
    };
    assert_eq!(message.message_id, "m1");
    m.on_dispatch_result(&w, "p0", message, false, 300);
    assert_eq!(m.backlog().oldest().unwrap().message_id, "m1");
    assert_eq!(m.backlog().len(), 2);
}

fn active_workers(m: &mut Master, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let w = m.register_worker("h", 10 + i as u16, 0);
            m.ingest_report(&WorkerReport::new(&w, 0, vec![]), 0).unwrap();
            w
        })
        .collect()
}

#[test]
fn packing_allocates_first_fit_and_counts_bins() {
    let mut cfg = config();
    cfg.default_cpu_estimate = 0.6;
    let mut m = Master::new(cfg, 0);
    let w = active_workers(&mut m, 1);
    m.request_pes("a", "t", 2, 0);
    m.tick(0);
    let starts: Vec<_> = m
        .take_actions()
        .into_iter()
        .filter(|a| matches!(a, Action::StartPe { .. }))
        .collect();
    assert_eq!(starts.len(), 1);
    assert_eq!(m.bins_needed(), 2);
    assert_eq!(m.container_queue().len(), 1);
    assert!((m.worker(&w[0]).unwrap().scheduled_load() - 0.6).abs() < 1e-12);
}

#[test]
fn allocation_success_and_failure_paths() {
    let mut m = Master::new(config(), 0);
    let w = active_workers(&mut m, 1);
    m.request_pes("a", "t", 1, 0);
    m.tick(0);
    let pe_id = m
        .take_actions()
        .into_iter()
        .find_map(|a| match a {
            Action::StartPe { request, .. } => Some(request.pe_id),
            _ => None,
        })
        .unwrap();
    m.on_start_result(&pe_id, Err("503".into()), 10);
    assert!(m.worker(&w[0]).unwrap().pes.is_empty());
    let req = m.container_queue().iter().next().unwrap();
    assert_eq!(req.ttl, 2);
    assert!(req.target_worker.is_none());
}

#[test]
fn ttl_exhaustion_drops_request() {
    let mut m = Master::new(config(), 0);
    active_workers(&mut m, 1);
    m.request_pes("a", "t", 1, 0);
    for round in 0..3u64 {
        let now = round * 2_000;
        m.tick(now);
        for a in m.take_actions() {
            if let Action::StartPe { request, .. } = a {
                m.on_start_result(&request.pe_id, Err("booting".into()), now);
            }
        }
        // Keep the worker alive.
        m.ingest_report(&WorkerReport::new("w0", now, vec![]), now).unwrap();
    }
    assert!(m.container_queue().is_empty());
    let events = m.take_events();
    assert_eq!(events.iter().filter(|e| e.kind == EventKind::RequestRequeued).count(), 2);
    assert_eq!(events.iter().filter(|e| e.kind == EventKind::RequestDropped).count(), 1);
}

#[test]
fn autoscaler_provisions_up_to_cap() {
    let mut cfg = config();
    cfg.max_workers = 5;
    cfg.default_cpu_estimate = 1.0;
    let mut m = Master::new(cfg, 0);
    active_workers(&mut m, 2);
    m.request_pes("a", "t", 8, 0);
    m.tick(0);
    assert_eq!(m.bins_needed(), 8);
    assert_eq!(m.target(), 5);
    let provision = m
        .take_actions()
        .into_iter()
        .find_map(|a| match a {
            Action::Provision { count } => Some(count),
            _ => None,
        });
    assert_eq!(provision, Some(3));
}

#[test]
fn scale_down_drains_highest_index_first() {
    let mut m = Master::new(config(), 0);
    active_workers(&mut m, 3);
    m.tick(0);
    // Nothing to pack; the buffer for three active workers is two.
    assert_eq!(m.target(), 2);
    let states: Vec<_> = m.workers().iter().map(|w| w.state).collect();
    assert_eq!(
        states,
        [WorkerState::Active, WorkerState::Active, WorkerState::Draining]
    );
}

#[test]
fn reaper_releases_idle_pe() {
    let (mut m, w) = with_idle_pe();
    m.tick(1_100);
    assert!(m.worker(&w).unwrap().pes.is_empty());
    assert!(m
        .take_actions()
        .iter()
        .any(|a| matches!(a, Action::StopPe { pe_id, .. } if pe_id == "p0")));
}

#[test]
fn starved_backlog_bootstraps_a_pe() {
    let mut m = Master::new(config(), 0);
    active_workers(&mut m, 1);
    m.enqueue_backlog(msg("m1", "a"), 0);
    m.tick(0);
    assert_eq!(m.container_queue().len(), 1);
    m.tick(2_000);
    assert!(m
        .take_actions()
        .iter()
        .any(|a| matches!(a, Action::StartPe { .. })));
}
