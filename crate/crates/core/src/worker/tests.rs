use super::*;
use crate::protocol::SyntheticJob;

fn worker(delay: Millis) -> Worker<SimulatedBackend> {
    let config = WorkerConfig {
        pe_startup_delay: delay,
        ..WorkerConfig::default()
    };
    let mut w = Worker::new(config, SimulatedBackend::synthetic());
    w.set_worker_id("w0");
    w
}

fn start(pe_id: &str) -> StartPe {
    StartPe {
        image: SYNTHETIC_IMAGE.into(),
        tag: "latest".into(),
        pe_id: pe_id.into(),
        estimated_cpu: 0.5,
    }
}

fn job(id: &str, cpu: f64, secs: f64) -> StreamMessage {
    let payload = SyntheticJob {
        target_cpu: cpu,
        duration_s: secs,
    }
    .to_payload();
    StreamMessage::new(id, SYNTHETIC_IMAGE, "latest", payload, 0)
}

#[test]
fn started_pe_reports_zero_cpu_while_starting() {
    let mut w = worker(2_000);
    let started = w.start_pe(&start("p1"), 0).unwrap();
    assert_eq!(started.state, PeState::Starting);
    assert_eq!(started.endpoint.pe_id, "p1");
    let report = w.sample_and_report(1_000);
    assert_eq!(report.pe_stats[0].cpu_fraction, 0.0);
    assert_eq!(report.pe_stats[0].state, PeState::Starting);
    w.advance(2_000);
    assert_eq!(w.pes()["p1"].state, EngineState::Idle);
}

#[test]
fn zero_delay_start_is_idle_immediately() {
    let mut w = worker(0);
    assert_eq!(w.start_pe(&start("p1"), 0).unwrap().state, PeState::Idle);
}

#[test]
fn start_refused_while_provisioning() {
    let mut w = Worker::new(
        WorkerConfig {
            accept_starts_after: 5_000,
            ..WorkerConfig::default()
        },
        SimulatedBackend::synthetic(),
    );
    let err = w.start_pe(&start("p1"), 1_000).unwrap_err();
    assert_eq!(err, WorkerError::Provisioning);
    assert_eq!(err.status(), 503);
}

#[test]
fn unknown_image_is_unavailable() {
    let mut w = worker(0);
    let mut req = start("p1");
    req.image = "other".into();
    assert_eq!(w.start_pe(&req, 0).unwrap_err().status(), 503);
}

#[test]
fn duplicate_start_is_idempotent() {
    let mut w = worker(0);
    let a = w.start_pe(&start("p1"), 0).unwrap();
    let b = w.start_pe(&start("p1"), 10).unwrap();
    assert_eq!(a.endpoint, b.endpoint);
    assert_eq!(w.pes().len(), 1);
}

#[test]
fn stream_handoff_rules() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    assert_eq!(w.receive_stream(&job("m1", 0.7, 3.0), None, 0).unwrap(), "p1");
    assert_eq!(w.pes()["p1"].state, EngineState::Busy);
    // All PEs busy.
    assert!(matches!(
        w.receive_stream(&job("m2", 0.7, 3.0), None, 10),
        Err(WorkerError::NoIdlePe { .. })
    ));
    // Image mismatch.
    w.start_pe(&start("p2"), 0).unwrap();
    let mut other = job("m3", 0.5, 1.0);
    other.image = "other".into();
    assert!(w.receive_stream(&other, None, 10).is_err());
}

#[test]
fn busy_simulated_pe_reports_target() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    w.receive_stream(&job("m1", 0.7, 3.0), None, 0).unwrap();
    let report = w.sample_and_report(1_000);
    assert_eq!(report.pe_stats[0].cpu_fraction, 0.7);
    assert_eq!(report.per_image_avg[SYNTHETIC_IMAGE], 0.7);
}

#[test]
fn per_image_mean_over_running_pes() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    w.start_pe(&start("p2"), 0).unwrap();
    w.receive_stream(&job("m1", 0.3, 3.0), Some("p1"), 0).unwrap();
    w.receive_stream(&job("m2", 0.5, 3.0), Some("p2"), 0).unwrap();
    let report = w.sample_and_report(1_000);
    assert!((report.per_image_avg[SYNTHETIC_IMAGE] - 0.4).abs() < 1e-12);
}

#[test]
fn empty_report_is_heartbeat() {
    let mut w = worker(0);
    let report = w.sample_and_report(1_000);
    assert!(report.pe_stats.is_empty());
    assert_eq!(report.worker_id, "w0");
}

#[test]
fn completion_returns_pe_to_idle() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    w.receive_stream(&job("m1", 1.0, 2.0), None, 500).unwrap();
    w.advance(2_400);
    assert_eq!(w.pes()["p1"].state, EngineState::Busy);
    w.advance(2_600);
    let pe = &w.pes()["p1"];
    assert_eq!((pe.state, pe.last_activity), (EngineState::Idle, 2_500));
    let events = w.take_events();
    assert!(events
        .iter()
        .any(|e| e.kind == EventKind::MessageCompleted && e.field("msg") == Some("m1")));
}

#[test]
fn zero_duration_job_completes_at_once() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    w.receive_stream(&job("m1", 0.5, 0.0), None, 100).unwrap();
    assert_eq!(w.backend().cpu_at("p1", 100), 0.0);
    w.advance(100);
    assert_eq!(w.pes()["p1"].state, EngineState::Idle);
}

#[test]
fn busy_pe_is_not_stopped() {
    let mut w = worker(0);
    w.start_pe(&start("p1"), 0).unwrap();
    w.receive_stream(&job("m1", 0.5, 5.0), None, 0).unwrap();
    assert_eq!(w.stop_pe("p1"), Err(WorkerError::Busy("p1".into())));
    w.advance(5_000);
    assert_eq!(w.stop_pe("p1"), Ok(()));
    assert!(w.pes().is_empty());
}
