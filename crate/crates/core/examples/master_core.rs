//! Drives the master's state machine by hand, with no network: a worker
//! registers, a message is queued, packing places a PE and the backlog
//! drains to it once the worker reports the PE ready.

use streambin::irm::IrmConfig;
use streambin::master::{Action, Master};
use streambin::protocol::{PeEndpoint, PeStarted, PeStat, PeState, StreamMessage, WorkerReport};

fn main() {
    let mut master = Master::new(IrmConfig::default(), 0);
    let w0 = master.register_worker("10.0.0.5", 9000, 0);
    master.ingest_report(&WorkerReport::new(&w0, 0, vec![]), 0).unwrap();

    let msg = StreamMessage::new("m1", "resize", "v1", b"pixels".to_vec(), 0);
    assert!(master.find_available_pe("resize", "v1", 0).is_none());
    master.enqueue_backlog(msg, 0);

    // The predictor and packing run on their own schedules.
    let mut now = 0;
    let pe_id = loop {
        now += 100;
        master.tick(now);
        let started = master.take_actions().into_iter().find_map(|a| match a {
            Action::StartPe { request, .. } => Some(request),
            _ => None,
        });
        if let Some(req) = started {
            println!("t={now}ms start {} on {} at cpu {:.2}", req.pe_id, w0, req.estimated_cpu);
            break req.pe_id;
        }
    };
    let ready = PeStarted {
        endpoint: PeEndpoint {
            worker_id: w0.clone(),
            host: "10.0.0.5".into(),
            port: 9000,
            pe_id: pe_id.clone(),
            image: "resize".into(),
            tag: "v1".into(),
        },
        state: PeState::Idle,
    };
    master.on_start_result(&pe_id, Ok(ready), now);
    for action in master.take_actions() {
        if let Action::Dispatch { pe_id, message, .. } = action {
            println!("t={now}ms dispatch {} to {pe_id}", message.message_id);
        }
    }

    now += 1_000;
    let stat = PeStat {
        pe_id: pe_id.clone(),
        image: "resize".into(),
        tag: "v1".into(),
        cpu_fraction: 0.35,
        state: PeState::Running,
        last_activity: Some(now - 1_000),
    };
    master.ingest_report(&WorkerReport::new(&w0, now, vec![stat]), now).unwrap();
    for e in master.take_events() {
        println!("{e}");
    }
    let frame = master.status(now);
    println!("queue {} scheduled {:.2}", frame.queue_length, frame.per_worker[0].scheduled_cpu);
}
