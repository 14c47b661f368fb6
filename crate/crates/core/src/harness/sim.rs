//! Deterministic in-process simulation on a virtual clock.
//!
//! One master, simulated workers and a connector share a single thread.
//! Each tick advances the workers' jobs, delivers due submissions, sends the
//! reports that fall on the report grid, then runs the master's loops and
//! executes its actions until it goes quiet. A metrics frame is taken every
//! whole second.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_abs_error, rows};
use super::scenario::{Scenario, WorkloadRef};
use crate::clock::Millis;
use crate::events::{Event, EventKind, EventLine};
use crate::master::{Action, Master, MasterError};
use crate::protocol::{MetricsFrame, StreamMessage, SyntheticJob, WorkerMetrics};
use crate::worker::{SimulatedBackend, Worker, WorkerConfig};

const MAX_PUMP_ROUNDS: usize = 64;

/// Outcome of one run, for tables and comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub submitted: usize,
    pub completed: usize,
    pub p2p: usize,
    pub queued: usize,
    /// First submission to last completion, seconds.
    pub makespan_s: f64,
    pub mean_abs_error_pp: f64,
    pub duration_s: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Clock reading at frame time zero; event timestamps use the same clock.
    pub started_at: Millis,
    pub frames: Vec<MetricsFrame>,
    pub events: Vec<EventLine>,
    pub submitted: Vec<String>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        super::metrics::to_csv(&self.frames)
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

struct SimWorker {
    worker: Worker<SimulatedBackend>,
    next_report: Millis,
    gone: bool,
}

pub struct Simulation {
    scenario: Scenario,
    now: Millis,
    master: Master,
    workers: Vec<SimWorker>,
    next_message: usize,
    log: Vec<Event>,
    p2p: usize,
    queued: usize,
}

fn secs(s: f64) -> Millis {
    (s * 1000.0).round() as Millis
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Self {
        let master = Master::new(scenario.irm.clone(), 0);
        let mut sim = Self {
            scenario,
            now: 0,
            master,
            workers: Vec::new(),
            next_message: 0,
            log: Vec::new(),
            p2p: 0,
            queued: 0,
        };
        for _ in 0..sim.scenario.cluster.initial_workers {
            sim.add_worker(0, 0);
        }
        sim.flush();
        sim
    }

    pub fn master(&self) -> &Master {
        &self.master
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    /// Runs the scenario once.
    pub fn run(scenario: Scenario) -> RunOutput {
        let mut sim = Self::new(scenario);
        sim.run_once(1, false)
    }

    fn report_interval(&self) -> Millis {
        self.scenario.irm.report_interval_ms().max(1)
    }

    fn live_workers(&self) -> usize {
        self.workers.iter().filter(|w| !w.gone).count()
    }

    fn add_worker(&mut self, now: Millis, boot_delay: Millis) {
        let index = self.workers.len();
        let config = WorkerConfig {
            host: "sim".into(),
            port: 10_000 + index as u16,
            pe_startup_delay: secs(self.scenario.cluster.pe_startup_delay_s),
            accept_starts_after: now + boot_delay,
            report_interval: self.report_interval(),
            max_pes: usize::MAX,
        };
        let mut worker = Worker::new(config, SimulatedBackend::new(self.scenario.images()));
        let id = self.master.register_worker("sim", worker.config().port, now);
        worker.set_worker_id(id);
        let ri = self.report_interval();
        // Reports fall on the global grid; the first one at or after `now`,
        // or the next one if this tick's reports are already out.
        let next_report = if now == 0 { 0 } else { (now / ri + 1) * ri };
        self.workers.push(SimWorker {
            worker,
            next_report,
            gone: false,
        });
    }

    fn worker_mut(&mut self, id: &str) -> Option<&mut SimWorker> {
        self.workers
            .iter_mut()
            .find(|w| !w.gone && w.worker.worker_id() == id)
    }

    fn flush(&mut self) {
        self.log.extend(self.master.take_events());
        for w in &mut self.workers {
            self.log.extend(w.worker.take_events());
        }
    }

    fn plan(&mut self, start: Millis, rng: &mut ChaCha8Rng, shuffle: bool) -> VecDeque<(Millis, StreamMessage)> {
        let mut plan = VecDeque::new();
        for entry in &self.scenario.schedule {
            let at = start + secs(entry.at_s);
            let mut batch = Vec::with_capacity(entry.batch_size);
            for _ in 0..entry.batch_size {
                let index = match entry.workload {
                    WorkloadRef::Index(i) => i,
                    WorkloadRef::Mixed(_) => rng.gen_range(0..self.scenario.workloads.len()),
                };
                batch.push(index);
            }
            if shuffle {
                batch.shuffle(rng);
            }
            for index in batch {
                let w = &self.scenario.workloads[index];
                let payload = SyntheticJob {
                    target_cpu: w.target_cpu,
                    duration_s: w.duration_s,
                }
                .to_payload();
                let id = format!("m{:05}", self.next_message);
                self.next_message += 1;
                plan.push_back((at, StreamMessage::new(id, &w.image, &w.tag, payload, at)));
            }
        }
        plan
    }

    /// Runs one pass of the schedule starting on the next whole second,
    /// keeping all master state from earlier passes. The master is always
    /// up for at least a second before the first batch.
    pub fn run_once(&mut self, run: usize, shuffle: bool) -> RunOutput {
        let tick = self.scenario.run.tick_ms;
        let start = self.now.div_ceil(1000).max(1) * 1000;
        let seed = self.scenario.seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = self.plan(start, &mut rng, shuffle);
        let submitted: Vec<String> = plan.iter().map(|(_, m)| m.message_id.clone()).collect();
        let mut idle = VecDeque::new();
        while self.now < start {
            self.step(self.now, &mut idle);
            self.now += tick;
        }
        let log_start = self.log.len();
        let (p2p0, queued0) = (self.p2p, self.queued);
        let quiescence = secs(self.scenario.run.quiescence_s);
        let max_duration = secs(self.scenario.run.max_duration_s);

        let frame_every = self.scenario.run.frame_interval_ms.max(1);
        let mut frames = Vec::new();
        let mut quiet_since: Option<Millis> = None;
        let mut t = start;
        let timed_out = loop {
            self.step(t, &mut plan);
            let rel = t - start;
            if rel % frame_every == 0 {
                frames.push(self.frame(t, rel));
            }
            if plan.is_empty() && self.is_idle() {
                let since = *quiet_since.get_or_insert(t);
                if t - since >= quiescence && rel % 1000 == 0 {
                    break false;
                }
            } else {
                quiet_since = None;
            }
            if rel >= max_duration {
                break true;
            }
            t += tick;
        };
        self.now = t + tick;

        let events: Vec<EventLine> = self.log[log_start..].iter().map(EventLine::from).collect();
        let first_submit = submitted.first().map(|_| start + secs(self.scenario.schedule[0].at_s));
        let last_done = events
            .iter()
            .filter(|e| e.kind == EventKind::MessageCompleted)
            .map(|e| e.at)
            .max();
        let completed = events
            .iter()
            .filter(|e| e.kind == EventKind::MessageCompleted)
            .count();
        let makespan_s = match (first_submit, last_done) {
            (Some(a), Some(b)) if b >= a => (b - a) as f64 / 1000.0,
            _ => 0.0,
        };
        let summary = RunSummary {
            run,
            submitted: submitted.len(),
            completed,
            p2p: self.p2p - p2p0,
            queued: self.queued - queued0,
            makespan_s,
            mean_abs_error_pp: mean_abs_error(&rows(&frames)),
            duration_s: (t - start) as f64 / 1000.0,
            timed_out,
        };
        RunOutput {
            started_at: start,
            frames,
            events,
            submitted,
            summary,
        }
    }

    /// No queued work, no PEs anywhere.
    fn is_idle(&self) -> bool {
        self.master.backlog().is_empty()
            && self.master.container_queue().is_empty()
            && self.master.pending_starts() == 0
            && self.master.workers().iter().all(|w| w.pes.is_empty())
            && self
                .workers
                .iter()
                .all(|w| w.gone || w.worker.pes().is_empty())
    }

    fn step(&mut self, t: Millis, plan: &mut VecDeque<(Millis, StreamMessage)>) {
        for w in self.workers.iter_mut().filter(|w| !w.gone) {
            w.worker.advance(t);
        }
        self.flush();

        while plan.front().is_some_and(|(at, _)| *at <= t) {
            let (_, message) = plan.pop_front().expect("checked above");
            self.submit(message, t);
        }

        let ri = self.report_interval();
        for i in 0..self.workers.len() {
            let w = &mut self.workers[i];
            if w.gone || t < w.next_report {
                continue;
            }
            while w.next_report <= t {
                w.next_report += ri;
            }
            let report = w.worker.sample_and_report(t);
            match self.master.ingest_report(&report, t) {
                Ok(()) => {}
                Err(MasterError::WorkerRemoved(_)) => self.workers[i].gone = true,
                Err(MasterError::UnknownWorker(_)) => {
                    let port = self.workers[i].worker.config().port;
                    let id = self.master.register_worker("sim", port, t);
                    self.workers[i].worker.set_worker_id(id);
                }
            }
            self.pump(t);
        }

        for _ in 0..MAX_PUMP_ROUNDS {
            self.master.tick(t);
            if !self.pump(t) {
                break;
            }
        }
        self.flush();
    }

    /// The connector's path for one message.
    fn submit(&mut self, message: StreamMessage, t: Millis) {
        self.log.push(
            Event::new(t, EventKind::MessageSubmitted)
                .with("msg", &message.message_id)
                .with("image", &message.image),
        );
        let endpoint = self.master.find_available_pe(&message.image, &message.tag, t);
        self.pump(t);
        if let Some(ep) = endpoint {
            let accepted = self
                .worker_mut(&ep.worker_id)
                .map(|w| w.worker.receive_stream(&message, Some(&ep.pe_id), t).is_ok())
                .unwrap_or(false);
            self.flush();
            if accepted {
                self.p2p += 1;
                return;
            }
        }
        self.queued += 1;
        self.master.enqueue_backlog(message, t);
        self.pump(t);
    }

    /// Executes pending master actions; `true` if there were any.
    fn pump(&mut self, t: Millis) -> bool {
        let mut any = false;
        loop {
            self.flush();
            let actions = self.master.take_actions();
            if actions.is_empty() {
                return any;
            }
            any = true;
            for action in actions {
                self.execute(action, t);
            }
        }
    }

    fn execute(&mut self, action: Action, t: Millis) {
        match action {
            Action::StartPe {
                worker_id, request, ..
            } => {
                let result = match self.worker_mut(&worker_id) {
                    Some(w) => w.worker.start_pe(&request, t).map_err(|e| e.to_string()),
                    None => Err("unreachable".into()),
                };
                self.master.on_start_result(&request.pe_id, result, t);
            }
            Action::Dispatch {
                worker_id,
                pe_id,
                message,
                ..
            } => {
                let accepted = self
                    .worker_mut(&worker_id)
                    .map(|w| w.worker.receive_stream(&message, Some(&pe_id), t).is_ok())
                    .unwrap_or(false);
                self.master
                    .on_dispatch_result(&worker_id, &pe_id, message, accepted, t);
            }
            Action::StopPe {
                worker_id, pe_id, ..
            } => {
                if let Some(w) = self.worker_mut(&worker_id) {
                    let _ = w.worker.stop_pe(&pe_id);
                }
            }
            Action::Provision { count } => {
                let room = self
                    .scenario
                    .cluster
                    .max_workers
                    .saturating_sub(self.live_workers());
                let accepted = count.min(room);
                let boot = secs(self.scenario.cluster.worker_startup_delay_s);
                for _ in 0..accepted {
                    self.add_worker(t, boot);
                }
                self.master.on_provision_result(count, accepted, t);
            }
            Action::Decommission { worker_id, .. } => {
                if let Some(w) = self.worker_mut(&worker_id) {
                    w.gone = true;
                }
            }
        }
    }

    /// Master view for scheduled CPU, worker ground truth for measured.
    fn frame(&self, t: Millis, rel: Millis) -> MetricsFrame {
        let mut frame = self.master.status(t);
        frame.t = rel as f64 / 1000.0;
        for m in &mut frame.per_worker {
            let measured = self
                .workers
                .iter()
                .find(|w| !w.gone && w.worker.worker_id() == m.worker_id)
                .map(|w| w.worker.backend().load_at(t))
                .unwrap_or(0.0);
            *m = WorkerMetrics::new(&m.worker_id, m.scheduled_cpu, measured);
        }
        frame
    }
}

/// Keeps one master across `runs` passes of the scenario, shuffling the
/// submission order of each pass.
pub fn replay_runs(scenario: Scenario, runs: usize) -> Vec<RunOutput> {
    let mut sim = Simulation::new(scenario);
    (1..=runs).map(|run| sim.run_once(run, true)).collect()
}
