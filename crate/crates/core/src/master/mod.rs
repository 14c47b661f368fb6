//! The master: worker registry, PE directory, backlog queue and the resource
//! manager loops.
//!
//! [`Master`] is a synchronous state machine. Every operation takes the
//! current time; anything that has to reach another node is queued as an
//! [`Action`] for the driver (the HTTP service in [`service`], or the
//! simulator in [`crate::harness`]) to execute and report back through the
//! `on_*` methods.

mod backlog;
mod record;
pub mod service;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub use backlog::Backlog;
pub use record::{Claim, ClaimKind, PeRecord, WorkerRecord, WorkerState};

use crate::clock::Millis;
use crate::events::{Event, EventKind};
use crate::irm::{
    fail_allocation, packing_run, reap_idle, scaling_step, target_workers, AllocationOutcome,
    ContainerQueue, ContainerRequest, IrmConfig, LoadPredictor, Profiler, QueueSampler,
    ScalingDecision, ScalingStep,
};
use crate::protocol::{
    ideal_bins, MetricsFrame, PeEndpoint, PeStarted, PeState, PeStat, StartPe, StreamMessage,
    WorkerMetrics, WorkerReport,
};

/// How long a PE handed to a connector stays reserved.
pub const RESERVATION_WINDOW_MS: Millis = 5_000;

/// A worker is lost after this many report intervals without a report.
pub const LIVENESS_FACTOR: u64 = 3;

const LOAD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MasterError {
    #[error("unknown worker {0}; register first")]
    UnknownWorker(String),
    #[error("worker {0} has been removed")]
    WorkerRemoved(String),
}

/// Side effects requested by the master.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    StartPe {
        worker_id: String,
        host: String,
        port: u16,
        request: StartPe,
    },
    StopPe {
        worker_id: String,
        host: String,
        port: u16,
        pe_id: String,
    },
    Dispatch {
        worker_id: String,
        host: String,
        port: u16,
        pe_id: String,
        message: StreamMessage,
    },
    Provision {
        count: usize,
    },
    Decommission {
        worker_id: String,
        host: String,
        port: u16,
    },
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    interval: Millis,
    next: Millis,
}

impl Schedule {
    fn new(interval: Millis, start: Millis) -> Self {
        Self {
            interval: interval.max(1),
            next: start,
        }
    }

    fn due(&mut self, now: Millis) -> bool {
        if now < self.next {
            return false;
        }
        while self.next <= now {
            self.next += self.interval;
        }
        true
    }
}

pub struct Master {
    config: IrmConfig,
    started_at: Millis,
    workers: Vec<WorkerRecord>,
    by_id: HashMap<String, usize>,
    by_address: HashMap<(String, u16), usize>,
    backlog: Backlog,
    container_queue: ContainerQueue,
    pending_starts: HashMap<String, ContainerRequest>,
    profiler: Profiler,
    round_samples: BTreeMap<String, BTreeMap<String, f64>>,
    sampler: QueueSampler,
    predictor: LoadPredictor,
    pending_provisions: Vec<Millis>,
    bins_needed: usize,
    target_workers: usize,
    next_request: u64,
    next_pe: u64,
    packing: Schedule,
    prediction: Schedule,
    profiling: Schedule,
    outbox: Vec<Action>,
    events: Vec<Event>,
}

impl Master {
    pub fn new(config: IrmConfig, now: Millis) -> Self {
        Self {
            profiler: Profiler::new(config.profiler_window_n, config.default_cpu_estimate),
            predictor: LoadPredictor::new(config.clone()),
            packing: Schedule::new(config.packing_interval_ms(), now),
            prediction: Schedule::new(config.predictor_interval_ms(), now),
            profiling: Schedule::new(config.report_interval_ms(), now),
            config,
            started_at: now,
            workers: Vec::new(),
            by_id: HashMap::new(),
            by_address: HashMap::new(),
            backlog: Backlog::default(),
            container_queue: ContainerQueue::new(),
            pending_starts: HashMap::new(),
            round_samples: BTreeMap::new(),
            sampler: QueueSampler::default(),
            pending_provisions: Vec::new(),
            bins_needed: 0,
            target_workers: 0,
            next_request: 0,
            next_pe: 0,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &IrmConfig {
        &self.config
    }

    pub fn started_at(&self) -> Millis {
        self.started_at
    }

    pub fn workers(&self) -> &[WorkerRecord] {
        &self.workers
    }

    pub fn worker(&self, worker_id: &str) -> Option<&WorkerRecord> {
        self.by_id.get(worker_id).map(|&i| &self.workers[i])
    }

    pub fn backlog(&self) -> &Backlog {
        &self.backlog
    }

    pub fn container_queue(&self) -> &ContainerQueue {
        &self.container_queue
    }

    pub fn profiler(&self) -> &Profiler {
        &self.profiler
    }

    pub fn pending_starts(&self) -> usize {
        self.pending_starts.len()
    }

    pub fn pending_provisions(&self) -> usize {
        self.pending_provisions.len()
    }

    pub fn bins_needed(&self) -> usize {
        self.bins_needed
    }

    pub fn target(&self) -> usize {
        self.target_workers
    }

    pub fn active_workers(&self) -> usize {
        self.count_state(WorkerState::Active)
    }

    pub fn count_state(&self, state: WorkerState) -> usize {
        self.workers.iter().filter(|w| w.state == state).count()
    }

    pub fn take_actions(&mut self) -> Vec<Action> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Registers a worker by address; re-registering a live address returns
    /// its existing id.
    pub fn register_worker(&mut self, host: &str, port: u16, now: Millis) -> String {
        let key = (host.to_string(), port);
        if let Some(&i) = self.by_address.get(&key) {
            if self.workers[i].state != WorkerState::Removed {
                return self.workers[i].worker_id.clone();
            }
        }
        let index = self.workers.len();
        let record = WorkerRecord::new(index, host, port, now);
        let id = record.worker_id.clone();
        self.by_id.insert(id.clone(), index);
        self.by_address.insert(key, index);
        self.workers.push(record);
        if !self.pending_provisions.is_empty() {
            self.pending_provisions.remove(0);
        }
        self.events.push(
            Event::new(now, EventKind::WorkerRegistered)
                .with("worker", &id)
                .with("addr", format!("{host}:{port}")),
        );
        id
    }

    pub fn ingest_report(&mut self, report: &WorkerReport, now: Millis) -> Result<(), MasterError> {
        let &index = self
            .by_id
            .get(&report.worker_id)
            .ok_or_else(|| MasterError::UnknownWorker(report.worker_id.clone()))?;
        let residual_estimates: HashMap<&str, f64> = report
            .pe_stats
            .iter()
            .map(|s| (s.image.as_str(), self.profiler.item_size(&s.image)))
            .collect();
        let worker = &mut self.workers[index];
        if worker.state == WorkerState::Removed {
            return Err(MasterError::WorkerRemoved(report.worker_id.clone()));
        }
        worker.last_report = Some(now);
        if worker.state == WorkerState::Provisioning {
            worker.set_state(WorkerState::Active, now);
            self.events
                .push(Event::new(now, EventKind::WorkerActive).with("worker", &worker.worker_id));
        }

        for stat in &report.pe_stats {
            match worker.pes.get_mut(&stat.pe_id) {
                Some(pe) => apply_stat(pe, stat, report.sent_at, now),
                None if self.pending_starts.contains_key(&stat.pe_id) => {}
                None => {
                    let scheduled = residual_estimates[stat.image.as_str()].min(worker.residual());
                    let last = stat.last_activity.unwrap_or(now);
                    let pe = worker.insert_pe(
                        &stat.pe_id,
                        &stat.image,
                        &stat.tag,
                        stat.state,
                        scheduled,
                        last,
                    );
                    pe.measured_cpu = stat.cpu_fraction;
                    pe.known_since = Some(now);
                }
            }
        }
        let reported: Vec<&str> = report.pe_stats.iter().map(|s| s.pe_id.as_str()).collect();
        worker.pes.retain(|id, pe| {
            reported.contains(&id.as_str()) || pe.known_since.is_none_or(|k| k >= report.sent_at)
        });

        for (image, avg) in &report.per_image_avg {
            self.round_samples
                .entry(image.clone())
                .or_default()
                .insert(report.worker_id.clone(), *avg);
        }
        self.drain_backlog(now);
        Ok(())
    }

    /// Hands out an idle PE for `image:tag` and reserves it. Backlog messages
    /// for the same image are served first, so this only succeeds when none
    /// are waiting.
    pub fn find_available_pe(&mut self, image: &str, tag: &str, now: Millis) -> Option<PeEndpoint> {
        self.expire_reservations(now);
        self.drain_backlog(now);
        if self.backlog.has(image, tag) {
            return None;
        }
        for worker in self
            .workers
            .iter_mut()
            .filter(|w| w.state == WorkerState::Active)
        {
            if let Some(pe) = worker
                .pes
                .values_mut()
                .find(|pe| pe.is_available() && pe.matches(image, tag))
            {
                pe.claim = Some(Claim {
                    at: now,
                    kind: ClaimKind::Reserved {
                        until: now + RESERVATION_WINDOW_MS,
                    },
                });
                return Some(PeEndpoint {
                    worker_id: worker.worker_id.clone(),
                    host: worker.host.clone(),
                    port: worker.port,
                    pe_id: pe.pe_id.clone(),
                    image: pe.image.clone(),
                    tag: pe.tag.clone(),
                });
            }
        }
        None
    }

    /// Accepts a message into the backlog and returns the backlog length.
    pub fn enqueue_backlog(&mut self, message: StreamMessage, now: Millis) -> usize {
        self.events.push(
            Event::new(now, EventKind::MessageQueued)
                .with("msg", &message.message_id)
                .with("image", &message.image),
        );
        self.backlog.push_back(message);
        self.drain_backlog(now);
        self.backlog.len()
    }

    /// Pushes the oldest waiting message of each image to its idle PEs.
    pub fn drain_backlog(&mut self, now: Millis) {
        if self.backlog.is_empty() {
            return;
        }
        for worker in self
            .workers
            .iter_mut()
            .filter(|w| w.state == WorkerState::Active)
        {
            for pe in worker.pes.values_mut().filter(|pe| pe.is_available()) {
                let Some(message) = self.backlog.take_oldest(&pe.image, &pe.tag) else {
                    continue;
                };
                pe.claim = Some(Claim {
                    at: now,
                    kind: ClaimKind::Dispatched,
                });
                self.events.push(
                    Event::new(now, EventKind::MessageDispatched)
                        .with("msg", &message.message_id)
                        .with("worker", &worker.worker_id)
                        .with("pe", &pe.pe_id),
                );
                self.outbox.push(Action::Dispatch {
                    worker_id: worker.worker_id.clone(),
                    host: worker.host.clone(),
                    port: worker.port,
                    pe_id: pe.pe_id.clone(),
                    message,
                });
                if self.backlog.is_empty() {
                    return;
                }
            }
        }
    }

    pub fn on_dispatch_result(
        &mut self,
        worker_id: &str,
        pe_id: &str,
        message: StreamMessage,
        accepted: bool,
        now: Millis,
    ) {
        let pe = self
            .by_id
            .get(worker_id)
            .and_then(|&i| self.workers[i].pes.get_mut(pe_id));
        if accepted {
            if let Some(pe) = pe {
                pe.state = PeState::Running;
                pe.last_activity = now;
            }
            return;
        }
        if let Some(pe) = pe {
            // Unknown until the next report says otherwise.
            pe.claim = None;
            pe.state = PeState::Running;
        }
        self.events.push(
            Event::new(now, EventKind::MessageRequeued)
                .with("msg", &message.message_id)
                .with("worker", worker_id),
        );
        self.backlog.push_front(message);
        self.drain_backlog(now);
    }

    /// Queues `count` hosting requests for `image:tag`.
    pub fn request_pes(&mut self, image: &str, tag: &str, count: u32, now: Millis) {
        let estimate = self.profiler.item_size(image);
        for _ in 0..count {
            let request = ContainerRequest::new(
                format!("req-{}", self.next_request),
                image,
                tag,
                self.config.ttl_initial,
                estimate,
                now,
            );
            self.next_request += 1;
            if let Err(event) = self.container_queue.push(request, now) {
                self.events.push(event);
            }
        }
    }

    pub fn on_start_result(&mut self, pe_id: &str, result: Result<PeStarted, String>, now: Millis) {
        let Some(mut request) = self.pending_starts.remove(pe_id) else {
            return;
        };
        let worker_id = request.target_worker.clone().unwrap_or_default();
        let worker = self.by_id.get(&worker_id).map(|&i| &mut self.workers[i]);
        match (result, worker) {
            (Ok(started), Some(worker)) => {
                if let Some(pe) = worker.pes.get_mut(pe_id) {
                    pe.known_since = Some(now);
                    pe.last_activity = now;
                    if pe.state == PeState::Starting {
                        pe.state = started.state;
                    }
                }
                self.events.push(
                    Event::new(now, EventKind::PeStarted)
                        .with("worker", &worker_id)
                        .with("pe", pe_id)
                        .with("image", &request.image)
                        .with("cpu", format!("{:.4}", request.estimated_cpu)),
                );
                self.drain_backlog(now);
            }
            (result, worker) => {
                if let Some(worker) = worker {
                    worker.pes.remove(pe_id);
                }
                let reason = result.err().unwrap_or_else(|| "worker gone".into());
                match fail_allocation(&mut request) {
                    AllocationOutcome::Dropped => self.events.push(
                        Event::new(now, EventKind::RequestDropped)
                            .with("request", &request.request_id)
                            .with("image", &request.image)
                            .with("reason", "ttl_exhausted"),
                    ),
                    _ => {
                        self.events.push(
                            Event::new(now, EventKind::RequestRequeued)
                                .with("request", &request.request_id)
                                .with("worker", &worker_id)
                                .with("ttl", request.ttl)
                                .with("reason", sanitize(&reason)),
                        );
                        if let Err(event) = self.container_queue.push(request, now) {
                            self.events.push(event);
                        }
                    }
                }
            }
        }
    }

    /// The provider brought up `accepted` of `requested` workers; the rest are
    /// forgotten so a later autoscaling pass asks again.
    pub fn on_provision_result(&mut self, requested: usize, accepted: usize, _now: Millis) {
        let rejected = requested.saturating_sub(accepted);
        for _ in 0..rejected.min(self.pending_provisions.len()) {
            self.pending_provisions.pop();
        }
    }

    /// Runs whichever periodic loops are due.
    pub fn tick(&mut self, now: Millis) {
        self.expire_reservations(now);
        self.check_liveness(now);
        if self.profiling.due(now) {
            self.profiler_round();
        }
        if self.packing.due(now) {
            self.run_packing(now);
            self.autoscale(now);
        }
        if self.prediction.due(now) {
            self.run_predictor(now);
        }
        self.reap(now);
        self.retire_drained(now);
        self.drain_backlog(now);
    }

    fn expire_reservations(&mut self, now: Millis) {
        for worker in &mut self.workers {
            for pe in worker.pes.values_mut() {
                if let Some(Claim {
                    kind: ClaimKind::Reserved { until },
                    ..
                }) = pe.claim
                {
                    if now >= until {
                        pe.claim = None;
                        pe.last_activity = pe.last_activity.max(now);
                    }
                }
            }
        }
    }

    fn check_liveness(&mut self, now: Millis) {
        let timeout = LIVENESS_FACTOR * self.config.report_interval_ms();
        let grace = self.config.worker_grace_ms();
        for worker in &mut self.workers {
            match worker.state {
                WorkerState::Active | WorkerState::Draining => {
                    let last = worker.last_report.unwrap_or(worker.registered_at);
                    if now.saturating_sub(last) > timeout {
                        worker.set_state(WorkerState::Provisioning, now);
                        self.events.push(
                            Event::new(now, EventKind::WorkerLost)
                                .with("worker", &worker.worker_id),
                        );
                    }
                }
                WorkerState::Provisioning if worker.last_report.is_some() => {
                    if now.saturating_sub(worker.state_since) >= grace {
                        worker.pes.clear();
                        worker.set_state(WorkerState::Removed, now);
                        self.events.push(
                            Event::new(now, EventKind::WorkerRemoved)
                                .with("worker", &worker.worker_id)
                                .with("reason", "lost"),
                        );
                        self.outbox.push(Action::Decommission {
                            worker_id: worker.worker_id.clone(),
                            host: worker.host.clone(),
                            port: worker.port,
                        });
                    }
                }
                _ => {}
            }
        }
    }

    fn profiler_round(&mut self) {
        for (image, per_worker) in std::mem::take(&mut self.round_samples) {
            if per_worker.is_empty() {
                continue;
            }
            let mean = per_worker.values().sum::<f64>() / per_worker.len() as f64;
            self.profiler.add_sample(&image, mean);
        }
    }

    fn run_packing(&mut self, now: Millis) {
        self.container_queue.refresh(&self.profiler);
        let run = packing_run(self.container_queue.iter(), &self.workers);
        self.bins_needed = run.bins_needed;
        self.events.push(
            Event::new(now, EventKind::PackingRun)
                .with("queued", self.container_queue.len())
                .with("allocated", run.allocations.len())
                .with("bins_needed", run.bins_needed),
        );
        let ids: Vec<String> = run.allocations.iter().map(|a| a.request_id.clone()).collect();
        let mut taken: HashMap<String, ContainerRequest> = self
            .container_queue
            .take_ids(&ids)
            .into_iter()
            .map(|r| (r.request_id.clone(), r))
            .collect();

        for allocation in run.allocations {
            let Some(mut request) = taken.remove(&allocation.request_id) else {
                continue;
            };
            let index = self.by_id[&allocation.worker_id];
            let worker = &mut self.workers[index];
            request.target_worker = Some(worker.worker_id.clone());
            let pe_id = format!("pe-{}", self.next_pe);
            self.next_pe += 1;
            let cpu = request.estimated_cpu.clamp(crate::irm::MIN_ITEM_SIZE, 1.0);
            request.estimated_cpu = cpu;
            let pe = worker.insert_pe(&pe_id, &request.image, &request.tag, PeState::Starting, cpu, now);
            pe.known_since = None;

            let loads = allocation
                .loads_before
                .iter()
                .map(|(w, l)| format!("{w}:{l:.4}"))
                .collect::<Vec<_>>()
                .join(",");
            self.events.push(
                Event::new(now, EventKind::PeAllocated)
                    .with("worker", &worker.worker_id)
                    .with("pe", &pe_id)
                    .with("request", &request.request_id)
                    .with("image", &request.image)
                    .with("cpu", format!("{cpu:.4}"))
                    .with("loads", loads),
            );
            self.outbox.push(Action::StartPe {
                worker_id: worker.worker_id.clone(),
                host: worker.host.clone(),
                port: worker.port,
                request: StartPe {
                    image: request.image.clone(),
                    tag: request.tag.clone(),
                    pe_id: pe_id.clone(),
                    estimated_cpu: cpu,
                },
            });
            self.pending_starts.insert(pe_id, request);
        }
    }

    fn autoscale(&mut self, now: Millis) {
        let grace = self.config.worker_grace_ms();
        self.pending_provisions
            .retain(|&at| now.saturating_sub(at) < grace);
        let active = self.active_workers();
        let target = target_workers(self.bins_needed, active, self.config.max_workers);
        self.target_workers = target;

        match scaling_step(target, active, self.pending_provisions.len()) {
            ScalingStep::Hold => {}
            ScalingStep::Grow(mut n) => {
                for worker in self
                    .workers
                    .iter_mut()
                    .filter(|w| w.state == WorkerState::Draining)
                {
                    if n == 0 {
                        break;
                    }
                    worker.set_state(WorkerState::Active, now);
                    n -= 1;
                    self.events.push(
                        Event::new(now, EventKind::ScaleUp)
                            .with("worker", &worker.worker_id)
                            .with("target", target)
                            .with("reason", "reactivate"),
                    );
                }
                if n > 0 {
                    self.pending_provisions.extend(std::iter::repeat_n(now, n));
                    self.events.push(
                        Event::new(now, EventKind::ScaleUp)
                            .with("count", n)
                            .with("active", active)
                            .with("target", target),
                    );
                    self.outbox.push(Action::Provision { count: n });
                }
            }
            ScalingStep::Shrink(n) => {
                let pending = &self.pending_starts;
                let mut drained = 0;
                for worker in self.workers.iter_mut().rev() {
                    if drained == n {
                        break;
                    }
                    let busy = !worker.pes.is_empty()
                        || pending
                            .values()
                            .any(|r| r.target_worker.as_deref() == Some(&worker.worker_id));
                    if worker.state == WorkerState::Active && !busy {
                        worker.set_state(WorkerState::Draining, now);
                        drained += 1;
                        self.events.push(
                            Event::new(now, EventKind::ScaleDown)
                                .with("worker", &worker.worker_id)
                                .with("target", target),
                        );
                    }
                }
            }
        }
    }

    fn run_predictor(&mut self, now: Millis) {
        let metrics = self.sampler.sample(self.backlog.len(), now);
        let decision = self.predictor.evaluate(&metrics, now);
        if decision == ScalingDecision::None {
            self.bootstrap_images(now);
            return;
        }
        let Some((image, tag)) = self
            .backlog
            .oldest()
            .map(|m| (m.image.clone(), m.tag.clone()))
        else {
            return;
        };
        self.events.push(
            Event::new(now, EventKind::PredictorDecision)
                .with("decision", decision.label())
                .with("count", decision.count())
                .with("image", &image)
                .with("length", metrics.length)
                .with("roc", format!("{:.3}", metrics.roc)),
        );
        self.request_pes(&image, &tag, decision.count(), now);
    }

    /// Backlogged images with no PE anywhere, and none on the way, get
    /// `scale_small` PEs; otherwise a short queue would never be served.
    fn bootstrap_images(&mut self, now: Millis) {
        let mut starved: Vec<(String, String)> = Vec::new();
        for m in self.backlog.iter() {
            let key = (m.image.clone(), m.tag.clone());
            if starved.contains(&key) {
                continue;
            }
            let hosted = self
                .workers
                .iter()
                .filter(|w| w.state != WorkerState::Removed)
                .any(|w| w.pes.values().any(|pe| pe.matches(&m.image, &m.tag)));
            let queued = self
                .container_queue
                .iter()
                .chain(self.pending_starts.values())
                .any(|r| r.image == m.image && r.tag == m.tag);
            if !hosted && !queued {
                starved.push(key);
            }
        }
        for (image, tag) in starved {
            self.events.push(
                Event::new(now, EventKind::PredictorDecision)
                    .with("decision", "bootstrap")
                    .with("count", self.config.scale_small)
                    .with("image", &image)
                    .with("length", self.backlog.len()),
            );
            self.request_pes(&image, &tag, self.config.scale_small, now);
        }
    }

    fn reap(&mut self, now: Millis) {
        let stopped = reap_idle(&mut self.workers, now, self.config.idle_timeout_ms());
        for pe in stopped {
            let worker = &self.workers[self.by_id[&pe.worker_id]];
            self.events.push(
                Event::new(now, EventKind::PeStopped)
                    .with("worker", &pe.worker_id)
                    .with("pe", &pe.pe_id)
                    .with("image", &pe.image)
                    .with("idle_ms", pe.idle_for),
            );
            self.outbox.push(Action::StopPe {
                worker_id: pe.worker_id,
                host: worker.host.clone(),
                port: worker.port,
                pe_id: pe.pe_id,
            });
        }
    }

    fn retire_drained(&mut self, now: Millis) {
        let grace = self.config.worker_grace_ms();
        for worker in &mut self.workers {
            if worker.state == WorkerState::Draining
                && worker.pes.is_empty()
                && now.saturating_sub(worker.state_since) >= grace
            {
                worker.set_state(WorkerState::Removed, now);
                self.events.push(
                    Event::new(now, EventKind::WorkerRemoved)
                        .with("worker", &worker.worker_id)
                        .with("reason", "drained"),
                );
                self.outbox.push(Action::Decommission {
                    worker_id: worker.worker_id.clone(),
                    host: worker.host.clone(),
                    port: worker.port,
                });
            }
        }
    }

    /// The master's view of the system, measured CPU as last reported.
    pub fn status(&self, now: Millis) -> MetricsFrame {
        let live: Vec<&WorkerRecord> = self
            .workers
            .iter()
            .filter(|w| w.state != WorkerState::Removed)
            .collect();
        let total: f64 = live.iter().map(|w| w.scheduled_load()).sum();
        MetricsFrame {
            t: now.saturating_sub(self.started_at) as f64 / 1000.0,
            per_worker: live
                .iter()
                .map(|w| WorkerMetrics::new(&w.worker_id, w.scheduled_load(), w.measured_load()))
                .collect(),
            queue_length: self.backlog.len(),
            active_workers: self.active_workers(),
            target_workers: self.target_workers,
            ideal_bins: ideal_bins(total),
        }
    }

    /// Checks the bin invariant on every non-removed worker.
    pub fn check_invariants(&self) -> Result<(), String> {
        for w in &self.workers {
            let load = w.scheduled_load();
            if load > 1.0 + LOAD_TOLERANCE {
                return Err(format!("{} scheduled {load} > 1", w.worker_id));
            }
        }
        Ok(())
    }
}

fn sanitize(reason: &str) -> String {
    reason.split_whitespace().collect::<Vec<_>>().join("_")
}

fn apply_stat(pe: &mut PeRecord, stat: &PeStat, sent_at: Millis, now: Millis) {
    pe.measured_cpu = stat.cpu_fraction;
    if let Some(claim) = &pe.claim {
        if sent_at < claim.at {
            return;
        }
        let picked_up = match stat.last_activity {
            Some(at) => at >= claim.at,
            None => stat.state == PeState::Running,
        };
        if !picked_up {
            return;
        }
        pe.claim = None;
    }
    let was = pe.state;
    pe.state = stat.state;
    match (stat.state, stat.last_activity) {
        (PeState::Starting, _) => {}
        (_, Some(at)) => pe.last_activity = at,
        (PeState::Idle, None) if was != PeState::Idle => pe.last_activity = now,
        (PeState::Running, None) => pe.last_activity = now,
        _ => {}
    }
}

#[cfg(test)]
mod tests;
