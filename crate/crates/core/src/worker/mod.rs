//! Worker node: hosts processing engines (PEs), samples their CPU usage and
//! reports to the master, and accepts stream messages peer-to-peer.
//!
//! PEs run on a [`PeBackend`]: [`SimulatedBackend`] keeps virtual job records
//! on the caller's clock, [`ProcessBackend`] runs each PE as a subprocess
//! executing the synthetic duty-cycle job runner.

mod process;
pub mod service;
mod simulated;
pub mod synthetic;

use std::collections::BTreeMap;

use thiserror::Error;

pub use process::{cpu_ticks, ticks_per_second, ProcessBackend};
pub use simulated::SimulatedBackend;

use crate::clock::Millis;
use crate::events::{Event, EventKind};
use crate::protocol::{PeEndpoint, PeStarted, PeState, PeStat, StartPe, StreamMessage, WorkerReport};

/// Image served by the bundled synthetic job runner.
pub const SYNTHETIC_IMAGE: &str = "synthetic-load";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("no backend for image {0}")]
    UnknownImage(String),
    #[error("bad job payload: {0}")]
    BadPayload(String),
    #[error("unknown pe {0}")]
    UnknownPe(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendEvent {
    Ready { pe_id: String },
    Completed { pe_id: String, message_id: String },
}

/// Executes PEs for a worker.
pub trait PeBackend: Send {
    fn supports(&self, image: &str) -> bool;

    /// Creates the PE. Returns `true` if it can take work right away,
    /// otherwise a later [`BackendEvent::Ready`] follows.
    fn spawn(&mut self, pe_id: &str, image: &str, tag: &str, now: Millis) -> Result<bool, BackendError>;

    fn submit(&mut self, pe_id: &str, message: &StreamMessage, now: Millis) -> Result<(), BackendError>;

    /// Events since the last poll, each with the time it happened.
    fn poll(&mut self, now: Millis) -> Vec<(Millis, BackendEvent)>;

    /// CPU fraction used by the PE since its previous sample.
    fn cpu_sample(&mut self, pe_id: &str, now: Millis) -> f64;

    fn stop(&mut self, pe_id: &str);
}

impl<B: PeBackend + ?Sized> PeBackend for Box<B> {
    fn supports(&self, image: &str) -> bool {
        (**self).supports(image)
    }
    fn spawn(&mut self, pe_id: &str, image: &str, tag: &str, now: Millis) -> Result<bool, BackendError> {
        (**self).spawn(pe_id, image, tag, now)
    }
    fn submit(&mut self, pe_id: &str, message: &StreamMessage, now: Millis) -> Result<(), BackendError> {
        (**self).submit(pe_id, message, now)
    }
    fn poll(&mut self, now: Millis) -> Vec<(Millis, BackendEvent)> {
        (**self).poll(now)
    }
    fn cpu_sample(&mut self, pe_id: &str, now: Millis) -> f64 {
        (**self).cpu_sample(pe_id, now)
    }
    fn stop(&mut self, pe_id: &str) {
        (**self).stop(pe_id)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkerError {
    #[error("worker is still provisioning")]
    Provisioning,
    #[error("worker is at its PE limit ({0})")]
    Exhausted(usize),
    #[error("no idle PE for {image}:{tag}")]
    NoIdlePe { image: String, tag: String },
    #[error("pe {0} is busy")]
    Busy(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl WorkerError {
    /// HTTP status for the worker endpoints.
    pub fn status(&self) -> u16 {
        match self {
            WorkerError::Busy(_) => 409,
            WorkerError::Backend(BackendError::BadPayload(_)) => 400,
            WorkerError::Backend(BackendError::UnknownPe(_)) => 404,
            _ => 503,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub host: String,
    pub port: u16,
    /// Boot time of a PE before it accepts work.
    pub pe_startup_delay: Millis,
    /// Starts are refused before this instant (the worker is still booting).
    pub accept_starts_after: Millis,
    pub report_interval: Millis,
    pub max_pes: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 0,
            pe_startup_delay: 2_000,
            accept_starts_after: 0,
            report_interval: 1_000,
            max_pes: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineState {
    Starting,
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessingEngine {
    pub pe_id: String,
    pub image: String,
    pub tag: String,
    pub state: EngineState,
    pub estimated_cpu: f64,
    pub ready_at: Millis,
    pub backend_ready: bool,
    pub last_activity: Millis,
    pub current: Option<String>,
}

impl ProcessingEngine {
    fn wire_state(&self) -> PeState {
        match self.state {
            EngineState::Starting => PeState::Starting,
            EngineState::Idle => PeState::Idle,
            EngineState::Busy => PeState::Running,
        }
    }
}

pub struct Worker<B> {
    worker_id: String,
    config: WorkerConfig,
    backend: B,
    pes: BTreeMap<String, ProcessingEngine>,
    events: Vec<Event>,
}

impl<B: PeBackend> Worker<B> {
    pub fn new(config: WorkerConfig, backend: B) -> Self {
        Self {
            worker_id: String::new(),
            config,
            backend,
            pes: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn worker_id(&self) -> &str {
        &self.worker_id
    }

    pub fn set_worker_id(&mut self, id: impl Into<String>) {
        self.worker_id = id.into();
    }

    pub fn config(&self) -> &WorkerConfig {
        &self.config
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn pes(&self) -> &BTreeMap<String, ProcessingEngine> {
        &self.pes
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn endpoint(&self, pe: &ProcessingEngine) -> PeEndpoint {
        PeEndpoint {
            worker_id: self.worker_id.clone(),
            host: self.config.host.clone(),
            port: self.config.port,
            pe_id: pe.pe_id.clone(),
            image: pe.image.clone(),
            tag: pe.tag.clone(),
        }
    }

    pub fn start_pe(&mut self, req: &StartPe, now: Millis) -> Result<PeStarted, WorkerError> {
        if let Some(pe) = self.pes.get(&req.pe_id) {
            return Ok(PeStarted {
                endpoint: self.endpoint(pe),
                state: pe.wire_state(),
            });
        }
        if now < self.config.accept_starts_after {
            return Err(WorkerError::Provisioning);
        }
        if !self.backend.supports(&req.image) {
            return Err(BackendError::UnknownImage(req.image.clone()).into());
        }
        if self.pes.len() >= self.config.max_pes {
            return Err(WorkerError::Exhausted(self.config.max_pes));
        }
        let ready = self.backend.spawn(&req.pe_id, &req.image, &req.tag, now)?;
        self.pes.insert(
            req.pe_id.clone(),
            ProcessingEngine {
                pe_id: req.pe_id.clone(),
                image: req.image.clone(),
                tag: req.tag.clone(),
                state: EngineState::Starting,
                estimated_cpu: req.estimated_cpu,
                ready_at: now + self.config.pe_startup_delay,
                backend_ready: ready,
                last_activity: now,
                current: None,
            },
        );
        self.promote(now);
        let pe = &self.pes[&req.pe_id];
        Ok(PeStarted {
            endpoint: self.endpoint(pe),
            state: pe.wire_state(),
        })
    }

    /// Hands `message` to an idle PE, preferring `pe_hint`.
    pub fn receive_stream(
        &mut self,
        message: &StreamMessage,
        pe_hint: Option<&str>,
        now: Millis,
    ) -> Result<String, WorkerError> {
        let usable =
            |pe: &ProcessingEngine| pe.state == EngineState::Idle && pe.image == message.image && pe.tag == message.tag;
        let pe_id = pe_hint
            .and_then(|id| self.pes.get(id))
            .filter(|pe| usable(pe))
            .or_else(|| self.pes.values().find(|pe| usable(pe)))
            .map(|pe| pe.pe_id.clone())
            .ok_or_else(|| WorkerError::NoIdlePe {
                image: message.image.clone(),
                tag: message.tag.clone(),
            })?;
        self.backend.submit(&pe_id, message, now)?;
        let pe = self.pes.get_mut(&pe_id).expect("chosen above");
        pe.state = EngineState::Busy;
        pe.last_activity = now;
        pe.current = Some(message.message_id.clone());
        self.events.push(
            Event::new(now, EventKind::MessageAccepted)
                .with("msg", &message.message_id)
                .with("worker", &self.worker_id)
                .with("pe", &pe_id),
        );
        Ok(pe_id)
    }

    /// Stops an idle or starting PE. Busy PEs are left alone so no message
    /// is lost.
    pub fn stop_pe(&mut self, pe_id: &str) -> Result<(), WorkerError> {
        match self.pes.get(pe_id) {
            None => Ok(()),
            Some(pe) if pe.state == EngineState::Busy => Err(WorkerError::Busy(pe_id.into())),
            Some(_) => {
                self.backend.stop(pe_id);
                self.pes.remove(pe_id);
                Ok(())
            }
        }
    }

    /// Applies backend events and finishes PE startups that are due.
    pub fn advance(&mut self, now: Millis) {
        for (at, event) in self.backend.poll(now) {
            match event {
                BackendEvent::Ready { pe_id } => {
                    if let Some(pe) = self.pes.get_mut(&pe_id) {
                        pe.backend_ready = true;
                    }
                }
                BackendEvent::Completed { pe_id, message_id } => {
                    if let Some(pe) = self.pes.get_mut(&pe_id) {
                        if pe.current.as_deref() == Some(message_id.as_str()) {
                            pe.state = EngineState::Idle;
                            pe.current = None;
                            pe.last_activity = at;
                        }
                    }
                    self.events.push(
                        Event::new(at, EventKind::MessageCompleted)
                            .with("msg", message_id)
                            .with("worker", &self.worker_id)
                            .with("pe", pe_id),
                    );
                }
            }
        }
        self.promote(now);
    }

    fn promote(&mut self, now: Millis) {
        for pe in self.pes.values_mut() {
            if pe.state == EngineState::Starting && pe.backend_ready && now >= pe.ready_at {
                pe.state = EngineState::Idle;
                pe.last_activity = now;
            }
        }
    }

    /// Samples every PE and builds the periodic report. An empty report is
    /// still a heartbeat.
    pub fn sample_and_report(&mut self, now: Millis) -> WorkerReport {
        let mut stats = Vec::with_capacity(self.pes.len());
        for pe in self.pes.values() {
            let sampled = self.backend.cpu_sample(&pe.pe_id, now);
            let cpu = match pe.state {
                EngineState::Starting => 0.0,
                _ => sampled.clamp(0.0, 1.0),
            };
            stats.push(PeStat {
                pe_id: pe.pe_id.clone(),
                image: pe.image.clone(),
                tag: pe.tag.clone(),
                cpu_fraction: cpu,
                state: pe.wire_state(),
                last_activity: Some(pe.last_activity),
            });
        }
        WorkerReport::new(self.worker_id.clone(), now, stats)
    }
}

#[cfg(test)]
mod tests;
