use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::protocol::PeState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerState {
    Provisioning,
    Active,
    Draining,
    Removed,
}

impl WorkerState {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkerState::Provisioning => "provisioning",
            WorkerState::Active => "active",
            WorkerState::Draining => "draining",
            WorkerState::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimKind {
    /// Handed to a connector; lapses at `until` if the message never shows up.
    Reserved { until: Millis },
    /// The master pushed a backlog message to it.
    Dispatched,
}

/// Marks a PE as spoken for until a worker report proves it picked up work
/// at or after `at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub at: Millis,
    pub kind: ClaimKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeRecord {
    pub pe_id: String,
    pub image: String,
    pub tag: String,
    pub state: PeState,
    pub measured_cpu: f64,
    pub scheduled_cpu: f64,
    pub last_activity: Millis,
    pub claim: Option<Claim>,
    /// When the master learned the worker really hosts this PE; `None` while
    /// the start call is in flight.
    pub known_since: Option<Millis>,
}

impl PeRecord {
    pub fn is_available(&self) -> bool {
        self.state == PeState::Idle && self.claim.is_none()
    }

    pub fn matches(&self, image: &str, tag: &str) -> bool {
        self.image == image && self.tag == tag
    }
}

/// Master-side view of one worker, which is also one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub index: usize,
    pub host: String,
    pub port: u16,
    pub state: WorkerState,
    pub pes: BTreeMap<String, PeRecord>,
    pub last_report: Option<Millis>,
    pub registered_at: Millis,
    /// Start of the current state.
    pub state_since: Millis,
}

impl WorkerRecord {
    pub fn new(index: usize, host: impl Into<String>, port: u16, now: Millis) -> Self {
        Self {
            worker_id: format!("w{index}"),
            index,
            host: host.into(),
            port,
            state: WorkerState::Provisioning,
            pes: BTreeMap::new(),
            last_report: None,
            registered_at: now,
            state_since: now,
        }
    }

    pub fn set_state(&mut self, state: WorkerState, now: Millis) {
        if self.state != state {
            self.state = state;
            self.state_since = now;
        }
    }

    pub fn scheduled_load(&self) -> f64 {
        self.pes.values().map(|p| p.scheduled_cpu).sum()
    }

    pub fn measured_load(&self) -> f64 {
        self.pes
            .values()
            .map(|p| p.measured_cpu)
            .sum::<f64>()
            .min(1.0)
    }

    pub fn residual(&self) -> f64 {
        (1.0 - self.scheduled_load()).max(0.0)
    }

    pub fn insert_pe(
        &mut self,
        pe_id: impl Into<String>,
        image: impl Into<String>,
        tag: impl Into<String>,
        state: PeState,
        scheduled_cpu: f64,
        last_activity: Millis,
    ) -> &mut PeRecord {
        let pe_id = pe_id.into();
        self.pes.insert(
            pe_id.clone(),
            PeRecord {
                pe_id: pe_id.clone(),
                image: image.into(),
                tag: tag.into(),
                state,
                measured_cpu: 0.0,
                scheduled_cpu,
                last_activity,
                claim: None,
                known_since: Some(last_activity),
            },
        );
        self.pes.get_mut(&pe_id).expect("just inserted")
    }
}
