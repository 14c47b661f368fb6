use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irm::IrmConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("scenario is not valid JSON: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub image: String,
    #[serde(default = "default_tag")]
    pub tag: String,
    pub target_cpu: f64,
    pub duration_s: f64,
}

fn default_tag() -> String {
    "latest".into()
}

/// Which workload a batch draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadRef {
    Index(usize),
    /// Each message picks a workload uniformly at random.
    Mixed(MixedTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedTag {
    Mixed,
}

impl WorkloadRef {
    pub const MIXED: WorkloadRef = WorkloadRef::Mixed(MixedTag::Mixed);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub at_s: f64,
    pub batch_size: usize,
    pub workload: WorkloadRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    /// Hard cap on worker machines; provisioning beyond it is refused.
    pub max_workers: usize,
    pub worker_startup_delay_s: f64,
    pub pe_startup_delay_s: f64,
    /// Workers up at time zero.
    pub initial_workers: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            max_workers: 5,
            worker_startup_delay_s: 0.0,
            pe_startup_delay_s: 2.0,
            initial_workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulated,
    Process,
}

/// Run-loop knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub tick_ms: u64,
    /// Spacing of metrics frames; a multiple of `tick_ms`.
    pub frame_interval_ms: u64,
    /// Idle time required after the work is done before the run ends.
    pub quiescence_s: f64,
    pub max_duration_s: f64,
    /// In-flight limit for the connector in process mode.
    pub concurrency: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            tick_ms: 100,
            frame_interval_ms: 1000,
            quiescence_s: 3.0,
            max_duration_s: 3_600.0,
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub workloads: Vec<Workload>,
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub irm: IrmConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub run: RunSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Lists every violated field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        if self.workloads.is_empty() {
            errors.push("workloads: at least one workload is required".to_string());
        }
        for (i, w) in self.workloads.iter().enumerate() {
            if w.image.is_empty() {
                errors.push(format!("workloads[{i}].image: must be nonempty"));
            }
            if !(w.target_cpu > 0.0 && w.target_cpu <= 1.0) {
                errors.push(format!("workloads[{i}].target_cpu: {} not in (0, 1]", w.target_cpu));
            }
            if !(w.duration_s >= 0.0 && w.duration_s.is_finite()) {
                errors.push(format!("workloads[{i}].duration_s: {} must be >= 0", w.duration_s));
            }
            if self.mode == Mode::Process && w.image != crate::worker::SYNTHETIC_IMAGE {
                errors.push(format!(
                    "workloads[{i}].image: process mode only runs `{}`",
                    crate::worker::SYNTHETIC_IMAGE
                ));
            }
        }
        if self.schedule.is_empty() {
            errors.push("schedule: at least one batch is required".to_string());
        }
        let mut previous = 0.0;
        for (i, entry) in self.schedule.iter().enumerate() {
            if !(entry.at_s >= 0.0 && entry.at_s.is_finite()) {
                errors.push(format!("schedule[{i}].at_s: {} must be >= 0", entry.at_s));
            } else if entry.at_s < previous {
                errors.push(format!(
                    "schedule[{i}].at_s: {} is earlier than the previous batch at {previous}",
                    entry.at_s
                ));
            } else {
                previous = entry.at_s;
            }
            if entry.batch_size == 0 {
                errors.push(format!("schedule[{i}].batch_size: must be >= 1"));
            }
            if let WorkloadRef::Index(w) = entry.workload {
                if w >= self.workloads.len() {
                    errors.push(format!("schedule[{i}].workload: no workload {w}"));
                }
            }
        }
        if self.cluster.max_workers == 0 {
            errors.push("cluster.max_workers: must be >= 1".into());
        }
        if self.cluster.initial_workers > self.cluster.max_workers {
            errors.push(format!(
                "cluster.initial_workers: {} exceeds max_workers {}",
                self.cluster.initial_workers, self.cluster.max_workers
            ));
        }
        for (field, v) in [
            ("cluster.worker_startup_delay_s", self.cluster.worker_startup_delay_s),
            ("cluster.pe_startup_delay_s", self.cluster.pe_startup_delay_s),
            ("run.quiescence_s", self.run.quiescence_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{field}: {v} must be >= 0"));
            }
        }
        if !(self.run.max_duration_s > 0.0) {
            errors.push(format!("run.max_duration_s: {} must be > 0", self.run.max_duration_s));
        }
        // Frames fall on whole seconds, so ticks must land on them.
        if self.run.tick_ms == 0 || 1000 % self.run.tick_ms != 0 {
            errors.push(format!("run.tick_ms: {} must divide 1000", self.run.tick_ms));
        }
        if self.run.frame_interval_ms == 0
            || self.run.tick_ms == 0
            || self.run.frame_interval_ms % self.run.tick_ms != 0
        {
            errors.push(format!(
                "run.frame_interval_ms: {} must be a positive multiple of tick_ms",
                self.run.frame_interval_ms
            ));
        }
        if self.run.concurrency == 0 {
            errors.push("run.concurrency: must be >= 1".into());
        }
        if let Err(e) = self.irm.validate() {
            errors.extend(e.0.into_iter().map(|m| format!("irm.{m}")));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    /// Distinct images, in first-use order.
    pub fn images(&self) -> Vec<String> {
        let mut images: Vec<String> = Vec::new();
        for w in &self.workloads {
            if !images.contains(&w.image) {
                images.push(w.image.clone());
            }
        }
        images
    }

    pub fn message_count(&self) -> usize {
        self.schedule.iter().map(|e| e.batch_size).sum()
    }
}
