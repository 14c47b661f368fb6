//! Intelligent resource manager: container queue, bin-packing allocator,
//! profiler, load predictor, worker autoscaler and idle reaper.
//!
//! These are the policy pieces; [`crate::master::Master`] owns the state and
//! runs them on their periodic schedules.

pub mod allocator;
pub mod autoscaler;
pub mod config;
pub mod predictor;
pub mod profiler;
pub mod queue;
pub mod reaper;

pub use allocator::{fail_allocation, packing_run, Allocation, AllocationOutcome, PackingRun};
pub use autoscaler::{idle_buffer, scaling_step, target_workers, ScalingStep};
pub use config::{ConfigError, IrmConfig};
pub use predictor::{classify, LoadPredictor, QueueMetrics, QueueSampler, ScalingDecision};
pub use profiler::{ImageProfile, Profiler, MIN_ITEM_SIZE};
pub use queue::{ContainerQueue, ContainerRequest};
pub use reaper::{reap_idle, StoppedPe};
