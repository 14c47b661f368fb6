use crate::clock::Millis;
use crate::master::{WorkerRecord, WorkerState};
use crate::protocol::PeState;

#[derive(Debug, Clone, PartialEq)]
pub struct StoppedPe {
    pub worker_id: String,
    pub pe_id: String,
    pub image: String,
    pub released_cpu: f64,
    pub idle_for: Millis,
}

/// Removes every unclaimed PE that has been idle for at least `timeout`,
/// releasing its scheduled CPU from the worker's bin.
pub fn reap_idle(workers: &mut [WorkerRecord], now: Millis, timeout: Millis) -> Vec<StoppedPe> {
    let mut stopped = Vec::new();
    for worker in workers
        .iter_mut()
        .filter(|w| w.state != WorkerState::Removed)
    {
        let expired: Vec<String> = worker
            .pes
            .values()
            .filter(|pe| {
                pe.state == PeState::Idle
                    && pe.claim.is_none()
                    && now.saturating_sub(pe.last_activity) >= timeout
            })
            .map(|pe| pe.pe_id.clone())
            .collect();
        for pe_id in expired {
            if let Some(pe) = worker.pes.remove(&pe_id) {
                stopped.push(StoppedPe {
                    worker_id: worker.worker_id.clone(),
                    pe_id,
                    image: pe.image,
                    released_cpu: pe.scheduled_cpu,
                    idle_for: now.saturating_sub(pe.last_activity),
                });
            }
        }
    }
    stopped
}
