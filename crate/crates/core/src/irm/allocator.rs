//! Bin-packing manager: maps queued hosting requests onto workers.

use crate::binpack::{pack_sequence, Bin, FitCriterion, PackItem};
use crate::master::{WorkerRecord, WorkerState};

use super::profiler::MIN_ITEM_SIZE;
use super::queue::ContainerRequest;

/// A request placed on an existing worker by a packing run.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub request_id: String,
    pub worker_id: String,
    /// Scheduled load of every active worker, in index order, just before
    /// this placement.
    pub loads_before: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PackingRun {
    pub allocations: Vec<Allocation>,
    /// Non-empty bins after the run, counting bins no worker exists for yet.
    pub bins_needed: usize,
    /// Requests that landed in bins beyond the available workers.
    pub unplaced: usize,
}

fn item_size(request: &ContainerRequest) -> f64 {
    if request.estimated_cpu.is_nan() {
        return 1.0;
    }
    request.estimated_cpu.clamp(MIN_ITEM_SIZE, 1.0)
}

/// First-Fit run over the active workers' residual capacity.
///
/// `workers` must be sorted by index. Inactive workers are closed bins.
pub fn packing_run<'a>(
    queued: impl IntoIterator<Item = &'a ContainerRequest>,
    workers: &[WorkerRecord],
) -> PackingRun {
    let bins: Vec<Bin<String>> = workers
        .iter()
        .map(|w| {
            if w.state == WorkerState::Active {
                Bin::with_load(w.index, w.scheduled_load())
            } else {
                Bin::closed(w.index)
            }
        })
        .collect();
    let queued: Vec<&ContainerRequest> = queued.into_iter().collect();
    let items: Vec<PackItem<String>> = queued
        .iter()
        .map(|r| PackItem::new(r.request_id.clone(), item_size(r)))
        .collect();

    let plan = pack_sequence(&items, bins.clone(), FitCriterion::FirstFit)
        .expect("item sizes are clamped into (0, 1] and request ids are unique");

    let mut loads: Vec<f64> = bins.iter().map(|b| b.load()).collect();
    let mut allocations = Vec::new();
    let mut unplaced = 0;
    for (step, placement) in plan.trace.iter().enumerate() {
        match workers.get(placement.position).filter(|_| !placement.opened) {
            Some(worker) => {
                let loads_before = workers
                    .iter()
                    .zip(&loads)
                    .filter(|(w, _)| w.state == WorkerState::Active)
                    .map(|(w, l)| (w.worker_id.clone(), *l))
                    .collect();
                allocations.push(Allocation {
                    request_id: items[step].id.clone(),
                    worker_id: worker.worker_id.clone(),
                    loads_before,
                });
                loads[placement.position] += items[step].size;
            }
            None => unplaced += 1,
        }
    }
    PackingRun {
        allocations,
        bins_needed: plan.bins_used,
        unplaced,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationOutcome {
    Started,
    Requeued,
    Dropped,
}

impl AllocationOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationOutcome::Started => "started",
            AllocationOutcome::Requeued => "requeued",
            AllocationOutcome::Dropped => "dropped",
        }
    }
}

/// Failed start: detach the target worker and spend one TTL unit.
pub fn fail_allocation(request: &mut ContainerRequest) -> AllocationOutcome {
    request.target_worker = None;
    request.ttl = request.ttl.saturating_sub(1);
    if request.ttl == 0 {
        AllocationOutcome::Dropped
    } else {
        AllocationOutcome::Requeued
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::WorkerRecord;
    use crate::protocol::PeState;

    fn worker(index: usize, load: f64) -> WorkerRecord {
        let mut w = WorkerRecord::new(index, "127.0.0.1", 9000 + index as u16, 0);
        w.state = WorkerState::Active;
        if load > 0.0 {
            w.insert_pe("pe-x", "img", "t", PeState::Running, load, 0);
        }
        w
    }

    fn req(id: &str, cpu: f64) -> ContainerRequest {
        ContainerRequest::new(id, "img", "t", 3, cpu, 0)
    }

    #[test]
    fn second_request_overflows_single_worker() {
        let workers = vec![worker(0, 0.0)];
        let queued = [req("a", 0.6), req("b", 0.5)];
        let run = packing_run(&queued, &workers);
        assert_eq!(run.allocations.len(), 1);
        assert_eq!(run.allocations[0].request_id, "a");
        assert_eq!(run.allocations[0].worker_id, "w0");
        assert_eq!(run.bins_needed, 2);
        assert_eq!(run.unplaced, 1);
    }

    #[test]
    fn first_fitting_worker_wins() {
        let workers = vec![worker(0, 0.8), worker(1, 0.0)];
        let run = packing_run(&[req("a", 0.5)], &workers);
        assert_eq!(run.allocations[0].worker_id, "w1");
        assert_eq!(run.allocations[0].loads_before.len(), 2);
    }

    #[test]
    fn empty_queue_counts_loaded_workers() {
        let workers = vec![worker(0, 0.3), worker(1, 0.0), worker(2, 0.1)];
        let run = packing_run(&[], &workers);
        assert!(run.allocations.is_empty());
        assert_eq!(run.bins_needed, 2);
    }

    #[test]
    fn inactive_workers_are_skipped() {
        let mut workers = vec![worker(0, 0.0), worker(1, 0.0)];
        workers[0].state = WorkerState::Draining;
        let run = packing_run(&[req("a", 0.2)], &workers);
        assert_eq!(run.allocations[0].worker_id, "w1");
    }

    #[test]
    fn failures_count_down_ttl() {
        let mut r = req("a", 0.5);
        r.target_worker = Some("w0".into());
        assert_eq!(fail_allocation(&mut r), AllocationOutcome::Requeued);
        assert_eq!(r.ttl, 2);
        assert!(r.target_worker.is_none());
        assert_eq!(fail_allocation(&mut r), AllocationOutcome::Requeued);
        assert_eq!(fail_allocation(&mut r), AllocationOutcome::Dropped);
    }
}
