use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::events::{Event, EventKind};

use super::profiler::Profiler;

/// A request to host one PE, travelling container queue -> allocation -> worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerRequest {
    pub request_id: String,
    pub image: String,
    pub tag: String,
    pub ttl: u32,
    pub estimated_cpu: f64,
    pub target_worker: Option<String>,
    pub enqueued_at: Millis,
}

impl ContainerRequest {
    pub fn new(
        request_id: impl Into<String>,
        image: impl Into<String>,
        tag: impl Into<String>,
        ttl: u32,
        estimated_cpu: f64,
        enqueued_at: Millis,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            image: image.into(),
            tag: tag.into(),
            ttl,
            estimated_cpu,
            target_worker: None,
            enqueued_at,
        }
    }
}

/// FIFO of hosting requests waiting for a packing run.
#[derive(Debug, Default, Clone)]
pub struct ContainerQueue {
    entries: VecDeque<ContainerRequest>,
}

impl ContainerQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a request. A request whose TTL is spent is dropped instead and
    /// the drop event is returned as the error.
    pub fn push(&mut self, mut request: ContainerRequest, now: Millis) -> Result<(), Event> {
        if request.ttl == 0 {
            return Err(Event::new(now, EventKind::RequestDropped)
                .with("request", &request.request_id)
                .with("image", &request.image)
                .with("reason", "ttl_exhausted"));
        }
        request.target_worker = None;
        self.entries.push_back(request);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<ContainerRequest> {
        self.entries.pop_front()
    }

    /// Overwrites every queued estimate with its image's current profile.
    pub fn refresh(&mut self, profiles: &Profiler) {
        for request in &mut self.entries {
            request.estimated_cpu = profiles.item_size(&request.image);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContainerRequest> {
        self.entries.iter()
    }

    /// Removes and returns the requests whose ids are in `ids`, keeping the
    /// rest in order.
    pub fn take_ids(&mut self, ids: &[String]) -> Vec<ContainerRequest> {
        let mut taken = Vec::with_capacity(ids.len());
        let mut kept = VecDeque::with_capacity(self.entries.len());
        for request in self.entries.drain(..) {
            if ids.contains(&request.request_id) {
                taken.push(request);
            } else {
                kept.push_back(request);
            }
        }
        self.entries = kept;
        taken
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str, ttl: u32) -> ContainerRequest {
        ContainerRequest::new(id, "img", "t", ttl, 0.5, 0)
    }

    #[test]
    fn fifo_order() {
        let mut q = ContainerQueue::new();
        q.push(req("a", 3), 0).unwrap();
        q.push(req("b", 3), 0).unwrap();
        assert_eq!(q.pop().unwrap().request_id, "a");
        assert_eq!(q.pop().unwrap().request_id, "b");
        assert!(q.pop().is_none());
    }

    #[test]
    fn refresh_overwrites_estimates() {
        let mut q = ContainerQueue::new();
        q.push(req("a", 3), 0).unwrap();
        let mut profiler = Profiler::new(3, 0.5);
        profiler.add_sample("img", 0.3);
        q.refresh(&profiler);
        assert!((q.iter().next().unwrap().estimated_cpu - 0.3).abs() < 1e-12);
    }

    #[test]
    fn spent_ttl_is_dropped_with_event() {
        let mut q = ContainerQueue::new();
        let event = q.push(req("a", 0), 7).unwrap_err();
        assert_eq!(event.kind, EventKind::RequestDropped);
        assert_eq!(event.field("request"), Some("a"));
        assert!(q.is_empty());
    }

    #[test]
    fn take_ids_preserves_remaining_order() {
        let mut q = ContainerQueue::new();
        for id in ["a", "b", "c", "d"] {
            q.push(req(id, 1), 0).unwrap();
        }
        let taken = q.take_ids(&["c".into(), "a".into()]);
        assert_eq!(taken.len(), 2);
        let rest: Vec<_> = q.iter().map(|r| r.request_id.as_str()).collect();
        assert_eq!(rest, ["b", "d"]);
    }
}
