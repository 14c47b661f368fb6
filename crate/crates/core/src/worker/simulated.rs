use std::collections::{BTreeMap, BTreeSet};

use super::{BackendError, BackendEvent, PeBackend, SYNTHETIC_IMAGE};
use crate::clock::Millis;
use crate::protocol::{StreamMessage, SyntheticJob};

#[derive(Debug, Clone, PartialEq)]
struct Job {
    message_id: String,
    target_cpu: f64,
    started: Millis,
    ends: Millis,
}

/// Virtual PEs: a job uses exactly its `target_cpu` from submission until
/// `duration_s` later on the caller's clock.
#[derive(Debug, Clone, Default)]
pub struct SimulatedBackend {
    images: BTreeSet<String>,
    pes: BTreeMap<String, Option<Job>>,
}

impl SimulatedBackend {
    pub fn new<I, S>(images: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            images: images.into_iter().map(Into::into).collect(),
            pes: BTreeMap::new(),
        }
    }

    /// Serves only the synthetic image.
    pub fn synthetic() -> Self {
        Self::new([SYNTHETIC_IMAGE])
    }

    /// Instantaneous CPU use of a PE; this is the ground truth.
    pub fn cpu_at(&self, pe_id: &str, now: Millis) -> f64 {
        match self.pes.get(pe_id) {
            Some(Some(job)) if job.started <= now && now < job.ends => job.target_cpu,
            _ => 0.0,
        }
    }

    /// Total instantaneous CPU of all PEs, capped at one worker.
    pub fn load_at(&self, now: Millis) -> f64 {
        self.pes
            .keys()
            .map(|id| self.cpu_at(id, now))
            .sum::<f64>()
            .min(1.0)
    }
}

impl PeBackend for SimulatedBackend {
    fn supports(&self, image: &str) -> bool {
        self.images.contains(image)
    }

    fn spawn(&mut self, pe_id: &str, image: &str, _tag: &str, _now: Millis) -> Result<bool, BackendError> {
        if !self.supports(image) {
            return Err(BackendError::UnknownImage(image.into()));
        }
        self.pes.insert(pe_id.into(), None);
        Ok(true)
    }

    fn submit(&mut self, pe_id: &str, message: &StreamMessage, now: Millis) -> Result<(), BackendError> {
        let job = SyntheticJob::parse(&message.payload).map_err(|e| BackendError::BadPayload(e.to_string()))?;
        let slot = self
            .pes
            .get_mut(pe_id)
            .ok_or_else(|| BackendError::UnknownPe(pe_id.into()))?;
        *slot = Some(Job {
            message_id: message.message_id.clone(),
            target_cpu: job.target_cpu,
            started: now,
            ends: now + (job.duration_s * 1000.0).round() as Millis,
        });
        Ok(())
    }

    fn poll(&mut self, now: Millis) -> Vec<(Millis, BackendEvent)> {
        let mut done = Vec::new();
        for (pe_id, slot) in &mut self.pes {
            if slot.as_ref().is_some_and(|job| job.ends <= now) {
                let job = slot.take().expect("checked above");
                done.push((
                    job.ends,
                    BackendEvent::Completed {
                        pe_id: pe_id.clone(),
                        message_id: job.message_id,
                    },
                ));
            }
        }
        done.sort_by(|a, b| a.0.cmp(&b.0));
        done
    }

    fn cpu_sample(&mut self, pe_id: &str, now: Millis) -> f64 {
        self.cpu_at(pe_id, now)
    }

    fn stop(&mut self, pe_id: &str) {
        self.pes.remove(pe_id);
    }
}
