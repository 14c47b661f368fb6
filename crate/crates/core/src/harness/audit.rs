//! Checks over event logs, shared by simulated and process-mode runs.

use std::collections::{BTreeMap, HashMap};

use crate::clock::Millis;
use crate::events::{EventKind, EventLine};

const TOLERANCE: f64 = 1e-9;

pub fn parse_log(text: &str) -> Vec<EventLine> {
    text.lines().filter_map(EventLine::parse).collect()
}

/// Every submitted id completed exactly once and nothing else completed.
pub fn conservation(events: &[EventLine], submitted: &[String]) -> Result<(), Vec<String>> {
    let mut completed: HashMap<&str, usize> = HashMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::MessageCompleted) {
        if let Some(id) = e.field("msg") {
            *completed.entry(id).or_default() += 1;
        }
    }
    let mut problems = Vec::new();
    for id in submitted {
        match completed.remove(id.as_str()) {
            Some(1) => {}
            Some(n) => problems.push(format!("{id} completed {n} times")),
            None => problems.push(format!("{id} never completed")),
        }
    }
    for (id, n) in completed {
        problems.push(format!("{id} completed {n} times but was never submitted"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        problems.sort();
        Err(problems)
    }
}

/// A `pe_allocated` event with the scheduled loads seen just before it.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRecord {
    pub at: Millis,
    pub worker: String,
    pub cpu: f64,
    pub loads: Vec<(String, f64)>,
}

impl AllocationRecord {
    /// Loads of the workers placed before the chosen one.
    pub fn skipped(&self) -> &[(String, f64)] {
        let pos = self
            .loads
            .iter()
            .position(|(w, _)| *w == self.worker)
            .unwrap_or(self.loads.len());
        &self.loads[..pos]
    }

    pub fn chosen_load(&self) -> Option<f64> {
        self.loads
            .iter()
            .find(|(w, _)| *w == self.worker)
            .map(|(_, l)| *l)
    }
}

pub fn allocations(events: &[EventLine]) -> Vec<AllocationRecord> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::PeAllocated)
        .filter_map(|e| {
            let loads = e
                .field("loads")?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|pair| {
                    let (w, l) = pair.split_once(':')?;
                    Some((w.to_string(), l.parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()?;
            Some(AllocationRecord {
                at: e.at,
                worker: e.field("worker")?.to_string(),
                cpu: e.field("cpu")?.parse().ok()?,
                loads,
            })
        })
        .collect()
}

/// Placements that skipped a worker with room, or overfilled the chosen one.
/// Loads are logged to four decimals, so the comparison allows for that.
pub fn first_fit_violations(events: &[EventLine]) -> Vec<String> {
    const LOGGED: f64 = 1e-4;
    let mut out = Vec::new();
    for a in allocations(events) {
        for (w, load) in a.skipped() {
            if 1.0 - load >= a.cpu + LOGGED {
                out.push(format!(
                    "t={} item {} went to {} though {w} had residual {:.4}",
                    a.at,
                    a.cpu,
                    a.worker,
                    1.0 - load
                ));
            }
        }
        if let Some(load) = a.chosen_load() {
            if load + a.cpu > 1.0 + LOGGED + TOLERANCE {
                out.push(format!("t={} {} overfilled to {:.4}", a.at, a.worker, load + a.cpu));
            }
        }
    }
    out
}

/// Lowest load among the workers an allocation skipped, per spilling
/// allocation.
pub fn spill_loads(events: &[EventLine]) -> Vec<(Millis, String, f64)> {
    allocations(events)
        .iter()
        .filter_map(|a| {
            let min = a
                .skipped()
                .iter()
                .map(|(_, l)| *l)
                .fold(f64::INFINITY, f64::min);
            min.is_finite().then(|| (a.at, a.worker.clone(), min))
        })
        .collect()
}

/// For every stopped PE, the time between its last activity (start or last
/// completion) and its stop. PEs that were never stopped are errors.
pub fn idle_stop_delays(events: &[EventLine]) -> Result<BTreeMap<String, Millis>, Vec<String>> {
    let mut last: BTreeMap<String, Millis> = BTreeMap::new();
    let mut stopped: BTreeMap<String, Millis> = BTreeMap::new();
    for e in events {
        let Some(pe) = e.field("pe") else { continue };
        match e.kind {
            EventKind::PeStarted | EventKind::MessageCompleted => {
                let entry = last.entry(pe.to_string()).or_insert(e.at);
                *entry = (*entry).max(e.at);
            }
            EventKind::PeStopped => {
                stopped.insert(pe.to_string(), e.at);
            }
            _ => {}
        }
    }
    let missing: Vec<String> = last
        .keys()
        .filter(|pe| !stopped.contains_key(*pe))
        .map(|pe| format!("{pe} never stopped"))
        .collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    Ok(stopped
        .into_iter()
        .map(|(pe, at)| {
            let since = last.get(&pe).copied().unwrap_or(at);
            (pe, at.saturating_sub(since))
        })
        .collect())
}
