//! Structured `key=value` event lines, one event per line.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::clock::Millis;

/// Where a node sends its events.
pub type EventSink = Arc<dyn Fn(&Event) + Send + Sync>;

/// Writes each event as one line on stdout.
pub fn stdout_sink() -> EventSink {
    Arc::new(|event: &Event| {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{event}");
        let _ = out.flush();
    })
}

/// Discards events.
pub fn null_sink() -> EventSink {
    Arc::new(|_: &Event| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    WorkerRegistered,
    WorkerActive,
    WorkerLost,
    WorkerRemoved,
    PeAllocated,
    PeStarted,
    PeStopped,
    RequestRequeued,
    RequestDropped,
    ScaleUp,
    ScaleDown,
    PredictorDecision,
    PackingRun,
    MessageSubmitted,
    MessageQueued,
    MessageDispatched,
    MessageRequeued,
    MessageAccepted,
    MessageCompleted,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::WorkerRegistered => "worker_registered",
            EventKind::WorkerActive => "worker_active",
            EventKind::WorkerLost => "worker_lost",
            EventKind::WorkerRemoved => "worker_removed",
            EventKind::PeAllocated => "pe_allocated",
            EventKind::PeStarted => "pe_started",
            EventKind::PeStopped => "pe_stopped",
            EventKind::RequestRequeued => "request_requeued",
            EventKind::RequestDropped => "request_dropped",
            EventKind::ScaleUp => "scale_up",
            EventKind::ScaleDown => "scale_down",
            EventKind::PredictorDecision => "predictor_decision",
            EventKind::PackingRun => "packing_run",
            EventKind::MessageSubmitted => "message_submitted",
            EventKind::MessageQueued => "message_queued",
            EventKind::MessageDispatched => "message_dispatched",
            EventKind::MessageRequeued => "message_requeued",
            EventKind::MessageAccepted => "message_accepted",
            EventKind::MessageCompleted => "message_completed",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_KINDS.iter().copied().find(|k| k.as_str() == name)
    }
}

const ALL_KINDS: [EventKind; 19] = [
    EventKind::WorkerRegistered,
    EventKind::WorkerActive,
    EventKind::WorkerLost,
    EventKind::WorkerRemoved,
    EventKind::PeAllocated,
    EventKind::PeStarted,
    EventKind::PeStopped,
    EventKind::RequestRequeued,
    EventKind::RequestDropped,
    EventKind::ScaleUp,
    EventKind::ScaleDown,
    EventKind::PredictorDecision,
    EventKind::PackingRun,
    EventKind::MessageSubmitted,
    EventKind::MessageQueued,
    EventKind::MessageDispatched,
    EventKind::MessageRequeued,
    EventKind::MessageAccepted,
    EventKind::MessageCompleted,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at: Millis,
    pub kind: EventKind,
    pub fields: Vec<(&'static str, String)>,
}

impl Event {
    pub fn new(at: Millis, kind: EventKind) -> Self {
        Self {
            at,
            kind,
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.fields.push((key, value.to_string()));
        self
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ts={} event={}", self.at, self.kind.as_str())?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// A parsed event line. Keys are owned since they come from text.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLine {
    pub at: Millis,
    pub kind: EventKind,
    pub fields: Vec<(String, String)>,
}

impl EventLine {
    pub fn parse(line: &str) -> Option<Self> {
        let mut at = None;
        let mut kind = None;
        let mut fields = Vec::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=')?;
            match k {
                "ts" => at = v.parse().ok(),
                "event" => kind = EventKind::parse(v),
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        Some(Self {
            at: at?,
            kind: kind?,
            fields,
        })
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl From<&Event> for EventLine {
    fn from(e: &Event) -> Self {
        Self {
            at: e.at,
            kind: e.kind,
            fields: e
                .fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for EventLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ts={} event={}", self.at, self.kind.as_str())?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_agree() {
        let e = Event::new(1500, EventKind::PeStarted)
            .with("worker", "w0")
            .with("pe", "pe-1");
        let line = e.to_string();
        assert_eq!(line, "ts=1500 event=pe_started worker=w0 pe=pe-1");
        let parsed = EventLine::parse(&line).unwrap();
        assert_eq!(parsed.at, 1500);
        assert_eq!(parsed.kind, EventKind::PeStarted);
        assert_eq!(parsed.field("pe"), Some("pe-1"));
    }

    #[test]
    fn every_kind_parses_back() {
        for kind in ALL_KINDS {
            assert_eq!(EventKind::parse(kind.as_str()), Some(kind));
        }
        assert!(EventLine::parse("garbage").is_none());
    }
}
