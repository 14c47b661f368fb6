//! Wire schemas shared by master, workers and stream connectors.
//!
//! Control-plane bodies are UTF-8 JSON objects carrying a `type`
//! discriminator. Stream payloads travel as raw HTTP bodies with their
//! metadata in `X-Stream-*` headers; [`encode`] still supports
//! [`StreamMessage`] (payload as base64) for logs and tests.
//!
//! Endpoint contract:
//!
//! | node   | method | path                   | body            | replies |
//! |--------|--------|------------------------|-----------------|---------|
//! | master | POST   | `/api/worker/register` | [`RegisterWorker`] | 200 [`WorkerRegistered`] |
//! | master | POST   | `/api/worker/report`   | [`WorkerReport`]   | 200, 404 unknown, 410 removed |
//! | master | GET    | `/api/pe?image=&tag=`  |                    | 200 [`PeEndpoint`], 204 none |
//! | master | POST   | `/api/stream`          | binary + headers   | 202 [`Enqueued`] |
//! | master | POST   | `/api/pe/request`      | [`PeHostingRequest`] | 202 |
//! | master | GET    | `/api/status`          |                    | 200 [`MetricsFrame`] |
//! | worker | POST   | `/api/stream`          | binary + headers   | 200, 503 no idle PE |
//! | worker | POST   | `/api/pe/start`        | [`StartPe`]        | 201 [`PeStarted`], 503 |
//! | worker | POST   | `/api/pe/stop`         | [`StopPe`]         | 200 |

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;

pub const PATH_REGISTER: &str = "/api/worker/register";
pub const PATH_REPORT: &str = "/api/worker/report";
pub const PATH_PE: &str = "/api/pe";
pub const PATH_STREAM: &str = "/api/stream";
pub const PATH_PE_REQUEST: &str = "/api/pe/request";
pub const PATH_STATUS: &str = "/api/status";
pub const PATH_PE_START: &str = "/api/pe/start";
pub const PATH_PE_STOP: &str = "/api/pe/stop";

pub const HEADER_IMAGE: &str = "X-Stream-Image";
pub const HEADER_TAG: &str = "X-Stream-Tag";
pub const HEADER_MESSAGE_ID: &str = "X-Message-Id";
pub const HEADER_CREATED_AT: &str = "X-Created-At";
/// Optional: the PE the connector reserved through `GET /api/pe`.
pub const HEADER_PE_ID: &str = "X-Pe-Id";

const TYPE_KEY: &str = "type";
const CPU_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("expected a `{expected}` frame, found `{found}`")]
    TypeMismatch { expected: &'static str, found: String },
    #[error("invalid `{frame}` frame: {reason}")]
    Invalid { frame: &'static str, reason: String },
    #[error("missing header {0}")]
    MissingHeader(&'static str),
}

/// A self-describing wire frame.
pub trait Frame: Serialize + DeserializeOwned {
    const TYPE: &'static str;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

pub fn encode<T: Frame>(frame: &T) -> Vec<u8> {
    let mut value = serde_json::to_value(frame).expect("protocol frames serialize to JSON");
    if let serde_json::Value::Object(map) = &mut value {
        map.insert(TYPE_KEY.into(), serde_json::Value::String(T::TYPE.into()));
    }
    serde_json::to_vec(&value).expect("JSON values serialize")
}

pub fn decode<T: Frame>(bytes: &[u8]) -> Result<T, ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| malformed(bytes, &e))?;
    let found = match value.get(TYPE_KEY) {
        Some(serde_json::Value::String(t)) => t.clone(),
        Some(_) | None => {
            return Err(ProtocolError::Malformed {
                offset: 0,
                reason: "missing `type` discriminator".into(),
            })
        }
    };
    if found != T::TYPE {
        return Err(ProtocolError::TypeMismatch {
            expected: T::TYPE,
            found,
        });
    }
    let frame: T = serde_json::from_value(value).map_err(|e| ProtocolError::Invalid {
        frame: T::TYPE,
        reason: e.to_string(),
    })?;
    frame.validate().map_err(|reason| ProtocolError::Invalid {
        frame: T::TYPE,
        reason,
    })?;
    Ok(frame)
}

fn malformed(bytes: &[u8], err: &serde_json::Error) -> ProtocolError {
    let offset = if err.is_eof() {
        bytes.len()
    } else {
        line_col_offset(bytes, err.line(), err.column())
    };
    ProtocolError::Malformed {
        offset,
        reason: err.to_string(),
    }
}

fn line_col_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = bytes
        .split(|b| *b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// A unit of streamed data and the image that must process it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMessage {
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
    pub image: String,
    pub tag: String,
    pub message_id: String,
    pub created_at: Millis,
}

impl Frame for StreamMessage {
    const TYPE: &'static str = "stream_message";

    fn validate(&self) -> Result<(), String> {
        if self.image.is_empty() {
            return Err("image must be nonempty".into());
        }
        Ok(())
    }
}

impl StreamMessage {
    pub fn new(
        message_id: impl Into<String>,
        image: impl Into<String>,
        tag: impl Into<String>,
        payload: Vec<u8>,
        created_at: Millis,
    ) -> Self {
        Self {
            payload,
            image: image.into(),
            tag: tag.into(),
            message_id: message_id.into(),
            created_at,
        }
    }

    /// Metadata headers for the binary HTTP form.
    pub fn headers(&self) -> [(&'static str, String); 4] {
        [
            (HEADER_IMAGE, self.image.clone()),
            (HEADER_TAG, self.tag.clone()),
            (HEADER_MESSAGE_ID, self.message_id.clone()),
            (HEADER_CREATED_AT, self.created_at.to_string()),
        ]
    }

    /// Rebuilds a message from its binary HTTP form.
    pub fn from_parts<F>(header: F, payload: Vec<u8>) -> Result<Self, ProtocolError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let image = header(HEADER_IMAGE).ok_or(ProtocolError::MissingHeader(HEADER_IMAGE))?;
        let message_id =
            header(HEADER_MESSAGE_ID).ok_or(ProtocolError::MissingHeader(HEADER_MESSAGE_ID))?;
        let created_at = match header(HEADER_CREATED_AT) {
            Some(v) => v.parse().map_err(|_| ProtocolError::Invalid {
                frame: Self::TYPE,
                reason: format!("bad {HEADER_CREATED_AT} value {v:?}"),
            })?,
            None => 0,
        };
        let message = Self {
            payload,
            image,
            tag: header(HEADER_TAG).unwrap_or_default(),
            message_id,
            created_at,
        };
        message.validate().map_err(|reason| ProtocolError::Invalid {
            frame: Self::TYPE,
            reason,
        })?;
        Ok(message)
    }
}

/// Where a connector should stream a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeEndpoint {
    pub worker_id: String,
    pub host: String,
    pub port: u16,
    pub pe_id: String,
    pub image: String,
    pub tag: String,
}

impl Frame for PeEndpoint {
    const TYPE: &'static str = "pe_endpoint";

    fn validate(&self) -> Result<(), String> {
        if self.port == 0 {
            return Err("port must be in [1, 65535]".into());
        }
        Ok(())
    }
}

impl PeEndpoint {
    pub fn base_url(&self) -> String {
        format!("http://{}:{}", self.host, self.port)
    }
}

/// PE lifecycle as reported by workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeState {
    Starting,
    Running,
    Idle,
}

impl PeState {
    pub fn as_str(self) -> &'static str {
        match self {
            PeState::Starting => "starting",
            PeState::Running => "running",
            PeState::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeStat {
    pub pe_id: String,
    pub image: String,
    pub tag: String,
    pub cpu_fraction: f64,
    pub state: PeState,
    /// Start or completion time of the PE's most recent message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_activity: Option<Millis>,
}

/// Periodic per-worker measurement, also the worker's liveness heartbeat.
///
/// `per_image_avg` is the mean `cpu_fraction` of the worker's running PEs of
/// each image; images with no running PE are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: String,
    pub sent_at: Millis,
    pub pe_stats: Vec<PeStat>,
    pub per_image_avg: BTreeMap<String, f64>,
}

impl WorkerReport {
    pub fn new(worker_id: impl Into<String>, sent_at: Millis, pe_stats: Vec<PeStat>) -> Self {
        let per_image_avg = running_averages(&pe_stats);
        Self {
            worker_id: worker_id.into(),
            sent_at,
            pe_stats,
            per_image_avg,
        }
    }
}

fn running_averages(stats: &[PeStat]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for stat in stats.iter().filter(|s| s.state == PeState::Running) {
        let entry = sums.entry(stat.image.clone()).or_default();
        entry.0 += stat.cpu_fraction;
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(image, (sum, n))| (image, sum / n as f64))
        .collect()
}

impl Frame for WorkerReport {
    const TYPE: &'static str = "worker_report";

    fn validate(&self) -> Result<(), String> {
        if let Some(bad) = self
            .pe_stats
            .iter()
            .find(|s| !(0.0..=1.0).contains(&s.cpu_fraction))
        {
            return Err(format!(
                "pe {} cpu_fraction {} outside [0, 1]",
                bad.pe_id, bad.cpu_fraction
            ));
        }
        let expected = running_averages(&self.pe_stats);
        let consistent = expected.len() == self.per_image_avg.len()
            && expected.iter().all(|(image, avg)| {
                self.per_image_avg
                    .get(image)
                    .is_some_and(|got| (got - avg).abs() <= CPU_TOLERANCE)
            });
        if !consistent {
            return Err("per_image_avg disagrees with pe_stats".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWorker {
    pub host: String,
    pub port: u16,
}

impl Frame for RegisterWorker {
    const TYPE: &'static str = "register_worker";

    fn validate(&self) -> Result<(), String> {
        if self.port == 0 {
            return Err("port must be in [1, 65535]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRegistered {
    pub worker_id: String,
}

impl Frame for WorkerRegistered {
    const TYPE: &'static str = "worker_registered";
}

/// Manual request to host `count` PEs of an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeHostingRequest {
    pub image: String,
    pub tag: String,
    pub count: u32,
}

impl Frame for PeHostingRequest {
    const TYPE: &'static str = "pe_request";

    fn validate(&self) -> Result<(), String> {
        if self.image.is_empty() {
            return Err("image must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPe {
    pub image: String,
    pub tag: String,
    pub pe_id: String,
    pub estimated_cpu: f64,
}

impl Frame for StartPe {
    const TYPE: &'static str = "start_pe";

    fn validate(&self) -> Result<(), String> {
        if !(self.estimated_cpu > 0.0 && self.estimated_cpu <= 1.0) {
            return Err(format!("estimated_cpu {} outside (0, 1]", self.estimated_cpu));
        }
        Ok(())
    }
}

/// Reply to a successful [`StartPe`]; `state` is `idle` when the PE booted
/// without delay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeStarted {
    pub endpoint: PeEndpoint,
    pub state: PeState,
}

impl Frame for PeStarted {
    const TYPE: &'static str = "pe_started";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopPe {
    pub pe_id: String,
}

impl Frame for StopPe {
    const TYPE: &'static str = "stop_pe";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enqueued {
    pub queue_length: usize,
}

impl Frame for Enqueued {
    const TYPE: &'static str = "enqueued";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMetrics {
    pub worker_id: String,
    pub scheduled_cpu: f64,
    pub measured_cpu: f64,
    pub error_pp: f64,
}

impl WorkerMetrics {
    pub fn new(worker_id: impl Into<String>, scheduled_cpu: f64, measured_cpu: f64) -> Self {
        Self {
            worker_id: worker_id.into(),
            scheduled_cpu,
            measured_cpu,
            error_pp: (100.0 * (scheduled_cpu - measured_cpu)).clamp(-100.0, 100.0),
        }
    }
}

/// One sampling instant of the whole system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    /// Seconds since the start of the run.
    pub t: f64,
    pub per_worker: Vec<WorkerMetrics>,
    pub queue_length: usize,
    pub active_workers: usize,
    pub target_workers: usize,
    pub ideal_bins: usize,
}

impl Frame for MetricsFrame {
    const TYPE: &'static str = "metrics_frame";
}

/// `ceil` of a total CPU load, ignoring float dust above an integer.
pub fn ideal_bins(total_scheduled: f64) -> usize {
    (total_scheduled - 1e-9).ceil().max(0.0) as usize
}

/// Job parameters for the `synthetic-load` image, carried as the stream body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticJob {
    pub target_cpu: f64,
    pub duration_s: f64,
}

impl SyntheticJob {
    pub fn parse(payload: &[u8]) -> Result<Self, ProtocolError> {
        let job: SyntheticJob = serde_json::from_slice(payload).map_err(|e| malformed(payload, &e))?;
        if !(job.target_cpu > 0.0 && job.target_cpu <= 1.0) {
            return Err(ProtocolError::Invalid {
                frame: "synthetic_job",
                reason: format!("target_cpu {} outside (0, 1]", job.target_cpu),
            });
        }
        if !(job.duration_s >= 0.0 && job.duration_s.is_finite()) {
            return Err(ProtocolError::Invalid {
                frame: "synthetic_job",
                reason: format!("duration_s {} must be finite and nonnegative", job.duration_s),
            });
        }
        Ok(job)
    }

    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("job serializes")
    }
}
