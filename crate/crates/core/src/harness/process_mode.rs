//! Runs a scenario against real processes on localhost: one `master`
//! subprocess, `worker` subprocesses with synthetic PEs, and an in-process
//! connector. Every child writes event lines on stdout; they are merged
//! into one log.

use std::io::{BufRead, BufReader};
use std::net::TcpListener as StdListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::metrics::{mean_abs_error, rows};
use super::scenario::{Scenario, WorkloadRef};
use super::sim::{RunOutput, RunSummary};
use crate::clock::{Clock, SystemClock};
use crate::connector::{Connector, ConnectorError, Delivery};
use crate::events::{Event, EventKind, EventLine};
use crate::protocol::{decode, MetricsFrame, StreamMessage, SyntheticJob, PATH_STATUS};

const STARTUP_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("cannot start {what}: {source}")]
    Spawn {
        what: String,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("master did not answer within {0:?}")]
    MasterTimeout(Duration),
}

#[derive(Debug, Clone)]
pub struct ProcessOptions {
    /// The `streambin` executable used for the master and worker children.
    pub binary: PathBuf,
    /// Pass children's stderr through instead of discarding it.
    pub show_logs: bool,
}

impl ProcessOptions {
    pub fn new(binary: impl Into<PathBuf>) -> Self {
        Self {
            binary: binary.into(),
            show_logs: false,
        }
    }

    /// Uses the running executable, which must be the `streambin` binary.
    pub fn current_exe() -> std::io::Result<Self> {
        Ok(Self::new(std::env::current_exe()?))
    }
}

impl Default for ProcessOptions {
    fn default() -> Self {
        Self::current_exe().unwrap_or_else(|_| Self::new("streambin"))
    }
}

type Log = Arc<Mutex<Vec<EventLine>>>;

/// Kills every child on drop.
struct Cluster {
    opts: ProcessOptions,
    master_addr: String,
    master: Option<Child>,
    workers: Vec<Child>,
    log: Log,
    scratch: PathBuf,
}

impl Cluster {
    fn spawn(&mut self, what: &str, args: &[String]) -> Result<Child, ProcessError> {
        let mut child = Command::new(&self.opts.binary)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(if self.opts.show_logs { Stdio::inherit() } else { Stdio::null() })
            .spawn()
            .map_err(|source| ProcessError::Spawn {
                what: what.to_string(),
                source,
            })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let log = Arc::clone(&self.log);
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if let Some(e) = EventLine::parse(&line) {
                    log.lock().expect("log lock").push(e);
                }
            }
        });
        Ok(child)
    }

    fn start_worker(&mut self, scenario: &Scenario, boot_delay_s: f64) -> Result<(), ProcessError> {
        let args: Vec<String> = vec![
            "worker".into(),
            "--master".into(),
            self.master_addr.clone(),
            "--listen".into(),
            "127.0.0.1:0".into(),
            "--backend".into(),
            "synthetic".into(),
            "--pe-startup-delay".into(),
            scenario.cluster.pe_startup_delay_s.to_string(),
            "--boot-delay".into(),
            boot_delay_s.to_string(),
            "--report-interval".into(),
            scenario.irm.report_interval.as_secs_f64().to_string(),
        ];
        let child = self.spawn("worker", &args)?;
        self.workers.push(child);
        Ok(())
    }

    /// Workers whose process is still running.
    fn live_workers(&mut self) -> usize {
        self.workers
            .retain_mut(|c| matches!(c.try_wait(), Ok(None)));
        self.workers.len()
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        for c in self.workers.iter_mut().chain(self.master.as_mut()) {
            let _ = c.kill();
            let _ = c.wait();
        }
        let _ = std::fs::remove_dir_all(&self.scratch);
    }
}

fn free_port() -> std::io::Result<u16> {
    Ok(StdListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

fn scratch_dir() -> std::io::Result<PathBuf> {
    let nanos = SystemClock.now_ms();
    let dir = std::env::temp_dir().join(format!("streambin-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Messages of each batch, in schedule order.
fn plan(scenario: &Scenario) -> Vec<(Duration, Vec<StreamMessage>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut next = 0usize;
    let mut out = Vec::new();
    for entry in &scenario.schedule {
        let mut batch = Vec::with_capacity(entry.batch_size);
        for _ in 0..entry.batch_size {
            let index = match entry.workload {
                WorkloadRef::Index(i) => i,
                WorkloadRef::Mixed(_) => rng.gen_range(0..scenario.workloads.len()),
            };
            let w = &scenario.workloads[index];
            let payload = SyntheticJob {
                target_cpu: w.target_cpu,
                duration_s: w.duration_s,
            }
            .to_payload();
            batch.push(StreamMessage::new(format!("m{next:05}"), &w.image, &w.tag, payload, 0));
            next += 1;
        }
        if matches!(entry.workload, WorkloadRef::Mixed(_)) {
            batch.shuffle(&mut rng);
        }
        out.push((Duration::from_secs_f64(entry.at_s), batch));
    }
    out
}

async fn fetch_status(http: &reqwest::Client, url: &str) -> Option<MetricsFrame> {
    let response = http.get(url).send().await.ok()?;
    if !response.status().is_success() {
        return None;
    }
    decode(&response.bytes().await.ok()?).ok()
}

/// Runs the scenario in process mode. Blocks; must not be called from
/// inside an async runtime.
pub fn run_process(scenario: &Scenario, opts: &ProcessOptions) -> Result<RunOutput, ProcessError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(drive(scenario, opts))
}

async fn drive(scenario: &Scenario, opts: &ProcessOptions) -> Result<RunOutput, ProcessError> {
    let scratch = scratch_dir()?;
    let config_path = scratch.join("irm.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&scenario.irm).expect("config serializes"))?;
    let port = free_port()?;
    let master_addr = format!("127.0.0.1:{port}");
    let mut cluster = Cluster {
        opts: opts.clone(),
        master_addr: master_addr.clone(),
        master: None,
        workers: Vec::new(),
        log: Arc::new(Mutex::new(Vec::new())),
        scratch,
    };
    let master = cluster.spawn(
        "master",
        &[
            "master".into(),
            "--config".into(),
            path_arg(&config_path),
            "--listen".into(),
            master_addr.clone(),
        ],
    )?;
    cluster.master = Some(master);

    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(5))
        .build()
        .expect("HTTP client");
    let status_url = format!("http://{master_addr}{PATH_STATUS}");
    let waited = Instant::now();
    while fetch_status(&http, &status_url).await.is_none() {
        if waited.elapsed() > STARTUP_TIMEOUT {
            return Err(ProcessError::MasterTimeout(STARTUP_TIMEOUT));
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    for _ in 0..scenario.cluster.initial_workers {
        cluster.start_worker(scenario, 0.0)?;
    }

    let batches = plan(scenario);
    let submitted: Vec<String> = batches
        .iter()
        .flat_map(|(_, b)| b.iter().map(|m| m.message_id.clone()))
        .collect();
    let total = submitted.len();
    let connector = Connector::new(&master_addr);
    let concurrency = scenario.run.concurrency;
    let start = Instant::now();
    let started_at = SystemClock.now_ms();
    let deliveries: Arc<Mutex<Vec<Delivery>>> = Arc::new(Mutex::new(Vec::new()));

    let mut senders = Vec::new();
    for (at, batch) in batches {
        let connector = connector.clone();
        let log = Arc::clone(&cluster.log);
        let deliveries = Arc::clone(&deliveries);
        senders.push(tokio::spawn(async move {
            tokio::time::sleep_until((start + at).into()).await;
            let now = SystemClock.now_ms();
            let batch: Vec<StreamMessage> = batch
                .into_iter()
                .map(|mut m| {
                    m.created_at = now;
                    m
                })
                .collect();
            {
                let mut log = log.lock().expect("log lock");
                for m in &batch {
                    let e = Event::new(now, EventKind::MessageSubmitted)
                        .with("msg", &m.message_id)
                        .with("image", &m.image);
                    log.push(EventLine::from(&e));
                }
            }
            for (m, result) in batch.iter().zip(connector.send_batch(&batch, concurrency).await) {
                match result {
                    Ok(d) => deliveries.lock().expect("deliveries lock").push(d),
                    Err(e) => tracing::warn!(msg = %m.message_id, "send failed: {e}"),
                }
            }
        }));
    }

    let quiescence = Duration::from_secs_f64(scenario.run.quiescence_s);
    let max_duration = Duration::from_secs_f64(scenario.run.max_duration_s);
    let mut frames = Vec::new();
    let mut quiet_since: Option<Instant> = None;
    let sample_every = Duration::from_millis(scenario.run.frame_interval_ms.max(1));
    let mut next_sample = start;
    let timed_out = loop {
        tokio::time::sleep_until(next_sample.into()).await;
        let elapsed = start.elapsed();
        next_sample += sample_every;
        let Some(mut frame) = fetch_status(&http, &status_url).await else {
            if elapsed >= max_duration {
                break true;
            }
            continue;
        };
        frame.t = (elapsed.as_secs_f64() * 10.0).round() / 10.0;

        let live = cluster.live_workers();
        let wanted = frame.target_workers.min(scenario.cluster.max_workers);
        for _ in live..wanted {
            cluster.start_worker(scenario, scenario.cluster.worker_startup_delay_s)?;
        }

        let completed = cluster
            .log
            .lock()
            .expect("log lock")
            .iter()
            .filter(|e| e.kind == EventKind::MessageCompleted)
            .count();
        let sent = senders.iter().all(|s| s.is_finished());
        let idle = frame.queue_length == 0 && frame.per_worker.iter().all(|w| w.scheduled_cpu == 0.0);
        frames.push(frame);
        if sent && completed >= total && idle {
            let since = *quiet_since.get_or_insert_with(Instant::now);
            if since.elapsed() >= quiescence {
                break false;
            }
        } else {
            quiet_since = None;
        }
        if elapsed >= max_duration {
            break true;
        }
    };
    let duration = start.elapsed();
    for s in &senders {
        s.abort();
    }
    drop(http);

    // Let the readers catch the last lines before the children go.
    tokio::time::sleep(Duration::from_millis(200)).await;
    let log = Arc::clone(&cluster.log);
    drop(cluster);
    let mut events = std::mem::take(&mut *log.lock().expect("log lock"));
    events.sort_by_key(|e| e.at);

    let deliveries = deliveries.lock().expect("deliveries lock");
    let p2p = deliveries.iter().filter(|d| matches!(d, Delivery::P2p { .. })).count();
    let completed = events
        .iter()
        .filter(|e| e.kind == EventKind::MessageCompleted)
        .count();
    let first_submit = events
        .iter()
        .find(|e| e.kind == EventKind::MessageSubmitted)
        .map(|e| e.at);
    let last_done = events
        .iter()
        .filter(|e| e.kind == EventKind::MessageCompleted)
        .map(|e| e.at)
        .max();
    let makespan_s = match (first_submit, last_done) {
        (Some(a), Some(b)) if b >= a => (b - a) as f64 / 1000.0,
        _ => 0.0,
    };
    let summary = RunSummary {
        run: 1,
        submitted: total,
        completed,
        p2p,
        queued: deliveries.len() - p2p,
        makespan_s,
        mean_abs_error_pp: mean_abs_error(&rows(&frames)),
        duration_s: duration.as_secs_f64(),
        timed_out,
    };
    Ok(RunOutput {
        started_at,
        frames,
        events,
        submitted,
        summary,
    })
}

fn path_arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Streams a scenario's schedule to a running master, each batch at its
/// offset from now. Results are in submission order.
pub async fn stream_scenario(
    scenario: &Scenario,
    connector: &Connector,
) -> Vec<(String, Result<Delivery, ConnectorError>)> {
    let start = Instant::now();
    let concurrency = scenario.run.concurrency;
    let batches = plan(scenario).into_iter().map(|(at, batch)| async move {
        tokio::time::sleep_until((start + at).into()).await;
        let now = SystemClock.now_ms();
        let batch: Vec<StreamMessage> = batch
            .into_iter()
            .map(|mut m| {
                m.created_at = now;
                m
            })
            .collect();
        let results = connector.send_batch(&batch, concurrency).await;
        batch
            .into_iter()
            .map(|m| m.message_id)
            .zip(results)
            .collect::<Vec<_>>()
    });
    futures::future::join_all(batches).await.into_iter().flatten().collect()
}
