//! HTTP service around [`Worker`]: serves the worker endpoints, registers
//! with the master and sends a report every report interval.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use super::{PeBackend, ProcessBackend, SimulatedBackend, Worker, WorkerConfig, WorkerError};
use crate::clock::{Clock, Millis, SystemClock};
use crate::events::EventSink;
use crate::net::{self, json_body};
use crate::protocol::{
    decode, encode, RegisterWorker, StartPe, StopPe, WorkerRegistered, PATH_PE_START,
    PATH_PE_STOP, PATH_REGISTER, PATH_REPORT, PATH_STREAM,
};

const TICK: Duration = Duration::from_millis(100);
const REGISTER_RETRY: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Subprocess PEs running the synthetic job runner.
    Synthetic,
    /// Virtual PEs on wall-clock time.
    Simulated,
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub listen: String,
    pub master: String,
    /// Host the master should use to reach this worker; defaults to the
    /// listen address, or 127.0.0.1 for a wildcard listen address.
    pub advertise_host: Option<String>,
    pub backend: BackendKind,
    pub pe_startup_delay: Millis,
    /// Starts are refused for this long after launch.
    pub boot_delay: Millis,
    pub report_interval: Millis,
    pub max_pes: usize,
    /// Runner command for synthetic PEs; defaults to `<this executable> pe`.
    pub runner: Option<(PathBuf, Vec<String>)>,
}

impl WorkerOptions {
    pub fn new(listen: impl Into<String>, master: impl Into<String>, backend: BackendKind) -> Self {
        let defaults = WorkerConfig::default();
        Self {
            listen: listen.into(),
            master: master.into(),
            advertise_host: None,
            backend,
            pe_startup_delay: defaults.pe_startup_delay,
            boot_delay: 0,
            report_interval: defaults.report_interval,
            max_pes: defaults.max_pes,
            runner: None,
        }
    }
}

type SharedWorker = Arc<Mutex<Worker<Box<dyn PeBackend>>>>;

#[derive(Clone)]
struct Shared {
    worker: SharedWorker,
    sink: EventSink,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Worker<Box<dyn PeBackend>>> {
        self.worker.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn with<R>(&self, f: impl FnOnce(&mut Worker<Box<dyn PeBackend>>, Millis) -> R) -> R {
        let now = SystemClock.now_ms();
        let (result, events) = {
            let mut worker = self.lock();
            let result = f(&mut worker, now);
            (result, worker.take_events())
        };
        for event in &events {
            (self.sink)(event);
        }
        result
    }
}

pub struct WorkerServer {
    addr: SocketAddr,
    worker: SharedWorker,
    done: watch::Receiver<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl WorkerServer {
    pub async fn bind(options: WorkerOptions, sink: EventSink) -> std::io::Result<Self> {
        let listener = TcpListener::bind(&options.listen).await?;
        let addr = listener.local_addr()?;
        let host = options.advertise_host.clone().unwrap_or_else(|| {
            if addr.ip().is_unspecified() {
                "127.0.0.1".into()
            } else {
                addr.ip().to_string()
            }
        });
        let backend: Box<dyn PeBackend> = match options.backend {
            BackendKind::Simulated => Box::new(SimulatedBackend::synthetic()),
            BackendKind::Synthetic => Box::new(match &options.runner {
                Some((program, args)) => ProcessBackend::new(program, args.clone()),
                None => ProcessBackend::current_exe()?,
            }),
        };
        let now = SystemClock.now_ms();
        let config = WorkerConfig {
            host: host.clone(),
            port: addr.port(),
            pe_startup_delay: options.pe_startup_delay,
            accept_starts_after: now + options.boot_delay,
            report_interval: options.report_interval,
            max_pes: options.max_pes,
        };
        let shared = Shared {
            worker: Arc::new(Mutex::new(Worker::new(config, backend))),
            sink,
        };
        let (done_tx, done) = watch::channel(false);

        let app = Router::new()
            .route(PATH_STREAM, post(stream))
            .route(PATH_PE_START, post(start_pe))
            .route(PATH_PE_STOP, post(stop_pe))
            .with_state(shared.clone());
        let server = tokio::spawn(async move {
            if let Err(err) = axum::serve(listener, app).await {
                tracing::error!(%err, "worker server stopped");
            }
        });
        let control = tokio::spawn(control_loop(
            shared.clone(),
            net::base_url(&options.master),
            RegisterWorker {
                host,
                port: addr.port(),
            },
            options.report_interval,
            done_tx,
        ));
        Ok(Self {
            addr,
            worker: shared.worker,
            done,
            tasks: vec![server, control],
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn worker(&self) -> SharedWorker {
        self.worker.clone()
    }

    /// Resolves once the master has removed this worker.
    pub async fn wait(mut self) {
        let _ = self.done.wait_for(|done| *done).await;
    }
}

impl Drop for WorkerServer {
    fn drop(&mut self) {
        for task in &self.tasks {
            task.abort();
        }
    }
}

async fn register(http: &reqwest::Client, master: &str, body: &RegisterWorker) -> String {
    loop {
        let reply = http
            .post(format!("{master}{PATH_REGISTER}"))
            .body(encode(body))
            .send()
            .await;
        if let Ok(reply) = reply {
            if reply.status().is_success() {
                if let Ok(bytes) = reply.bytes().await {
                    if let Ok(ok) = decode::<WorkerRegistered>(&bytes) {
                        return ok.worker_id;
                    }
                }
            }
        }
        tokio::time::sleep(REGISTER_RETRY).await;
    }
}

async fn control_loop(
    shared: Shared,
    master: String,
    me: RegisterWorker,
    report_interval: Millis,
    done: watch::Sender<bool>,
) {
    let http = net::client();
    let id = register(&http, &master, &me).await;
    tracing::info!(worker_id = %id, "registered");
    shared.lock().set_worker_id(id);
    let mut next_report = 0;
    let mut interval = tokio::time::interval(TICK);
    loop {
        interval.tick().await;
        let report = shared.with(|w, now| {
            w.advance(now);
            (now >= next_report).then(|| {
                next_report = now + report_interval;
                w.sample_and_report(now)
            })
        });
        let Some(report) = report else { continue };
        let reply = http
            .post(format!("{master}{PATH_REPORT}"))
            .body(encode(&report))
            .send()
            .await;
        match reply.map(|r| r.status()) {
            Ok(StatusCode::GONE) => {
                tracing::info!("removed by master; shutting down");
                let _ = done.send(true);
                return;
            }
            Ok(StatusCode::NOT_FOUND) => {
                let id = register(&http, &master, &me).await;
                shared.lock().set_worker_id(id);
            }
            Ok(status) if !status.is_success() => tracing::warn!(%status, "report rejected"),
            Err(err) => tracing::warn!(%err, "report failed"),
            Ok(_) => {}
        }
    }
}

fn error_response(err: WorkerError) -> Response {
    let status = StatusCode::from_u16(err.status()).unwrap_or(StatusCode::SERVICE_UNAVAILABLE);
    (status, err.to_string()).into_response()
}

async fn stream(State(s): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let (message, pe_hint) = match net::message_from_http(&headers, body.to_vec()) {
        Ok(m) => m,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    match s.with(|w, now| {
        w.advance(now);
        w.receive_stream(&message, pe_hint.as_deref(), now)
    }) {
        Ok(_) => StatusCode::OK.into_response(),
        Err(e) => error_response(e),
    }
}

async fn start_pe(State(s): State<Shared>, body: Bytes) -> Response {
    let req = match decode::<StartPe>(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    match s.with(|w, now| w.start_pe(&req, now)) {
        Ok(started) => (StatusCode::CREATED, json_body(encode(&started))).into_response(),
        Err(e) => error_response(e),
    }
}

async fn stop_pe(State(s): State<Shared>, body: Bytes) -> Response {
    let req = match decode::<StopPe>(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    match s.with(|w, _| w.stop_pe(&req.pe_id)) {
        Ok(()) => StatusCode::OK.into_response(),
        Err(e) => error_response(e),
    }
}
