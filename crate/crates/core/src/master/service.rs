//! HTTP front door for [`Master`] and the executor for its actions.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::{Action, Master, MasterError};
use crate::clock::{Clock, Millis, SystemClock};
use crate::events::EventSink;
use crate::irm::IrmConfig;
use crate::net::{self, json_body};
use crate::protocol::{
    decode, encode, Enqueued, PeHostingRequest, PeStarted, RegisterWorker, StartPe, StopPe,
    WorkerRegistered, WorkerReport, PATH_PE, PATH_PE_REQUEST, PATH_PE_START, PATH_PE_STOP,
    PATH_REGISTER, PATH_REPORT, PATH_STATUS, PATH_STREAM,
};

/// Cadence of the loop that drives [`Master::tick`].
pub const TICK: Duration = Duration::from_millis(100);

#[derive(Clone)]
struct Shared {
    master: Arc<Mutex<Master>>,
    http: reqwest::Client,
    sink: EventSink,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Master> {
        self.master.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs one state transition, then flushes its events and actions.
    fn with<R>(&self, f: impl FnOnce(&mut Master, Millis) -> R) -> R {
        let now = SystemClock.now_ms();
        let (result, actions, events) = {
            let mut master = self.lock();
            let result = f(&mut master, now);
            (result, master.take_actions(), master.take_events())
        };
        for event in &events {
            (self.sink)(event);
        }
        for action in actions {
            self.execute(action);
        }
        result
    }

    fn execute(&self, action: Action) {
        let shared = self.clone();
        tokio::spawn(async move {
            match action {
                Action::StartPe {
                    host, port, request, ..
                } => {
                    let result = shared.start_pe(&host, port, &request).await;
                    shared.with(|m, now| m.on_start_result(&request.pe_id, result, now));
                }
                Action::Dispatch {
                    worker_id,
                    host,
                    port,
                    pe_id,
                    message,
                } => {
                    let url = net::url(&host, port, PATH_STREAM);
                    let accepted = matches!(
                        net::post_message(&shared.http, &url, &message, Some(&pe_id)).send().await,
                        Ok(r) if r.status() == StatusCode::OK
                    );
                    shared.with(|m, now| {
                        m.on_dispatch_result(&worker_id, &pe_id, message, accepted, now)
                    });
                }
                Action::StopPe {
                    host, port, pe_id, ..
                } => {
                    let url = net::url(&host, port, PATH_PE_STOP);
                    let body = encode(&StopPe { pe_id: pe_id.clone() });
                    if let Err(err) = shared.http.post(url).body(body).send().await {
                        tracing::warn!(%pe_id, %err, "stop request failed");
                    }
                }
                Action::Provision { count } => {
                    // Workers are launched from outside; they show up by
                    // registering. Forget the request so scaling asks again.
                    tracing::info!(count, "more workers wanted");
                    shared.with(|m, now| m.on_provision_result(count, 0, now));
                }
                Action::Decommission { worker_id, .. } => {
                    // The worker learns through a 410 on its next report.
                    tracing::info!(%worker_id, "worker decommissioned");
                }
            }
        });
    }

    async fn start_pe(&self, host: &str, port: u16, request: &StartPe) -> Result<PeStarted, String> {
        let url = net::url(host, port, PATH_PE_START);
        let response = self
            .http
            .post(url)
            .body(encode(request))
            .send()
            .await
            .map_err(|e| format!("unreachable: {e}"))?;
        let status = response.status();
        let body = response.bytes().await.map_err(|e| e.to_string())?;
        if status != StatusCode::CREATED {
            return Err(format!("status {}", status.as_u16()));
        }
        decode::<PeStarted>(&body).map_err(|e| e.to_string())
    }
}

/// A running master: HTTP listener plus the periodic tick loop.
pub struct MasterServer {
    addr: SocketAddr,
    master: Arc<Mutex<Master>>,
    tasks: Vec<JoinHandle<()>>,
}

impl MasterServer {
    pub async fn bind(listen: &str, config: IrmConfig, sink: EventSink) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let shared = Shared {
            master: Arc::new(Mutex::new(Master::new(config, SystemClock.now_ms()))),
            http: net::client(),
            sink,
        };
        let app = router(shared.clone());
        let server = tokio::spawn(async move {
            if let Err(err) = axum::serve(listener, app).await {
                tracing::error!(%err, "master server stopped");
            }
        });
        let ticker_state = shared.clone();
        let ticker = tokio::spawn(async move {
            let mut interval = tokio::time::interval(TICK);
            loop {
                interval.tick().await;
                ticker_state.with(|m, now| m.tick(now));
            }
        });
        Ok(Self {
            addr,
            master: shared.master,
            tasks: vec![server, ticker],
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Direct access to the state, for inspection.
    pub fn master(&self) -> Arc<Mutex<Master>> {
        self.master.clone()
    }

    /// Waits until the server task ends, which normally means never.
    pub async fn wait(mut self) {
        if let Some(server) = self.tasks.first_mut() {
            let _ = server.await;
        }
    }
}

impl Drop for MasterServer {
    fn drop(&mut self) {
        for task in &self.tasks {
            task.abort();
        }
    }
}

fn router(shared: Shared) -> Router {
    Router::new()
        .route(PATH_REGISTER, post(register))
        .route(PATH_REPORT, post(report))
        .route(PATH_PE, get(find_pe))
        .route(PATH_STREAM, post(stream))
        .route(PATH_PE_REQUEST, post(pe_request))
        .route(PATH_STATUS, get(status))
        .with_state(shared)
}

fn bad_request(err: impl std::fmt::Display) -> Response {
    (StatusCode::BAD_REQUEST, err.to_string()).into_response()
}

async fn register(State(s): State<Shared>, body: Bytes) -> Response {
    let req = match decode::<RegisterWorker>(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    let worker_id = s.with(|m, now| m.register_worker(&req.host, req.port, now));
    json_body(encode(&WorkerRegistered { worker_id })).into_response()
}

async fn report(State(s): State<Shared>, body: Bytes) -> Response {
    let report = match decode::<WorkerReport>(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    match s.with(|m, now| m.ingest_report(&report, now)) {
        Ok(()) => StatusCode::OK.into_response(),
        Err(e @ MasterError::UnknownWorker(_)) => (StatusCode::NOT_FOUND, e.to_string()).into_response(),
        Err(e @ MasterError::WorkerRemoved(_)) => (StatusCode::GONE, e.to_string()).into_response(),
    }
}

#[derive(Deserialize)]
struct PeQuery {
    image: String,
    #[serde(default)]
    tag: String,
}

async fn find_pe(State(s): State<Shared>, Query(q): Query<PeQuery>) -> Response {
    match s.with(|m, now| m.find_available_pe(&q.image, &q.tag, now)) {
        Some(endpoint) => json_body(encode(&endpoint)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn stream(State(s): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let (message, _) = match net::message_from_http(&headers, body.to_vec()) {
        Ok(m) => m,
        Err(e) => return bad_request(e),
    };
    let queue_length = s.with(|m, now| m.enqueue_backlog(message, now));
    (StatusCode::ACCEPTED, json_body(encode(&Enqueued { queue_length }))).into_response()
}

async fn pe_request(State(s): State<Shared>, body: Bytes) -> Response {
    let req = match decode::<PeHostingRequest>(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    s.with(|m, now| m.request_pes(&req.image, &req.tag, req.count, now));
    StatusCode::ACCEPTED.into_response()
}

async fn status(State(s): State<Shared>) -> Response {
    let frame = s.with(|m, now| m.status(now));
    json_body(encode(&frame)).into_response()
}
