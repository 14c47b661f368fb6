//! Stream connector client: asks the master for an idle PE, streams the
//! message straight to its worker and falls back to the master's backlog.

use std::time::Duration;

use futures::stream::{self, StreamExt};
use reqwest::StatusCode;
use thiserror::Error;

use crate::net;
use crate::protocol::{decode, PeEndpoint, StreamMessage, PATH_PE, PATH_STREAM};

pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    /// Accepted by a PE on this worker.
    P2p { worker_id: String },
    /// Accepted into the master's backlog.
    Queued,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectorError {
    #[error("master unreachable after {attempts} attempts: {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("master answered {status}: {body}")]
    Rejected { status: u16, body: String },
}

#[derive(Debug, Clone)]
pub struct Connector {
    http: reqwest::Client,
    master: String,
    retries: u32,
    backoff_base: Duration,
}

impl Connector {
    /// `master` is `host:port` or a base URL.
    pub fn new(master: &str) -> Self {
        Self {
            http: net::client(),
            master: net::base_url(master),
            retries: DEFAULT_RETRIES,
            backoff_base: DEFAULT_BACKOFF_BASE,
        }
    }

    /// Retries after a transport failure talking to the master, waiting
    /// `base`, `2·base`, `4·base`, ... between attempts.
    pub fn with_retry(mut self, retries: u32, base: Duration) -> Self {
        self.retries = retries;
        self.backoff_base = base;
        self
    }

    async fn with_retries<F, Fut>(&self, mut attempt: F) -> Result<reqwest::Response, ConnectorError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = reqwest::Result<reqwest::Response>>,
    {
        let mut delay = self.backoff_base;
        let mut tries = 0;
        loop {
            tries += 1;
            match attempt().await {
                Ok(response) => return Ok(response),
                Err(err) if tries > self.retries => {
                    return Err(ConnectorError::Transport {
                        attempts: tries,
                        reason: err.to_string(),
                    })
                }
                Err(_) => {
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
            }
        }
    }

    async fn rejected(response: reqwest::Response) -> ConnectorError {
        let status = response.status().as_u16();
        let body = response.text().await.unwrap_or_default();
        ConnectorError::Rejected { status, body }
    }

    /// Asks the master for an idle PE for the message's image.
    pub async fn find_pe(&self, image: &str, tag: &str) -> Result<Option<PeEndpoint>, ConnectorError> {
        let url = format!("{}{PATH_PE}", self.master);
        let response = self
            .with_retries(|| self.http.get(&url).query(&[("image", image), ("tag", tag)]).send())
            .await?;
        match response.status() {
            StatusCode::OK => {
                let body = response.bytes().await.map_err(|e| ConnectorError::Rejected {
                    status: 200,
                    body: e.to_string(),
                })?;
                decode::<PeEndpoint>(&body)
                    .map(Some)
                    .map_err(|e| ConnectorError::Rejected {
                        status: 200,
                        body: e.to_string(),
                    })
            }
            StatusCode::NO_CONTENT => Ok(None),
            _ => Err(Self::rejected(response).await),
        }
    }

    /// Streams to a worker; `true` if a PE took it.
    async fn send_p2p(&self, endpoint: &PeEndpoint, message: &StreamMessage) -> bool {
        let url = format!("{}{PATH_STREAM}", endpoint.base_url());
        let sent = net::post_message(&self.http, &url, message, Some(&endpoint.pe_id))
            .send()
            .await;
        matches!(sent, Ok(r) if r.status() == StatusCode::OK)
    }

    /// Hands the message to the master's backlog.
    pub async fn enqueue(&self, message: &StreamMessage) -> Result<Delivery, ConnectorError> {
        let url = format!("{}{PATH_STREAM}", self.master);
        let response = self
            .with_retries(|| net::post_message(&self.http, &url, message, None).send())
            .await?;
        if response.status() == StatusCode::ACCEPTED {
            Ok(Delivery::Queued)
        } else {
            Err(Self::rejected(response).await)
        }
    }

    pub async fn send(&self, message: &StreamMessage) -> Result<Delivery, ConnectorError> {
        if let Some(endpoint) = self.find_pe(&message.image, &message.tag).await? {
            if self.send_p2p(&endpoint, message).await {
                return Ok(Delivery::P2p {
                    worker_id: endpoint.worker_id,
                });
            }
        }
        self.enqueue(message).await
    }

    /// Sends with at most `concurrency` messages in flight. Results are in
    /// input order.
    pub async fn send_batch(
        &self,
        messages: &[StreamMessage],
        concurrency: usize,
    ) -> Vec<Result<Delivery, ConnectorError>> {
        // Owned futures keep the returned future `Send` for `tokio::spawn`.
        stream::iter(messages.iter().cloned())
            .map(|m| {
                let this = self.clone();
                async move { this.send(&m).await }
            })
            .buffered(concurrency.max(1))
            .collect()
            .await
    }
}
