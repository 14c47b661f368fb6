//! HTTP plumbing shared by the master, worker and connector.

use std::time::Duration;

use axum::http::HeaderMap;

use crate::protocol::{ProtocolError, StreamMessage, HEADER_PE_ID};

pub(crate) const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

pub(crate) fn client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(REQUEST_TIMEOUT)
        .build()
        .expect("HTTP client builds")
}

pub(crate) fn url(host: &str, port: u16, path: &str) -> String {
    format!("http://{host}:{port}{path}")
}

/// Accepts `host:port`, with or without an `http://` prefix.
pub(crate) fn base_url(addr: &str) -> String {
    let addr = addr.trim_end_matches('/');
    if addr.starts_with("http://") || addr.starts_with("https://") {
        addr.to_string()
    } else {
        format!("http://{addr}")
    }
}

pub(crate) fn message_from_http(
    headers: &HeaderMap,
    body: Vec<u8>,
) -> Result<(StreamMessage, Option<String>), ProtocolError> {
    let header = |name: &str| {
        headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    let pe_hint = header(HEADER_PE_ID);
    Ok((StreamMessage::from_parts(header, body)?, pe_hint))
}

pub(crate) fn post_message(
    client: &reqwest::Client,
    url: &str,
    message: &StreamMessage,
    pe_id: Option<&str>,
) -> reqwest::RequestBuilder {
    let mut request = client.post(url).body(message.payload.clone());
    for (name, value) in message.headers() {
        request = request.header(name, value);
    }
    if let Some(pe_id) = pe_id {
        request = request.header(HEADER_PE_ID, pe_id);
    }
    request
}

pub(crate) fn json_body(bytes: Vec<u8>) -> ([(axum::http::HeaderName, &'static str); 1], Vec<u8>) {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], bytes)
}
