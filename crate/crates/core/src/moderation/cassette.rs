//! Recorded HTTP exchanges and a local server that replays them.
//!
//! A cassette is a JSON document:
//!
//! ```json
//! {
//!   "interactions": [
//!     {
//!       "request": { "method": "POST", "path": "/v1/completions", "body": { "prompt": "..." } },
//!       "response": { "status": 200, "body": { "choices": [{ "text": " Hi. " }] }, "delay_ms": 0 }
//!     }
//!   ]
//! }
//! ```
//!
//! Interactions are served in order. A request whose method, path or JSON body
//! differs from the next recorded one is answered with status 599 and logged
//! as a mismatch. The request `body` may be omitted to accept any body.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Status returned for requests that do not match the recording.
pub const MISMATCH_STATUS: u16 = 599;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub status: u16,
    pub body: serde_json::Value,
    /// Held back this long before answering, to simulate slow backends.
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub request: RecordedRequest,
    pub response: RecordedResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub interactions: Vec<Interaction>,
}

impl Cassette {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What the replay server saw.
#[derive(Debug, Clone, Default)]
pub struct ReplayLog {
    /// Requests in arrival order, with their bodies parsed as JSON when
    /// possible.
    pub requests: Vec<RecordedRequest>,
    pub mismatches: Vec<String>,
}

/// Serves a cassette on an ephemeral localhost port until dropped.
pub struct ReplayServer {
    server: Arc<tiny_http::Server>,
    url: String,
    log: Arc<Mutex<ReplayLog>>,
    worker: Option<JoinHandle<()>>,
}

impl ReplayServer {
    pub fn start(cassette: Cassette) -> Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| Error::Config(format!("replay server: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("replay server has no ip address".into()))?;
        let server = Arc::new(server);
        let log = Arc::new(Mutex::new(ReplayLog::default()));
        let worker = {
            let server = Arc::clone(&server);
            let log = Arc::clone(&log);
            std::thread::spawn(move || serve(&server, cassette, &log))
        };
        Ok(Self {
            server,
            url: format!("http://{addr}"),
            log,
            worker: Some(worker),
        })
    }

    /// Base URL such as `http://127.0.0.1:40123`.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn log(&self) -> ReplayLog {
        self.log.lock().expect("replay log poisoned").clone()
    }
}

impl Drop for ReplayServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn serve(server: &tiny_http::Server, cassette: Cassette, log: &Mutex<ReplayLog>) {
    let mut pending = cassette.interactions.into_iter();
    for mut request in server.incoming_requests() {
        let mut raw = String::new();
        let _ = request.as_reader().read_to_string(&mut raw);
        let seen = RecordedRequest {
            method: request.method().as_str().to_string(),
            path: request.url().to_string(),
            body: serde_json::from_str(&raw).ok().or(Some(serde_json::Value::String(raw))),
        };
        let reply = match pending.next() {
            Some(i) if matches(&i.request, &seen) => i.response,
            Some(i) => mismatch(log, format!("expected {:?}, got {:?}", i.request, seen)),
            None => mismatch(log, format!("unexpected extra request {seen:?}")),
        };
        log.lock().expect("replay log poisoned").requests.push(seen);
        // Answer on its own thread so a slow reply does not hold up the
        // requests that follow it, such as a client's retry after a timeout.
        std::thread::spawn(move || {
            if reply.delay_ms > 0 {
                std::thread::sleep(Duration::from_millis(reply.delay_ms));
            }
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                .expect("static header");
            let response = tiny_http::Response::from_string(reply.body.to_string())
                .with_status_code(reply.status)
                .with_header(header);
            let _ = request.respond(response);
        });
    }
}

fn matches(recorded: &RecordedRequest, seen: &RecordedRequest) -> bool {
    recorded.method.eq_ignore_ascii_case(&seen.method)
        && recorded.path == seen.path
        && recorded.body.as_ref().is_none_or(|b| Some(b) == seen.body.as_ref())
}

fn mismatch(log: &Mutex<ReplayLog>, message: String) -> RecordedResponse {
    tracing::warn!(%message, "cassette mismatch");
    log.lock().expect("replay log poisoned").mismatches.push(message.clone());
    RecordedResponse {
        status: MISMATCH_STATUS,
        body: serde_json::json!({ "error": message }),
        delay_ms: 0,
    }
}
