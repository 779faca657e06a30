//! HTTP front end for [`MockBackend`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use super::mock::{LoggedRequest, MockBackend, MockScript};
use super::BackendError;

const WORKERS: usize = 4;

/// A running mock server. Dropping the handle stops it.
pub struct MockServer {
    server: Arc<Server>,
    backend: Arc<MockBackend>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (`0` picks a free port) and starts serving.
    pub fn start(script: MockScript, port: u16) -> Result<Self, BackendError> {
        script.validate().map_err(BackendError::Config)?;
        let requested = format!("127.0.0.1:{port}");
        let server = Server::http(&requested).map_err(|e| BackendError::BindFailure {
            addr: requested.clone(),
            detail: e.to_string(),
        })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| BackendError::BindFailure {
                addr: requested,
                detail: "not an IP listener".into(),
            })?;
        let server = Arc::new(server);
        let backend = Arc::new(MockBackend::new(script));
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        serve(&backend, request);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            backend,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.backend.requests()
    }

    pub fn backend(&self) -> &Arc<MockBackend> {
        &self.backend
    }

    /// Blocks the calling thread until the workers exit.
    pub fn run_forever(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        // each worker needs its own wakeup
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_data(serde_json::to_vec(body).expect("json serializes"))
        .with_status_code(status)
        .with_header(header)
}

fn serve(backend: &MockBackend, mut request: tiny_http::Request) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let response = match (request.method(), path.as_str()) {
        (Method::Get, "/requests") => json_response(200, &json!(backend.requests())),
        (Method::Post, _) => {
            let mut text = String::new();
            match request
                .as_reader()
                .read_to_string(&mut text)
                .map_err(|e| e.to_string())
                .and_then(|_| serde_json::from_str::<Value>(&text).map_err(|e| e.to_string()))
            {
                Ok(body) => match backend.handle(&path, &body) {
                    Ok(reply) => json_response(200, &reply),
                    Err(fault) => json_response(fault.status, &fault.envelope()),
                },
                Err(e) => json_response(
                    400,
                    &json!({"error": {"code": "bad_request", "message": e}}),
                ),
            }
        }
        _ => json_response(
            405,
            &json!({"error": {"code": "method_not_allowed", "message": "use POST"}}),
        ),
    };
    if let Err(e) = request.respond(response) {
        log::warn!("mock server failed to respond: {e}");
    }
}
