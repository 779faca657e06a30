use std::io::ErrorKind;
use std::time::Duration;

use serde_json::Value;

use super::client::{BackendProfile, Transport, TransportError};
use super::protocol::{ErrorEnvelope, Route};
use super::BackendError;

/// Blocking HTTP/1.1 transport. Plain `http://` only.
pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    idempotency_header: String,
}

impl HttpTransport {
    pub fn new(profile: &BackendProfile) -> Result<Self, BackendError> {
        if !profile.base_url.starts_with("http://") {
            return Err(BackendError::Config(format!(
                "unsupported backend url {:?}; expected http:// or mock://",
                profile.base_url
            )));
        }
        Ok(Self {
            agent: ureq::AgentBuilder::new().build(),
            base_url: profile.base_url.trim_end_matches('/').to_string(),
            idempotency_header: profile.idempotency_header.clone(),
        })
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        route: Route,
        idempotency_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let url = format!("{}{}", self.base_url, route.path());
        let result = self
            .agent
            .post(&url)
            .timeout(timeout)
            .set(&self.idempotency_header, idempotency_key)
            .send_json(body);
        match result {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let (code, message) = match serde_json::from_str::<ErrorEnvelope>(&text) {
                    Ok(env) => (env.error.code, env.error.message),
                    Err(_) => ("http_error".to_string(), text),
                };
                if status == 504 {
                    return Err(TransportError::Timeout);
                }
                Err(TransportError::Status {
                    status,
                    code,
                    message,
                })
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(|io| {
                        matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock)
                    });
                if timed_out {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Connection(t.to_string()))
                }
            }
        }
    }
}
