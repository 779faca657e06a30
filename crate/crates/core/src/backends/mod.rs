//! Wire protocol to the external model services, the retrying client, and
//! the deterministic mock used by every test.

mod client;
mod http;
pub mod mock;
pub mod protocol;
mod roles;
mod server;

pub use client::{
    request_content_hash, validate_reply, BackendClient, BackendProfile, Transport, TransportError,
};
pub use http::HttpTransport;
pub use mock::{LoggedRequest, MockBackend, MockFault, MockRule, MockScript};
pub use protocol::*;
pub use roles::*;
pub use server::MockServer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend {route} unavailable after {attempts} attempt(s): {detail}")]
    Unavailable {
        route: Route,
        attempts: u32,
        detail: String,
    },
    #[error("malformed response from {route}: {detail}")]
    Malformed { route: Route, detail: String },
    #[error("backend {route} rejected the request with {status} ({code}): {message}")]
    Rejected {
        route: Route,
        status: u16,
        code: String,
        message: String,
    },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cannot bind mock server on {addr}: {detail}")]
    BindFailure { addr: String, detail: String },
}

impl BackendError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}
