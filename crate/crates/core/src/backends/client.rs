//! Retrying JSON client shared by every backend role.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::http::HttpTransport;
use super::mock::{MockBackend, MockScript};
use super::protocol::*;
use super::roles::*;
use super::BackendError;
use crate::digest::canonical_json_hash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connection(String),
    Status {
        status: u16,
        code: String,
        message: String,
    },
    Decode(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { status, .. } => *status >= 500,
            TransportError::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("timed out"),
            TransportError::Connection(e) => write!(f, "connection failed: {e}"),
            TransportError::Status {
                status,
                code,
                message,
            } => write!(f, "status {status} ({code}): {message}"),
            TransportError::Decode(e) => write!(f, "undecodable body: {e}"),
        }
    }
}

/// Moves one JSON request to a backend and returns the JSON reply.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        route: Route,
        idempotency_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub name: String,
    /// `mock://` selects the in-process mock; otherwise an `http://` base URL.
    pub base_url: String,
    pub default_timeout_ms: u64,
    /// Per-route overrides keyed by route name (`edit`, `critique`, ...).
    pub timeouts_ms: BTreeMap<String, u64>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub idempotency_header: String,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            name: "mock".into(),
            base_url: "mock://".into(),
            default_timeout_ms: 30_000,
            timeouts_ms: BTreeMap::new(),
            retries: 2,
            backoff_ms: 0,
            idempotency_header: "Idempotency-Key".into(),
        }
    }
}

impl BackendProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.default_timeout_ms == 0 {
            return Err(BackendError::Config(format!(
                "profile {}: default timeout must be positive",
                self.name
            )));
        }
        for (route, ms) in &self.timeouts_ms {
            if *ms == 0 {
                return Err(BackendError::Config(format!(
                    "profile {}: timeout for {route} must be positive",
                    self.name
                )));
            }
        }
        if self.idempotency_header.trim().is_empty() {
            return Err(BackendError::Config("idempotency header name is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self, route: Route) -> Duration {
        Duration::from_millis(
            self.timeouts_ms
                .get(route.name())
                .copied()
                .unwrap_or(self.default_timeout_ms),
        )
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock://")
    }
}

fn strip_paths(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("path");
            m.values_mut().for_each(strip_paths);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_paths),
        _ => {}
    }
}

/// Hash identifying a request by content: canonical JSON with every image
/// `path` removed, so the same request from a different directory matches.
pub fn request_content_hash(body: &Value) -> String {
    let mut v = body.clone();
    strip_paths(&mut v);
    canonical_json_hash(&v)
}

#[derive(Clone)]
pub struct BackendClient {
    profile: BackendProfile,
    transport: Arc<dyn Transport>,
}

impl std::fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendClient")
            .field("profile", &self.profile)
            .finish_non_exhaustive()
    }
}

impl BackendClient {
    pub fn new(profile: BackendProfile, transport: Arc<dyn Transport>) -> Self {
        Self { profile, transport }
    }

    /// Connects according to the profile: the in-process mock (driven by
    /// `script`) for `mock://`, HTTP otherwise.
    pub fn connect(profile: BackendProfile, script: MockScript) -> Result<Self, BackendError> {
        profile.validate()?;
        let transport: Arc<dyn Transport> = if profile.is_mock() {
            Arc::new(MockBackend::new(script))
        } else {
            Arc::new(HttpTransport::new(&profile)?)
        };
        Ok(Self::new(profile, transport))
    }

    /// Convenience constructor over an existing mock, keeping a handle for
    /// request-log assertions.
    pub fn with_mock(profile: BackendProfile, mock: Arc<MockBackend>) -> Self {
        Self::new(profile, mock)
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn call<R: WireRequest>(&self, request: &R) -> Result<R::Response, BackendError> {
        let route = R::ROUTE;
        let mut body = serde_json::to_value(request).expect("request serializes");
        body.as_object_mut()
            .expect("requests are JSON objects")
            .insert("version".into(), Value::String(PROTOCOL_VERSION.into()));
        let key = request_content_hash(&body);
        let timeout = self.profile.timeout(route);

        let attempts = self.profile.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            match self.transport.send(route, &key, &body, timeout) {
                Ok(reply) => return decode::<R::Response>(route, reply),
                Err(e) if e.retryable() => {
                    log::debug!("{route} attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < attempts && self.profile.backoff_ms > 0 {
                        std::thread::sleep(Duration::from_millis(
                            self.profile.backoff_ms << attempt.min(6),
                        ));
                    }
                }
                Err(TransportError::Status {
                    status,
                    code,
                    message,
                }) => {
                    return Err(BackendError::Rejected {
                        route,
                        status,
                        code,
                        message,
                    })
                }
                Err(e) => {
                    return Err(BackendError::Malformed {
                        route,
                        detail: e.to_string(),
                    })
                }
            }
        }
        Err(BackendError::Unavailable {
            route,
            attempts,
            detail: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

fn decode<T: WireResponse>(route: Route, reply: Value) -> Result<T, BackendError> {
    let parsed: T = serde_json::from_value(reply).map_err(|e| BackendError::Malformed {
        route,
        detail: e.to_string(),
    })?;
    parsed
        .validate()
        .map_err(|detail| BackendError::Malformed { route, detail })?;
    Ok(parsed)
}

/// Checks a raw reply against the client schema for `R` without a round trip.
pub fn validate_reply<R: WireRequest>(reply: Value) -> Result<R::Response, BackendError> {
    decode::<R::Response>(R::ROUTE, reply)
}

impl AnalysisBackend for BackendClient {
    fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, BackendError> {
        self.call(req)
    }
}

impl EmbeddingBackend for BackendClient {
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        self.call(req)
    }
}

impl PlannerBackend for BackendClient {
    fn propose(&self, req: &ProposeRequest) -> Result<ProposeResponse, BackendError> {
        self.call(req)
    }
    fn revise(&self, req: &ReviseRequest) -> Result<ReviseResponse, BackendError> {
        self.call(req)
    }
}

impl EditBackend for BackendClient {
    fn edit(&self, req: &EditRequest) -> Result<EditResponse, BackendError> {
        self.call(req)
    }
}

impl DetectionBackend for BackendClient {
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        self.call(req)
    }
}

impl SegmentationBackend for BackendClient {
    fn segment(&self, req: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        self.call(req)
    }
}

impl ValidationBackend for BackendClient {
    fn validate(&self, req: &ValidateRequest) -> Result<ValidateResponse, BackendError> {
        self.call(req)
    }
}

impl CriticBackend for BackendClient {
    fn assess(&self, req: &AssessRequest) -> Result<AssessResponse, BackendError> {
        self.call(req)
    }
    fn diagnose(&self, req: &DiagnoseRequest) -> Result<DiagnoseResponse, BackendError> {
        self.call(req)
    }
    fn escalate(&self, req: &EscalateRequest) -> Result<EscalateResponse, BackendError> {
        self.call(req)
    }
}

impl ClassifierBackend for BackendClient {
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse, BackendError> {
        self.call(req)
    }
}

impl DescriptionBackend for BackendClient {
    fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, BackendError> {
        self.call(req)
    }
}

impl PerceptualBackend for BackendClient {
    fn perceptual_distance(
        &self,
        req: &PerceptualDistanceRequest,
    ) -> Result<PerceptualDistanceResponse, BackendError> {
        self.call(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        error: TransportError,
    }

    impl Transport for Flaky {
        fn send(&self, _: Route, _: &str, body: &Value, _: Duration) -> Result<Value, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            assert_eq!(body["version"], PROTOCOL_VERSION);
            if n < self.fail_first {
                return Err(self.error.clone());
            }
            Ok(serde_json::json!({"vector": [1.0, 0.0]}))
        }
    }

    fn client(fail_first: u32, error: TransportError, retries: u32) -> (BackendClient, Arc<Flaky>) {
        let t = Arc::new(Flaky {
            fail_first,
            calls: AtomicU32::new(0),
            error,
        });
        let profile = BackendProfile {
            retries,
            ..BackendProfile::default()
        };
        (BackendClient::new(profile, t.clone()), t)
    }

    #[test]
    fn retries_transient_failures() {
        let (c, t) = client(2, TransportError::Timeout, 2);
        assert!(c.embed(&EmbedRequest::text("x")).is_ok());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_configured_retries() {
        let (c, t) = client(10, TransportError::Timeout, 3);
        match c.embed(&EmbedRequest::text("x")) {
            Err(BackendError::Unavailable { attempts, route, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(route, Route::Embed);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let err = TransportError::Status {
            status: 400,
            code: "bad_request".into(),
            message: "nope".into(),
        };
        let (c, t) = client(10, err, 3);
        assert!(matches!(
            c.embed(&EmbedRequest::text("x")),
            Err(BackendError::Rejected { status: 400, .. })
        ));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn content_hash_ignores_paths() {
        let a = serde_json::json!({"image": {"path": "/a/x.png", "content_hash": "h"}});
        let b = serde_json::json!({"image": {"path": "/b/x.png", "content_hash": "h"}});
        assert_eq!(request_content_hash(&a), request_content_hash(&b));
    }

    #[test]
    fn profile_validation() {
        let mut p = BackendProfile::default();
        p.timeouts_ms.insert("edit".into(), 0);
        assert!(p.validate().is_err());
        p.timeouts_ms.insert("edit".into(), 5);
        assert!(p.validate().is_ok());
        assert_eq!(p.timeout(Route::Edit), Duration::from_millis(5));
        assert_eq!(p.timeout(Route::Embed), Duration::from_millis(30_000));
    }
}
