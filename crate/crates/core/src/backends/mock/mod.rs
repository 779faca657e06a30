//! Deterministic, failure-injectable implementation of every route.
//!
//! A [`MockScript`] holds ordered rules. The first rule whose route matches,
//! whose `content_hash` (if set) equals the request content hash, and whose
//! `match` object is a JSON subset of the request body decides the reply.
//! Unmatched requests fall through to seeded default generators, which are
//! pure functions of `(seed, route, request content)`.

mod vocab;

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::client::{request_content_hash, Transport, TransportError};
use super::protocol::*;
use crate::artifact::write_atomic;
use crate::digest::sha256_hex;
use crate::editing::RleMask;
use crate::emotion::Emotion;
use crate::planning::compatible_methods;

pub use vocab::{ELEMENTS, ENTITIES, SCENES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFault {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl MockFault {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn envelope(&self) -> Value {
        json!({"error": {"code": self.code, "message": self.message}})
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub route: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matches: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockFault>,
}

impl MockRule {
    pub fn respond(route: Route, matches: Value, response: Value) -> Self {
        Self {
            route: route.path().into(),
            content_hash: None,
            matches: Some(matches),
            response: Some(response),
            error: None,
        }
    }

    pub fn fail(route: Route, matches: Option<Value>, status: u16, code: &str) -> Self {
        Self {
            route: route.path().into(),
            content_hash: None,
            matches,
            response: None,
            error: Some(MockFault::new(status, code, format!("injected {code}"))),
        }
    }

    fn applies(&self, route: Route, content_hash: &str, body: &Value) -> bool {
        self.route == route.path()
            && self.content_hash.as_deref().is_none_or(|h| h == content_hash)
            && self.matches.as_ref().is_none_or(|m| json_subset(m, body))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub seed: u64,
    /// Embedding dimension of `/embed` replies.
    pub dimension: usize,
    /// Fail `/validate` when the edit left the image byte-identical.
    pub strict_validation: bool,
    pub rules: Vec<MockRule>,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            seed: 0,
            dimension: 8,
            strict_validation: true,
            rules: Vec::new(),
        }
    }
}

impl MockScript {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dimension == 0 {
            return Err("dimension must be positive".into());
        }
        for (i, r) in self.rules.iter().enumerate() {
            if Route::from_path(&r.route).is_none() {
                return Err(format!("rules[{i}]: unknown route {}", r.route));
            }
            if r.response.is_some() == r.error.is_some() {
                return Err(format!("rules[{i}]: set exactly one of response or error"));
            }
        }
        Ok(())
    }
}

/// `pattern` is contained in `value`: objects by key, arrays elementwise,
/// scalars by equality.
pub fn json_subset(pattern: &Value, value: &Value) -> bool {
    match (pattern, value) {
        (Value::Object(p), Value::Object(v)) => p
            .iter()
            .all(|(k, pv)| v.get(k).is_some_and(|vv| json_subset(pv, vv))),
        (Value::Array(p), Value::Array(v)) => {
            p.len() == v.len() && p.iter().zip(v).all(|(a, b)| json_subset(a, b))
        }
        (p, v) => p == v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub route: String,
    pub content_hash: String,
    pub body: Value,
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    log: Mutex<Vec<LoggedRequest>>,
}

type Reply = Result<Value, MockFault>;

fn parse<T: DeserializeOwned>(body: &Value) -> Result<T, MockFault> {
    serde_json::from_value(body.clone()).map_err(|e| MockFault::new(400, "bad_request", e.to_string()))
}

fn reply<T: Serialize>(v: T) -> Reply {
    Ok(serde_json::to_value(v).expect("reply serializes"))
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }

    /// Serves one request. Identical content always yields an identical reply.
    pub fn handle(&self, path: &str, body: &Value) -> Reply {
        let route = Route::from_path(path)
            .ok_or_else(|| MockFault::new(404, "unknown_route", format!("no route {path}")))?;
        let content_hash = request_content_hash(body);
        self.log.lock().unwrap().push(LoggedRequest {
            route: route.path().into(),
            content_hash: content_hash.clone(),
            body: body.clone(),
        });
        if body.get("version").and_then(Value::as_str) != Some(PROTOCOL_VERSION) {
            return Err(MockFault::new(
                400,
                "unsupported_version",
                format!("expected version {PROTOCOL_VERSION}"),
            ));
        }
        if let Some(rule) = self
            .script
            .rules
            .iter()
            .find(|r| r.applies(route, &content_hash, body))
        {
            return match (&rule.response, &rule.error) {
                (Some(resp), _) => Ok(resp.clone()),
                (None, Some(fault)) => Err(fault.clone()),
                (None, None) => Err(MockFault::new(500, "bad_rule", "rule has no reply")),
            };
        }
        let mut rng = self.rng(route, &content_hash);
        let mode = body.get("mode").and_then(Value::as_str);
        match (route, mode) {
            (Route::Analyze, _) => self.analyze(parse(body)?, &mut rng),
            (Route::PlanPropose, Some("revise")) => self.revise(parse(body)?),
            (Route::PlanPropose, _) => self.propose(parse(body)?, &mut rng),
            (Route::Edit, _) => self.edit(parse(body)?),
            (Route::Detect, _) => self.detect(parse(body)?),
            (Route::Segment, _) => self.segment(parse(body)?),
            (Route::Validate, _) => self.validate(parse(body)?),
            (Route::Critique, Some("diagnose")) => {
                let _: DiagnoseRequest = parse(body)?;
                reply(DiagnoseResponse {
                    effective: true,
                    executed: true,
                    revised: None,
                    error_note: None,
                })
            }
            (Route::Critique, Some("escalate")) => self.escalate(parse(body)?, &mut rng),
            (Route::Critique, _) => self.assess(parse(body)?, &mut rng),
            (Route::Embed, _) => self.embed(parse(body)?),
            (Route::Classify, _) => self.classify(parse(body)?, &mut rng),
            (Route::Describe, _) => self.describe(parse(body)?, &mut rng),
            (Route::PerceptualDistance, _) => self.perceptual(parse(body)?),
        }
    }

    fn rng(&self, route: Route, content: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(format!("{}:{}:{}", self.script.seed, route, content));
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn analyze(&self, _req: AnalyzeRequest, rng: &mut ChaCha8Rng) -> Reply {
        let scene = SCENES[rng.random_range(0..SCENES.len())];
        let count = rng.random_range(1..=3);
        let entities = ENTITIES
            .choose_multiple(rng, count)
            .map(|name| Entity {
                name: (*name).into(),
                salience: rng.random_range(0.3..1.0),
            })
            .collect();
        reply(AnalyzeResponse {
            scene_summary: scene.into(),
            entities,
            source_emotion: Emotion::ALL[rng.random_range(0..8)].into(),
            source_confidence: rng.random_range(0.5..0.95),
        })
    }

    fn propose(&self, req: ProposeRequest, rng: &mut ChaCha8Rng) -> Reply {
        let mut pairs: Vec<ElementSuggestion> = ELEMENTS
            .iter()
            .flat_map(|(desc, kind)| {
                compatible_methods(*kind)
                    .iter()
                    .map(move |m| ElementSuggestion {
                        element: (*desc).into(),
                        kind: *kind,
                        method: *m,
                        region_hint: None,
                    })
            })
            .filter(|s| {
                !req.exclude
                    .iter()
                    .any(|p| p.element == s.element && p.method == s.method)
            })
            .collect();
        pairs.shuffle(rng);
        pairs.truncate(req.count as usize);
        reply(ProposeResponse { suggestions: pairs })
    }

    fn revise(&self, req: ReviseRequest) -> Reply {
        reply(ReviseResponse {
            revised_text: format!("{}, making the change clearly visible", req.instruction),
        })
    }

    fn edit(&self, req: EditRequest) -> Reply {
        let input = Path::new(&req.image.path);
        let bytes = fs::read(input)
            .map_err(|e| MockFault::new(422, "unreadable_image", format!("{}: {e}", input.display())))?;
        if sha256_hex(&bytes) != req.image.content_hash {
            return Err(MockFault::new(422, "hash_mismatch", "input bytes do not match content_hash"));
        }
        let mut out = bytes;
        out.extend_from_slice(
            format!(
                "\n#emoflow-edit tool={} masked={} directive={}",
                req.tool,
                req.mask.is_some(),
                req.directive
            )
            .as_bytes(),
        );
        let hash = sha256_hex(&out);
        let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("img");
        let dir = input.parent().unwrap_or(Path::new("."));
        let out_path = dir.join(format!("{hash}.{ext}"));
        let io = |e: crate::artifact::ArtifactError| MockFault::new(500, "write_failed", e.to_string());
        if !out_path.exists() {
            write_atomic(&out_path, &out).map_err(io)?;
        }
        let meta = json!({
            "parent": req.image.content_hash,
            "tool": req.tool,
            "directive": req.directive,
        });
        write_atomic(&dir.join(format!("{hash}.edit.json")), meta.to_string().as_bytes()).map_err(io)?;
        reply(EditResponse {
            image: ImageRef {
                path: out_path.to_string_lossy().into_owned(),
                content_hash: hash,
                width: req.image.width,
                height: req.image.height,
            },
        })
    }

    fn detect(&self, req: DetectRequest) -> Reply {
        let (w, h) = (req.image.width, req.image.height);
        let boxes = if req.phrase.trim().is_empty() || w < 4 || h < 4 {
            Vec::new()
        } else {
            vec![BoundingBox {
                x0: w / 4,
                y0: h / 4,
                x1: 3 * w / 4,
                y1: 3 * h / 4,
                score: 0.9,
            }]
        };
        reply(DetectResponse { boxes })
    }

    fn segment(&self, req: SegmentRequest) -> Reply {
        let (w, h) = (req.image.width, req.image.height);
        let b = req.bbox;
        reply(SegmentResponse {
            mask: RleMask::from_rect(w, h, b.x0.min(w), b.y0.min(h), b.x1.min(w), b.y1.min(h)),
        })
    }

    fn validate(&self, req: ValidateRequest) -> Reply {
        if self.script.strict_validation && req.before.content_hash == req.after.content_hash {
            return reply(ValidateResponse {
                verdict: VerdictKind::Failed,
                reason: Some("no visible change".into()),
            });
        }
        reply(ValidateResponse {
            verdict: VerdictKind::Ok,
            reason: None,
        })
    }

    fn assess(&self, req: AssessRequest, rng: &mut ChaCha8Rng) -> Reply {
        let rationale: Vec<String> = vocab::RATIONALE.iter().map(|s| s.to_string()).collect();
        let source_similarity = req.source.as_ref().map(|_| 0.8 + 0.15 * rng.random::<f64>());
        let Some(target) = req.target.in_domain() else {
            return reply(AssessResponse {
                distribution: None,
                conveys: Some(true),
                rationale,
                source_similarity,
            });
        };
        let weights: Vec<f64> = (0..7).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut rest = weights.iter().map(|w| 0.28 * w / total);
        let dist = Emotion::ALL
            .iter()
            .map(|e| {
                let p = if *e == target { 0.72 } else { rest.next().unwrap() };
                (e.as_str().to_string(), p)
            })
            .collect();
        reply(AssessResponse {
            distribution: Some(dist),
            conveys: None,
            rationale,
            source_similarity,
        })
    }

    fn escalate(&self, req: EscalateRequest, rng: &mut ChaCha8Rng) -> Reply {
        let used: Vec<&str> = req.plan.iter().map(|i| i.element.as_str()).collect();
        let fresh: Vec<_> = ELEMENTS.iter().filter(|(d, _)| !used.contains(d)).collect();
        let (desc, kind) = fresh[rng.random_range(0..fresh.len())];
        let methods = compatible_methods(*kind);
        reply(EscalateResponse {
            proposal: ElementSuggestion {
                element: (*desc).into(),
                kind: *kind,
                method: methods[rng.random_range(0..methods.len())],
                region_hint: None,
            },
        })
    }

    fn embed(&self, req: EmbedRequest) -> Reply {
        let key = match (&req.text, &req.image) {
            (Some(t), _) => format!("text:{t}"),
            (None, Some(img)) => format!("image:{}", img.content_hash),
            (None, None) => {
                return Err(MockFault::new(400, "bad_request", "embed needs text or image"))
            }
        };
        let mut rng = self.rng(Route::Embed, &key);
        reply(EmbedResponse {
            vector: unit_gaussian(&mut rng, self.script.dimension),
        })
    }

    fn classify(&self, _req: ClassifyRequest, rng: &mut ChaCha8Rng) -> Reply {
        let weights: Vec<f64> = (0..8).map(|_| -rng.random_range(1e-6..1.0f64).ln()).collect();
        let total: f64 = weights.iter().sum();
        let distribution = Emotion::ALL
            .iter()
            .zip(&weights)
            .map(|(e, w)| (e.as_str().to_string(), w / total))
            .collect();
        reply(ClassifyResponse { distribution })
    }

    fn describe(&self, _req: DescribeRequest, rng: &mut ChaCha8Rng) -> Reply {
        let (desc, kind) = ELEMENTS[rng.random_range(0..ELEMENTS.len())];
        reply(DescribeResponse {
            description: desc.into(),
            kind,
        })
    }

    fn perceptual(&self, req: PerceptualDistanceRequest) -> Reply {
        let decode = |h: &str| {
            hex::decode(h).map_err(|_| MockFault::new(400, "bad_request", "content_hash is not hex"))
        };
        let (a, b) = (decode(&req.a.content_hash)?, decode(&req.b.content_hash)?);
        if a.len() != b.len() || a.is_empty() {
            return Err(MockFault::new(400, "bad_request", "hash lengths differ"));
        }
        let bits: u32 = a.iter().zip(&b).map(|(x, y)| (x ^ y).count_ones()).sum();
        reply(PerceptualDistanceResponse {
            distance: f64::from(bits) / (a.len() * 8) as f64,
        })
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    crate::knowledge::distance::normalize(&mut v);
    v
}

impl Transport for MockBackend {
    fn send(
        &self,
        route: Route,
        _idempotency_key: &str,
        body: &Value,
        _timeout: Duration,
    ) -> Result<Value, TransportError> {
        self.handle(route.path(), body).map_err(|f| {
            if f.status == 504 || f.code == "timeout" {
                TransportError::Timeout
            } else {
                TransportError::Status {
                    status: f.status,
                    code: f.code,
                    message: f.message,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn versioned(mut v: Value) -> Value {
        v["version"] = json!(PROTOCOL_VERSION);
        v
    }

    #[test]
    fn subset_matching() {
        let body = json!({"a": 1, "trace": {"branch": 2, "attempt": 0}, "xs": [1, 2]});
        assert!(json_subset(&json!({"trace": {"branch": 2}}), &body));
        assert!(!json_subset(&json!({"trace": {"branch": 1}}), &body));
        assert!(!json_subset(&json!({"missing": 1}), &body));
        assert!(json_subset(&json!({"xs": [1, 2]}), &body));
        assert!(!json_subset(&json!({"xs": [1]}), &body));
    }

    #[test]
    fn embed_is_deterministic_unit_vector() {
        let m = MockBackend::new(MockScript::default());
        let req = versioned(json!({"text": "a quiet beach"}));
        let a = m.handle("/embed", &req).unwrap();
        let b = m.handle("/embed", &req).unwrap();
        assert_eq!(a, b);
        let v: Vec<f64> = serde_json::from_value(a["vector"].clone()).unwrap();
        assert_eq!(v.len(), 8);
        assert!((crate::knowledge::distance::norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rules_take_precedence_and_faults_surface() {
        let script = MockScript::default()
            .rule(MockRule::fail(Route::Embed, Some(json!({"text": "boom"})), 500, "injected"));
        let m = MockBackend::new(script);
        let err = m.handle("/embed", &versioned(json!({"text": "boom"}))).unwrap_err();
        assert_eq!(err.status, 500);
        assert!(m.handle("/embed", &versioned(json!({"text": "fine"}))).is_ok());
        assert_eq!(m.requests().len(), 2);
    }

    #[test]
    fn rejects_missing_version_and_unknown_route() {
        let m = MockBackend::new(MockScript::default());
        assert_eq!(m.handle("/embed", &json!({"text": "x"})).unwrap_err().code, "unsupported_version");
        assert_eq!(m.handle("/nope", &json!({})).unwrap_err().status, 404);
    }

    #[test]
    fn script_validation() {
        let mut s = MockScript::default();
        s.rules.push(MockRule {
            route: "/edit".into(),
            content_hash: None,
            matches: None,
            response: None,
            error: None,
        });
        assert!(s.validate().is_err());
        s.rules[0].route = "/nowhere".into();
        assert!(s.validate().is_err());
        assert!(MockScript::default().validate().is_ok());
    }
}
