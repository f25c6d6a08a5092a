//! External-service boundary: embedding provider and role-tagged LLM clients.
//!
//! Live clients speak one uniform JSON wire shape (`{"model","role","prompt"}`
//! in, `{"text"}` out). Every role also has a deterministic offline mock, so
//! pipelines run reproducibly with `--mock`.

pub mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{FixedResponder, MockEmbedder, MockExtractor, MockGenerator, MockJudge};

/// Environment variable holding the API credential for live endpoints.
pub const API_KEY_ENV: &str = "PATHFORGE_API_KEY";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
}

/// Embedding provider contract: deterministic unit-norm vectors of a fixed
/// dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Cosine similarity of two equal-dimension, nonzero vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, ServiceError> {
    if u.len() != v.len() {
        return Err(ServiceError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ServiceError::ZeroVector);
    }
    Ok(dot / (nu * nv))
}

/// Embed both texts with `embedder` and return their cosine similarity,
/// checking the provider's dimension contract.
pub fn embedded_cosine(embedder: &dyn Embedder, a: &str, b: &str) -> Result<f64, ServiceError> {
    let va = checked_embed(embedder, a)?;
    let vb = checked_embed(embedder, b)?;
    cosine_similarity(&va, &vb)
}

/// Embed one text, verifying the vector length against the declared dimension.
pub fn checked_embed(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>, ServiceError> {
    let v = embedder.embed(text);
    if v.len() != embedder.dimension() {
        return Err(ServiceError::DimensionMismatch {
            expected: embedder.dimension(),
            got: v.len(),
        });
    }
    Ok(v)
}

/// Which external model a client stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Extractor,
    Generator,
    Judge,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Extractor => "extractor",
            Role::Generator => "generator",
            Role::Judge => "judge",
        }
    }
}

/// Connection settings for one role-tagged client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_inflight() -> usize {
    4
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_name: String::new(),
            timeout_secs: default_timeout_secs(),
            max_inflight: default_max_inflight(),
        }
    }
}

/// Deterministic stand-in for a live endpoint.
pub trait MockResponder: Send + Sync {
    fn respond(&self, role: Role, prompt: &str) -> Result<String, ServiceError>;
}

enum Transport {
    Http(reqwest::blocking::Client),
    Mock(Arc<dyn MockResponder>),
}

/// A shareable handle to one external LLM role. Concurrent calls are allowed
/// up to `max_inflight`; excess callers block until a slot frees up.
pub struct LlmClient {
    role: Role,
    config: ClientConfig,
    transport: Transport,
    gate: Semaphore,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    role: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireReply {
    text: Option<String>,
}

const RETRY_ATTEMPTS: usize = 3;
const BACKOFF_MILLIS: [u64; 3] = [500, 1000, 2000];

impl LlmClient {
    /// Live HTTP client for `role`.
    pub fn live(role: Role, config: ClientConfig) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client construction");
        let gate = Semaphore::new(config.max_inflight.max(1));
        Self {
            role,
            config,
            transport: Transport::Http(http),
            gate,
        }
    }

    /// Mock client backed by an explicit responder.
    pub fn mock_with(role: Role, responder: Arc<dyn MockResponder>, max_inflight: usize) -> Self {
        Self {
            role,
            config: ClientConfig {
                endpoint: "mock://".to_string(),
                model_name: format!("mock-{}", role.as_str()),
                max_inflight: max_inflight.max(1),
                ..ClientConfig::default()
            },
            transport: Transport::Mock(responder),
            gate: Semaphore::new(max_inflight.max(1)),
        }
    }

    /// Mock client with the default deterministic rule set for `role`.
    pub fn mock(role: Role) -> Self {
        let responder: Arc<dyn MockResponder> = match role {
            Role::Extractor => Arc::new(MockExtractor::default()),
            Role::Generator => Arc::new(MockGenerator),
            Role::Judge => Arc::new(MockJudge),
        };
        Self::mock_with(role, responder, default_max_inflight())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Send one prompt and return the reply text.
    pub fn request(&self, prompt: &str) -> Result<String, ServiceError> {
        let _permit = self.gate.acquire();
        match &self.transport {
            Transport::Mock(responder) => responder.respond(self.role, prompt),
            Transport::Http(http) => self.request_live(http, prompt),
        }
    }

    fn request_live(
        &self,
        http: &reqwest::blocking::Client,
        prompt: &str,
    ) -> Result<String, ServiceError> {
        let body = WireRequest {
            model: &self.config.model_name,
            role: self.role.as_str(),
            prompt,
        };
        let mut last_err = String::new();
        for attempt in 0..RETRY_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_MILLIS[attempt - 1]));
            }
            let mut req = http.post(&self.config.endpoint).json(&body);
            if let Ok(key) = std::env::var(API_KEY_ENV) {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    if !resp.status().is_success() {
                        last_err = format!("status {}", resp.status());
                        continue;
                    }
                    let reply: WireReply = resp
                        .json()
                        .map_err(|e| ServiceError::MalformedReply(e.to_string()))?;
                    return reply
                        .text
                        .ok_or_else(|| ServiceError::MalformedReply("missing \"text\" field".into()));
                }
                Err(e) if e.is_timeout() => {
                    return Err(ServiceError::Timeout(e.to_string()));
                }
                Err(e) => {
                    last_err = e.to_string();
                }
            }
        }
        Err(ServiceError::Transport {
            attempts: RETRY_ATTEMPTS,
            message: last_err,
        })
    }
}

/// Send `prompt` through `client` (the uniform request entry point).
pub fn llm_request(client: &LlmClient, prompt: &str) -> Result<String, ServiceError> {
    client.request(prompt)
}

/// Counting semaphore bounding concurrent in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Self {
            permits: Mutex::new(count),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut permits = self.0.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.0.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cosine_identities() {
        let u = [1.0, 0.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&u, &[0.0, 1.0]).unwrap()).abs() < 1e-12);
        let s = 1.0 / 2.0_f64.sqrt();
        let got = cosine_similarity(&[1.0, 0.0], &[s, s]).unwrap();
        assert!((got - 2.0_f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn cosine_rejects_bad_inputs() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(ServiceError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0], &[1.0]),
            Err(ServiceError::ZeroVector)
        ));
    }

    #[test]
    fn mock_judge_scores_identical_answers_five() {
        let judge = LlmClient::mock(Role::Judge);
        let prompt = crate::prompts::answer_score_prompt("benign nevus", "benign nevus");
        assert_eq!(llm_request(&judge, &prompt).unwrap(), "5");
    }

    #[test]
    fn reply_without_text_field_is_malformed() {
        // One-shot local server answering valid JSON without a "text" key.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            use std::io::{Read, Write};
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            let body = r#"{"unexpected": 1}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
        });
        let client = LlmClient::live(
            Role::Judge,
            ClientConfig {
                endpoint: format!("http://{addr}/"),
                model_name: "m".to_string(),
                timeout_secs: 5,
                max_inflight: 1,
            },
        );
        let result = client.request("ping");
        server.join().unwrap();
        assert!(matches!(result, Err(ServiceError::MalformedReply(_))));
    }

    #[test]
    fn live_unreachable_endpoint_is_transport_after_retries() {
        let client = LlmClient::live(
            Role::Judge,
            ClientConfig {
                endpoint: "http://127.0.0.1:1/never".to_string(),
                model_name: "m".to_string(),
                timeout_secs: 1,
                max_inflight: 1,
            },
        );
        match client.request("ping") {
            Err(ServiceError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    struct CountingResponder {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl MockResponder for CountingResponder {
        fn respond(&self, _role: Role, _prompt: &str) -> Result<String, ServiceError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".to_string())
        }
    }

    #[test]
    fn inflight_cap_is_enforced() {
        let responder = Arc::new(CountingResponder {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let client = Arc::new(LlmClient::mock_with(Role::Judge, responder.clone(), 3));
        std::thread::scope(|scope| {
            for _ in 0..16 {
                let c = Arc::clone(&client);
                scope.spawn(move || c.request("x").unwrap());
            }
        });
        assert!(responder.peak.load(Ordering::SeqCst) <= 3);
        assert!(responder.peak.load(Ordering::SeqCst) >= 1);
    }
}
