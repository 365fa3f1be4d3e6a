use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::json;
use tracing::warn;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage, UsageCounter};

pub const API_KEY_ENV: &str = "CONSULT_API_KEY";
pub const BASE_URL_ENV: &str = "CONSULT_BASE_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Exponential backoff with full jitter: before attempt `k + 1` the client
/// sleeps a uniform draw from `[0, base * factor^(k-1)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep that follows failed attempt number `attempt` (1-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(16);
        self.base * self.factor.saturating_pow(exp)
    }

    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let cap = self.ceiling(attempt);
        if cap.is_zero() {
            return cap;
        }
        Duration::from_nanos(rng.gen_range(0..=cap.as_nanos() as u64))
    }
}

/// Client for an OpenAI-compatible `/v1/chat/completions` endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    usage: UsageCounter,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        Self::with_options(base_url, api_key, RetryPolicy::default(), DEFAULT_TIMEOUT)
    }

    pub fn with_options(
        base_url: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        if base_url.trim().is_empty() {
            return Err(BackendError::Config("empty base URL".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/v1/chat/completions", base_url.trim().trim_end_matches('/')),
            api_key,
            retry,
            usage: UsageCounter::default(),
        })
    }

    /// Reads `CONSULT_BASE_URL` (required) and `CONSULT_API_KEY` (optional).
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(BASE_URL_ENV)
            .map_err(|_| BackendError::Config(format!("{BASE_URL_ENV} is not set")))?;
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(&base, key)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn body(request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(String, WireUsage), AttemptError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            }));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(BackendError::MalformedResponse(e.to_string())))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                AttemptError::Fatal(BackendError::MalformedResponse(
                    "missing choices[0].message.content".into(),
                ))
            })?;
        Ok((content, wire.usage.unwrap_or_default()))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = Self::body(request);
        let started = Instant::now();
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(&body) {
                Ok((content, usage)) => {
                    let response = ChatResponse {
                        content,
                        prompt_tokens: usage.prompt_tokens,
                        completion_tokens: usage.completion_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                    };
                    self.usage.record(&response);
                    return Ok(response);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => {
                    warn!(attempt, error = %msg, "chat completion attempt failed");
                    last = msg;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.delay(attempt, &mut rng));
                    }
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }

    fn usage_totals(&self) -> Usage {
        self.usage.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, ModelSettings};
    use rand::SeedableRng;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    type Seen = Arc<Mutex<Vec<(String, String)>>>;

    /// Serves one canned (status, body) per connection and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, Seen) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2
                    .lock()
                    .unwrap()
                    .push((auth, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), seen)
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 5}
        })
        .to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 5,
            base: Duration::from_millis(5),
            factor: 2,
        }
    }

    fn request() -> ChatRequest {
        let settings = ModelSettings {
            model_name: "qwen-max".into(),
            temperature: 0.0,
            seed: Some(7),
            max_tokens: Some(64),
        };
        ChatRequest::new(&settings, vec![ChatMessage::system("s"), ChatMessage::user("u")])
    }

    #[test]
    fn retries_429_then_succeeds() {
        let (url, seen) = serve(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("hello")),
        ]);
        let b = HttpBackend::with_options(&url, Some("sk-test".into()), fast_retry(), DEFAULT_TIMEOUT)
            .unwrap();
        let r = b.complete(&request()).unwrap();
        assert_eq!(r.content, "hello");
        assert_eq!(r.prompt_tokens, 12);
        assert_eq!(r.completion_tokens, 5);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[0].0.ends_with("Bearer sk-test"), "{:?}", seen[0].0);
        let body: serde_json::Value = serde_json::from_str(&seen[2].1).unwrap();
        assert_eq!(body["model"], "qwen-max");
        assert_eq!(body["seed"], 7);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(
            b.usage_totals(),
            Usage {
                requests: 1,
                prompt_tokens: 12,
                completion_tokens: 5
            }
        );
    }

    #[test]
    fn gives_up_after_five_attempts() {
        let (url, seen) = serve(vec![(503, "{}".into()); 5]);
        let b = HttpBackend::with_options(&url, None, fast_retry(), DEFAULT_TIMEOUT).unwrap();
        let err = b.complete(&request()).unwrap_err();
        assert!(matches!(err, BackendError::RetriesExhausted { attempts: 5, .. }));
        assert_eq!(seen.lock().unwrap().len(), 5);
        assert_eq!(b.usage_totals().requests, 0);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(400, "bad".into())]);
        let b = HttpBackend::with_options(&url, None, fast_retry(), DEFAULT_TIMEOUT).unwrap();
        let err = b.complete(&request()).unwrap_err();
        assert_eq!(
            err,
            BackendError::Status {
                status: 400,
                body: "bad".into()
            }
        );
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn endpoint_joins_base_url() {
        let b = HttpBackend::new("http://localhost:9/", None).unwrap();
        assert_eq!(b.endpoint(), "http://localhost:9/v1/chat/completions");
    }

    #[test]
    fn backoff_delay_is_bounded() {
        let p = RetryPolicy::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for attempt in 1..p.max_attempts {
            for _ in 0..200 {
                let d = p.delay(attempt, &mut rng);
                assert!(d <= p.ceiling(attempt));
                assert!(d <= p.base * 16);
            }
        }
        assert_eq!(p.ceiling(1), Duration::from_secs(1));
        assert_eq!(p.ceiling(4), Duration::from_secs(8));
    }
}
