//! Live HTTP clients for the chat and embedding roles.
//!
//! The chat client speaks the chat-completions JSON shape; the embedder
//! speaks the embeddings shape. Auth is a bearer token taken from the
//! `CCVQA_API_KEY` environment variable unless set explicitly.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{normalize, ChatClient, ChatRequest, EmbeddingProvider, Part, Role};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "CCVQA_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_retries: usize,
    pub backoff: Duration,
    pub timeout: Duration,
    /// Requests per second; `None` disables client-side rate limiting.
    pub rate_limit: Option<f64>,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_retries: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(60),
            rate_limit: None,
        }
    }
}

/// Client-side token bucket; `acquire` blocks until a token is available.
struct TokenBucket {
    tokens: f64,
    capacity: f64,
    rate: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        TokenBucket {
            tokens: 1.0,
            capacity: rate.max(1.0),
            rate,
            last: Instant::now(),
        }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        self.tokens =
            (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate).min(self.capacity);
        self.last = now;
    }

    fn wait_time(&mut self) -> Option<Duration> {
        self.refill();
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }
}

struct HttpClient {
    cfg: HttpConfig,
    http: reqwest::blocking::Client,
    bucket: Option<Mutex<TokenBucket>>,
}

impl HttpClient {
    fn new(cfg: HttpConfig) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .expect("failed to build HTTP client");
        let bucket = cfg.rate_limit.map(|r| Mutex::new(TokenBucket::new(r)));
        HttpClient { cfg, http, bucket }
    }

    fn throttle(&self) {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = bucket.lock().unwrap().wait_time();
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
    }

    /// POST `body`, retrying transport failures and 5xx/429 with exponential
    /// backoff. Other non-2xx statuses fail immediately.
    fn post_json(&self, body: &Value) -> Result<Value> {
        let attempts = self.cfg.max_retries + 1;
        let mut last_err = Error::Timeout { attempts };
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * (1 << (attempt - 1)) as u32);
            }
            self.throttle();
            let mut req = self.http.post(&self.cfg.endpoint).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| Error::Transport(e.to_string()));
                    }
                    let err = Error::Http {
                        status: status.as_u16(),
                        body: resp.text().unwrap_or_default(),
                    };
                    // Retry server-side and rate-limit statuses only.
                    if status.is_server_error() || status.as_u16() == 429 {
                        log::warn!("attempt {}/{attempts} failed: {err}", attempt + 1);
                        last_err = err;
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => {
                    log::warn!("attempt {}/{attempts} transport failure: {e}", attempt + 1);
                    last_err = if e.is_timeout() {
                        Error::Timeout { attempts }
                    } else {
                        Error::Transport(e.to_string())
                    };
                }
            }
        }
        Err(last_err)
    }
}

/// Chat-completions client.
pub struct LiveChatClient {
    client: HttpClient,
}

impl LiveChatClient {
    pub fn new(cfg: HttpConfig) -> Self {
        LiveChatClient {
            client: HttpClient::new(cfg),
        }
    }

    fn request_body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                };
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text(t) => json!({"type": "text", "text": t}),
                        Part::ImageRef(r) => {
                            json!({"type": "image_url", "image_url": {"url": r}})
                        }
                    })
                    .collect();
                json!({"role": role, "content": content})
            })
            .collect();
        let mut body = json!({
            "model": self.client.cfg.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatClient for LiveChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        let body = self.request_body(request);
        let resp = self.client.post_json(&body)?;
        let content = resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or(Error::EmptyResponse)?;
        if content.is_empty() {
            return Err(Error::EmptyResponse);
        }
        Ok(content)
    }
}

/// Embeddings client. Responses are validated against the configured
/// dimension and unit-normalized.
pub struct LiveEmbedder {
    client: HttpClient,
    dimension: usize,
}

impl LiveEmbedder {
    pub fn new(cfg: HttpConfig, dimension: usize) -> Self {
        LiveEmbedder {
            client: HttpClient::new(cfg),
            dimension,
        }
    }

    fn embed(&self, input: &str) -> Result<Vec<f64>> {
        if input.is_empty() {
            return Err(Error::EmptyInput("embedding input"));
        }
        let body = json!({"input": [input], "model": self.client.cfg.model});
        let resp = self.client.post_json(&body)?;
        let raw = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::Embedding("response missing data[0].embedding".into()))?;
        let mut v: Vec<f64> = raw.iter().filter_map(Value::as_f64).collect();
        if v.len() != self.dimension {
            return Err(Error::Embedding(format!(
                "expected dimension {}, got {}",
                self.dimension,
                v.len()
            )));
        }
        normalize(&mut v);
        Ok(v)
    }
}

impl EmbeddingProvider for LiveEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.embed(text)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        // The embedding service resolves image references itself.
        self.embed(image_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server: answers `responses` in order, one per
    /// connection, and records the request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(split) = find_header_end(&buf) {
                        let headers = String::from_utf8_lossy(&buf[..split]).to_string();
                        let len = content_length(&headers);
                        while buf.len() < split + len {
                            let n = stream.read(&mut chunk).unwrap();
                            buf.extend_from_slice(&chunk[..n]);
                        }
                        bodies.push(String::from_utf8_lossy(&buf[split..split + len]).to_string());
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    fn find_header_end(buf: &[u8]) -> Option<usize> {
        buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
    }

    fn content_length(headers: &str) -> usize {
        headers
            .lines()
            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::to_string))
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0)
    }

    fn cfg(endpoint: &str) -> HttpConfig {
        HttpConfig {
            endpoint: endpoint.into(),
            model: "test-model".into(),
            api_key: Some("k".into()),
            max_retries: 2,
            backoff: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
            rate_limit: None,
        }
    }

    #[test]
    fn chat_round_trip_and_body_shape() {
        let reply = r#"{"choices":[{"message":{"content":"Amanita"}}]}"#;
        let (addr, handle) = serve(vec![(200, reply.into())]);
        let client = LiveChatClient::new(cfg(&addr));
        let req = ChatRequest::simple("what mushroom is this?", Some("http://img/1.jpg"));
        assert_eq!(client.chat(&req).unwrap(), "Amanita");

        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"][0]["type"], "image_url");
        assert_eq!(
            sent["messages"][0]["content"][0]["image_url"]["url"],
            "http://img/1.jpg"
        );
        assert_eq!(sent["messages"][0]["content"][1]["type"], "text");
        assert_eq!(
            sent["messages"][0]["content"][1]["text"],
            "what mushroom is this?"
        );
    }

    #[test]
    fn chat_retries_transient_500_then_succeeds() {
        let reply = r#"{"choices":[{"message":{"content":"ok"}}]}"#;
        let (addr, handle) = serve(vec![(500, "oops".into()), (200, reply.into())]);
        let client = LiveChatClient::new(cfg(&addr));
        let req = ChatRequest::simple("q", None);
        assert_eq!(client.chat(&req).unwrap(), "ok");
        assert_eq!(handle.join().unwrap().len(), 2);
    }

    #[test]
    fn chat_non_retryable_status_fails_fast() {
        let (addr, handle) = serve(vec![(401, "no".into())]);
        let client = LiveChatClient::new(cfg(&addr));
        let req = ChatRequest::simple("q", None);
        match client.chat(&req) {
            Err(Error::Http { status: 401, .. }) => {}
            other => panic!("expected 401 error, got {other:?}"),
        }
        assert_eq!(handle.join().unwrap().len(), 1);
    }

    #[test]
    fn embedder_normalizes_and_checks_dimension() {
        let reply = r#"{"data":[{"embedding":[3.0, 4.0]}]}"#;
        let (addr, _handle) = serve(vec![(200, reply.into())]);
        let embedder = LiveEmbedder::new(cfg(&addr), 2);
        let v = embedder.embed_text("hello").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12);
        assert!((v[1] - 0.8).abs() < 1e-12);

        let reply = r#"{"data":[{"embedding":[1.0, 2.0, 3.0]}]}"#;
        let (addr, _handle) = serve(vec![(200, reply.into())]);
        let embedder = LiveEmbedder::new(cfg(&addr), 2);
        assert!(matches!(
            embedder.embed_text("hello"),
            Err(Error::Embedding(_))
        ));
    }

    #[test]
    fn chat_times_out_against_silent_server() {
        // accept the connection but never answer
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let keep_open = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(1500));
            drop(stream);
        });
        let client = LiveChatClient::new(HttpConfig {
            timeout: Duration::from_millis(100),
            max_retries: 0,
            ..cfg(&addr)
        });
        let req = ChatRequest::simple("q", None);
        match client.chat(&req) {
            Err(Error::Timeout { attempts: 1 }) => {}
            other => panic!("expected timeout, got {other:?}"),
        }
        keep_open.join().unwrap();
    }

    #[test]
    fn token_bucket_spaces_requests() {
        let mut bucket = TokenBucket::new(1000.0);
        assert!(bucket.wait_time().is_none());
        // Immediately draining again may or may not wait, but the wait is
        // bounded by one token's refill period.
        if let Some(d) = bucket.wait_time() {
            assert!(d <= Duration::from_millis(2));
        }
    }
}
