use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling and capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Client-side throttle consulted before each request.
pub trait TokenBudget: Send + Sync {
    fn acquire(&self, estimated_tokens: u64);
}

/// Caps the estimated tokens sent within any fixed one-minute window.
pub struct PerMinuteBudget {
    limit: u64,
    window: Mutex<(Instant, u64)>,
}

impl PerMinuteBudget {
    pub fn new(tokens_per_minute: u64) -> Self {
        PerMinuteBudget {
            limit: tokens_per_minute.max(1),
            window: Mutex::new((Instant::now(), 0)),
        }
    }
}

impl TokenBudget for PerMinuteBudget {
    fn acquire(&self, estimated_tokens: u64) {
        let minute = Duration::from_secs(60);
        loop {
            let wait = {
                let mut w = self.window.lock();
                if w.0.elapsed() >= minute {
                    *w = (Instant::now(), 0);
                }
                // A single oversized request is let through on a fresh window.
                if w.1 == 0 || w.1 + estimated_tokens <= self.limit {
                    w.1 += estimated_tokens;
                    return;
                }
                minute.saturating_sub(w.0.elapsed())
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_tokens: Option<u32>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            max_tokens: None,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    budget: Option<Box<dyn TokenBudget>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
            budget: None,
        })
    }

    pub fn with_budget(mut self, budget: Box<dyn TokenBudget>) -> Self {
        self.budget = Some(budget);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_message},
                {"role": "user", "content": request.user_message},
            ],
        });
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Refusal {
                status: status.as_u16(),
                message: truncate(&text, 300),
            }));
        }
        extract_content(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choice = &v["choices"][0];
    if choice.is_null() {
        return Err(BackendError::Protocol("no choices in response".into()));
    }
    if let Some(r) = choice["message"]["refusal"].as_str() {
        if !r.is_empty() {
            return Err(BackendError::Refusal {
                status: 200,
                message: truncate(r, 300),
            });
        }
    }
    match choice["message"]["content"].as_str() {
        Some(c) if !c.trim().is_empty() => Ok(c.to_string()),
        _ => Err(BackendError::EmptyResponse),
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        if let Some(b) = &self.budget {
            // Rough estimate: four characters per token plus the reply.
            let chars = request.system_message.len() + request.user_message.len();
            b.acquire((chars / 4) as u64 + u64::from(self.config.max_tokens.unwrap_or(512)));
        }
        let body = self.body(request);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(self.config.retry.delay(attempt));
                    }
                }
            }
        }
        Err(BackendError::Network {
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex as StdMutex};

    /// Serves the canned (status, body) pairs in order, one per connection,
    /// and records each request body.
    fn stub(responses: Vec<(u16, String)>) -> (String, Arc<StdMutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(StdMutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
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
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), seen)
    }

    fn backend(url: String) -> HttpBackend {
        let config = HttpConfig {
            base_url: url,
            timeout_secs: 5,
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 1,
                max_delay_ms: 2,
            },
            max_tokens: None,
        };
        HttpBackend::new(config, Some("k".into())).unwrap()
    }

    fn req() -> CompletionRequest {
        CompletionRequest {
            system_message: "sys".into(),
            user_message: "usr".into(),
            model_name: "gpt-4o".into(),
            temperature: 0.7,
            completion_index: 0,
        }
    }

    fn ok(content: &str) -> (u16, String) {
        (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
    }

    #[test]
    fn wire_format_and_success() {
        let (url, seen) = stub(vec![ok("Label: G")]);
        assert_eq!(backend(url).complete(&req()).unwrap(), "Label: G");
        let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "usr");
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let (url, seen) = stub(vec![(503, "{}".into()), (429, "{}".into()), ok("fine")]);
        assert_eq!(backend(url).complete(&req()).unwrap(), "fine");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let (url, _) = stub(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        match backend(url).complete(&req()) {
            Err(BackendError::Network { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn client_error_is_refusal_without_retry() {
        let (url, seen) = stub(vec![(400, "{\"error\":\"bad\"}".into())]);
        assert!(matches!(backend(url).complete(&req()), Err(BackendError::Refusal { status: 400, .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn empty_content_is_error() {
        let (url, _) = stub(vec![ok("  ")]);
        assert!(matches!(backend(url).complete(&req()), Err(BackendError::EmptyResponse)));
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(3), Duration::from_millis(400));
        assert_eq!(p.delay(9), Duration::from_millis(1000));
    }

    #[test]
    fn budget_admits_within_limit() {
        let b = PerMinuteBudget::new(100);
        let t = Instant::now();
        b.acquire(60);
        b.acquire(40);
        assert!(t.elapsed() < Duration::from_secs(1));
    }
}
