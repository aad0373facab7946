//! Chat-completions client.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{GatewayError, Judge, JudgeRequest, JudgeResponse, Usage};
use crate::io::{sha256_fields, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Other(String),
}

/// Minimal HTTP seam so the client can be exercised without a network.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let mut req = ureq::post(url)
            .timeout(timeout)
            .set("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_string(body) {
            Ok(resp) => Ok(HttpReply {
                status: resp.status(),
                body: resp
                    .into_string()
                    .map_err(|e| TransportError::Other(e.to_string()))?,
            }),
            Err(ureq::Error::Status(status, resp)) => Ok(HttpReply {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Other(msg))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Token bucket limiting requests per minute.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = requests.max(1) as f64;
        Self {
            capacity,
            per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a request slot is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedResponse {
    text: String,
    usage: Usage,
}

/// Content-addressed response cache: one JSON file per request hash.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn get(&self, key: &str) -> Option<CachedResponse> {
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn put(&self, key: &str, entry: &CachedResponse) -> std::io::Result<()> {
        write_atomic(
            &self.path(key),
            &serde_json::to_vec(entry).expect("serializable"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub ts: String,
    pub request_hash: String,
    pub stage: String,
    pub model: String,
    pub latency_ms: u64,
    pub usage: Usage,
}

/// Append-only JSONL log of backend calls.
#[derive(Debug)]
pub struct Transcript {
    path: PathBuf,
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &TranscriptEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(entry).expect("serializable");
        line.push(b'\n');
        let mut f = self.file.lock().expect("transcript poisoned");
        f.write_all(&line)?;
        f.flush()
    }
}

/// Cache key over the fields that determine a completion.
pub fn request_hash(req: &JudgeRequest) -> String {
    let temp = format!("{:.6}", req.temperature);
    sha256_fields([
        req.model.as_bytes(),
        temp.as_bytes(),
        req.system_text.as_bytes(),
        req.user_text.as_bytes(),
    ])
}

pub struct ChatClient {
    transport: Box<dyn Transport>,
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    cache: Option<ResponseCache>,
    transcript: Option<Transcript>,
    backend_calls: AtomicU64,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.endpoint)
            .field("retry", &self.retry)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

pub struct ChatClientBuilder {
    base_url: String,
    api_key: Option<String>,
    transport: Box<dyn Transport>,
    timeout: Duration,
    retry: RetryPolicy,
    requests_per_minute: Option<u32>,
    cache_dir: Option<PathBuf>,
    transcript: Option<PathBuf>,
}

impl ChatClientBuilder {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            transport: Box::new(UreqTransport),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            cache_dir: None,
            transcript: None,
        }
    }

    pub fn api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Reads the key from the named environment variable.
    pub fn api_key_from_env(self, var: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(var)
            .map_err(|_| GatewayError::NotConfigured(format!("environment variable {var} is not set")))?;
        Ok(self.api_key(Some(key)))
    }

    pub fn transport(mut self, transport: impl Transport + 'static) -> Self {
        self.transport = Box::new(transport);
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn requests_per_minute(mut self, rpm: Option<u32>) -> Self {
        self.requests_per_minute = rpm;
        self
    }

    pub fn cache_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.cache_dir = dir;
        self
    }

    pub fn transcript(mut self, path: Option<PathBuf>) -> Self {
        self.transcript = path;
        self
    }

    pub fn build(self) -> Result<ChatClient, GatewayError> {
        if self.base_url.is_empty() {
            return Err(GatewayError::NotConfigured("api.base_url is empty".into()));
        }
        let transcript = self.transcript.map(Transcript::open).transpose()?;
        Ok(ChatClient {
            transport: self.transport,
            endpoint: format!("{}/chat/completions", self.base_url.trim_end_matches('/')),
            api_key: self.api_key,
            timeout: self.timeout,
            retry: self.retry,
            limiter: self.requests_per_minute.map(RateLimiter::per_minute),
            cache: self.cache_dir.map(ResponseCache::new),
            transcript,
            backend_calls: AtomicU64::new(0),
        })
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn parse_completion(body: &str) -> Result<(String, Usage), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON body: {e}"))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("response has no choices[0].message.content")?
        .to_owned();
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok((text, usage))
}

impl ChatClient {
    pub fn builder(base_url: impl Into<String>) -> ChatClientBuilder {
        ChatClientBuilder::new(base_url)
    }

    /// Requests actually sent to the transport, including retries.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    fn body(req: &JudgeRequest) -> String {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_text}));
        }
        messages.push(json!({"role": "user", "content": req.user_text}));
        json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
        .to_string()
    }
}

impl Judge for ChatClient {
    fn complete(&self, req: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        req.validate()?;
        let key = request_hash(req);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(JudgeResponse {
                text: hit.text,
                usage: hit.usage,
                latency_ms: 0,
                cached: true,
                attempts: 0,
            });
        }

        let body = Self::body(req);
        let started = Instant::now();
        let mut attempts = 0u32;
        let (text, usage) = loop {
            if attempts > 0 {
                std::thread::sleep(self.retry.delay(attempts));
            }
            attempts += 1;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            let failure = match self
                .transport
                .post_json(&self.endpoint, self.api_key.as_deref(), &body, self.timeout)
            {
                Ok(HttpReply { status: 200..=299, body }) => match parse_completion(&body) {
                    Ok(done) => break done,
                    Err(msg) => {
                        return Err(GatewayError::Upstream {
                            message: msg,
                            attempts,
                        })
                    }
                },
                Ok(HttpReply { status: status @ (401 | 403), .. }) => {
                    return Err(GatewayError::Auth { status })
                }
                Ok(HttpReply { status, body }) if is_transient(status) => {
                    format!("HTTP {status}: {}", body.chars().take(200).collect::<String>())
                }
                Ok(HttpReply { status, body }) => {
                    return Err(GatewayError::Upstream {
                        message: format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()),
                        attempts,
                    })
                }
                Err(e) => e.to_string(),
            };
            log::warn!("attempt {attempts} against {} failed: {failure}", self.endpoint);
            if attempts > self.retry.max_retries {
                return Err(GatewayError::Upstream {
                    message: failure,
                    attempts,
                });
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        if attempts > 1 {
            log::info!("request {} succeeded after {attempts} attempts", &key[..12]);
        }

        if let Some(cache) = &self.cache {
            cache.put(&key, &CachedResponse { text: text.clone(), usage })?;
        }
        if let Some(t) = &self.transcript {
            t.append(&TranscriptEntry {
                ts: chrono::Utc::now().to_rfc3339(),
                request_hash: key,
                stage: req
                    .stage()
                    .map(|(s, f)| format!("{}_{}", s.code(), f.code()))
                    .unwrap_or_else(|| "unknown".into()),
                model: req.model.clone(),
                latency_ms,
                usage,
            })?;
        }
        Ok(JudgeResponse {
            text,
            usage,
            latency_ms,
            cached: false,
            attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::Arc;

    type Seen = (String, Option<String>, String);

    /// Replays scripted replies and records every request.
    #[derive(Clone, Default)]
    struct Scripted {
        replies: Arc<Mutex<VecDeque<Result<HttpReply, TransportError>>>>,
        /// (url, bearer, body)
        seen: Arc<Mutex<Vec<Seen>>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpReply, TransportError>>) -> Self {
            Self {
                replies: Arc::new(Mutex::new(replies.into())),
                seen: Arc::default(),
            }
        }
        fn calls(&self) -> usize {
            self.seen.lock().unwrap().len()
        }
    }

    impl Transport for Scripted {
        fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &str,
            _timeout: Duration,
        ) -> Result<HttpReply, TransportError> {
            self.seen
                .lock()
                .unwrap()
                .push((url.into(), bearer.map(Into::into), body.into()));
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Ok(ok_reply("default")))
        }
    }

    fn ok_reply(text: &str) -> HttpReply {
        HttpReply {
            status: 200,
            body: json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 3}
            })
            .to_string(),
        }
    }

    fn status(code: u16) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: "err".into(),
        })
    }

    fn fast_retry(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    fn request(user: &str) -> JudgeRequest {
        JudgeRequest {
            system_text: "sys".into(),
            user_text: format!("#STAGE:FE_MF\n{user}"),
            temperature: 0.4,
            model: "gpt-3.5-turbo".into(),
            max_tokens: 64,
        }
    }

    fn client(t: &Scripted) -> ChatClientBuilder {
        ChatClient::builder("http://stub/v1/")
            .transport(t.clone())
            .retry(fast_retry(3))
            .api_key(Some("secret".into()))
    }

    #[test]
    fn returns_text_and_sends_openai_body() {
        let t = Scripted::new(vec![Ok(ok_reply("ok"))]);
        let c = client(&t).build().unwrap();
        let r = c.complete(&request("hello")).unwrap();
        assert_eq!(r.text, "ok");
        assert!(!r.cached);
        assert_eq!(r.usage.prompt_tokens, 11);
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].0, "http://stub/v1/chat/completions");
        assert_eq!(seen[0].1.as_deref(), Some("secret"));
        let body: Value = serde_json::from_str(&seen[0].2).unwrap();
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["temperature"], 0.4);
        assert_eq!(body["max_tokens"], 64);
    }

    #[test]
    fn cache_hit_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![Ok(ok_reply("ok"))]);
        let c = client(&t).cache_dir(Some(dir.path().into())).build().unwrap();
        let first = c.complete(&request("q")).unwrap();
        let second = c.complete(&request("q")).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(second.text, "ok");
        assert_eq!(t.calls(), 1);
        assert_eq!(second.attempts, 0);
    }

    #[test]
    fn cache_key_covers_temperature() {
        let mut a = request("q");
        let h1 = request_hash(&a);
        a.temperature = 0.5;
        assert_ne!(h1, request_hash(&a));
    }

    #[test]
    fn retries_429_then_succeeds() {
        let t = Scripted::new(vec![status(429), status(429), Ok(ok_reply("fine"))]);
        let c = client(&t).build().unwrap();
        let r = c.complete(&request("q")).unwrap();
        assert_eq!(r.text, "fine");
        assert_eq!(r.attempts, 3);
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn retries_5xx_and_timeouts_until_budget() {
        let t = Scripted::new(vec![
            status(503),
            Err(TransportError::Timeout),
            status(500),
            status(502),
            Ok(ok_reply("late")),
        ]);
        let c = client(&t).build().unwrap();
        match c.complete(&request("q")) {
            Err(GatewayError::Upstream { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls(), 4);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        for code in [401, 403] {
            let t = Scripted::new(vec![status(code), Ok(ok_reply("never"))]);
            let c = client(&t).build().unwrap();
            assert!(matches!(
                c.complete(&request("q")),
                Err(GatewayError::Auth { status }) if status == code
            ));
            assert_eq!(t.calls(), 1);
        }
    }

    #[test]
    fn other_client_errors_fail_fast() {
        let t = Scripted::new(vec![status(400)]);
        let c = client(&t).build().unwrap();
        assert!(matches!(
            c.complete(&request("q")),
            Err(GatewayError::Upstream { attempts: 1, .. })
        ));
    }

    #[test]
    fn transcript_grows_once_per_uncached_call() {
        let dir = tempfile::tempdir().unwrap();
        let tpath = dir.path().join("t/transcript.jsonl");
        let t = Scripted::new(vec![status(429), Ok(ok_reply("a")), Ok(ok_reply("b"))]);
        let c = client(&t)
            .cache_dir(Some(dir.path().join("cache")))
            .transcript(Some(tpath.clone()))
            .build()
            .unwrap();
        c.complete(&request("one")).unwrap();
        c.complete(&request("two")).unwrap();
        c.complete(&request("one")).unwrap(); // cached
        let lines: Vec<TranscriptEntry> = fs::read_to_string(&tpath)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].stage, "FE_MF");
        assert_eq!(lines[0].request_hash, request_hash(&request("one")));
        assert_eq!(lines[0].usage.completion_tokens, 3);
    }

    #[test]
    fn invalid_temperature_rejected_before_sending() {
        let t = Scripted::new(vec![]);
        let c = client(&t).build().unwrap();
        let mut r = request("q");
        r.temperature = 2.1;
        assert!(matches!(c.complete(&r), Err(GatewayError::InvalidRequest(_))));
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }

    #[test]
    fn rate_limiter_blocks_after_burst() {
        let l = RateLimiter::per_minute(600); // 10/s
        for _ in 0..600 {
            l.acquire();
        }
        let start = Instant::now();
        l.acquire();
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn missing_env_key_is_reported() {
        let Err(err) = ChatClient::builder("http://x").api_key_from_env("FACTJUDGE_SURELY_UNSET_VAR")
        else {
            panic!("expected missing key");
        };
        assert!(matches!(err, GatewayError::NotConfigured(_)));
    }

    #[test]
    fn shared_across_threads() {
        let t = Scripted::new(vec![]);
        let c = Arc::new(client(&t).build().unwrap());
        std::thread::scope(|s| {
            for i in 0..4 {
                let c = c.clone();
                s.spawn(move || c.complete(&request(&format!("q{i}"))).unwrap());
            }
        });
        assert_eq!(c.backend_calls(), 4);
    }
}
