//! Vision-language model access: an OpenAI-compatible chat-completions client
//! and deterministic mock models for offline runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{covering_extremities, BBox, GridSpec, Transform};
use crate::overlay::RasterImage;

pub const DEFAULT_API_KEY_ENV: &str = "GROUND_API_KEY";
pub const BASE_URL_ENV: &str = "GROUND_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {message}")]
    Request { status: u16, message: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("scripted responder exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("encoding request image: {0}")]
    Encode(String),
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub images: Vec<RasterImage>,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub const DEFAULT_MAX_TOKENS: u32 = 512;

    pub fn new(images: Vec<RasterImage>, prompt: impl Into<String>) -> Result<Self, ModelError> {
        if images.is_empty() || images.len() > 2 {
            return Err(ModelError::Config(format!(
                "a grounding request carries 1 or 2 images, got {}",
                images.len()
            )));
        }
        Ok(Self {
            images,
            prompt: prompt.into(),
            max_tokens: Self::DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        })
    }

    pub fn with_decoding(mut self, max_tokens: u32, temperature: f64) -> Self {
        self.max_tokens = max_tokens;
        self.temperature = temperature.max(0.0);
        self
    }

    pub fn image_digests(&self) -> Vec<String> {
        self.images.iter().map(RasterImage::digest).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub attempts: u32,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
            attempts: 1,
        }
    }
}

/// What a stage asks the model to answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnswerFormat {
    /// `(x, y)` in pixels of the first image.
    Point,
    /// Four extremity IDs of the grid drawn on the last image.
    GridIds { grid: GridSpec },
}

/// Per-call side information. Network models ignore it; the oracle mocks use
/// it to answer as a flawless overlay reader would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallContext {
    pub sample_id: String,
    pub stage: usize,
    pub format: AnswerFormat,
    /// Maps pixels of the gridded / answered image back to the original screenshot.
    pub to_original: Transform,
    pub ground_truth: Option<BBox>,
}

pub trait VisionModel: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, req: &ChatRequest, ctx: &CallContext) -> Result<Completion, ModelError>;
}

/// Connection settings for an OpenAI-compatible endpoint. The API key is
/// referenced by environment-variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub auth_env: String,
    pub request_timeout: Duration,
    pub max_retries: u32,
    /// Requests per second, shared by every caller of one client.
    pub rate_limit: f64,
    pub backoff_base: Duration,
}

impl ModelEndpoint {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            base_url: std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string()),
            model_name: model_name.into(),
            auth_env: DEFAULT_API_KEY_ENV.to_string(),
            request_timeout: Duration::from_secs(120),
            max_retries: 4,
            rate_limit: 2.0,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model_name.trim().is_empty() {
            return Err(ModelError::Config("model_name is empty".into()));
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err(ModelError::Config(format!(
                "rate_limit must be > 0 requests/s, got {}",
                self.rate_limit
            )));
        }
        if self.request_timeout.is_zero() {
            return Err(ModelError::Config("request_timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ModelError::Config(format!(
                "base_url {:?} is not an http(s) URL",
                self.base_url
            )));
        }
        Ok(())
    }
}

/// Spaces outbound requests at least `1 / rate` seconds apart, so any
/// one-second window holds at most `ceil(rate)` sends.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / rate),
            next_slot: Mutex::new(None),
        }
    }

    /// Blocks until this caller's slot; returns the slot time.
    pub fn acquire(&self) -> Instant {
        let slot = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
        slot
    }
}

struct ApiKey(String);

impl std::fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

type SendObserver = Box<dyn Fn(Instant) + Send + Sync>;

/// Blocking chat-completions client with retry and a shared rate limiter.
pub struct OpenAiClient {
    endpoint: ModelEndpoint,
    key: ApiKey,
    http: reqwest::blocking::Client,
    limiter: RateLimiter,
    on_send: Option<SendObserver>,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient")
            .field("endpoint", &self.endpoint)
            .field("key", &self.key)
            .finish_non_exhaustive()
    }
}

impl OpenAiClient {
    /// Resolves the API key from the environment; fails before any network I/O
    /// if it is missing.
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, ModelError> {
        endpoint.validate()?;
        let key = std::env::var(&endpoint.auth_env).map_err(|_| {
            ModelError::Config(format!(
                "environment variable {} holding the API key is not set",
                endpoint.auth_env
            ))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(endpoint.request_timeout)
            .build()
            .map_err(|e| ModelError::Config(format!("building HTTP client: {e}")))?;
        Ok(Self {
            limiter: RateLimiter::new(endpoint.rate_limit),
            endpoint,
            key: ApiKey(key),
            http,
            on_send: None,
        })
    }

    /// Registers a callback invoked with the time of every outbound attempt.
    pub fn with_send_observer(mut self, f: impl Fn(Instant) + Send + Sync + 'static) -> Self {
        self.on_send = Some(Box::new(f));
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn body(&self, req: &ChatRequest) -> Result<Value, ModelError> {
        let mut content = vec![json!({"type": "text", "text": req.prompt})];
        for img in &req.images {
            let png = img.encode_png().map_err(|e| ModelError::Encode(e.to_string()))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        Ok(json!({
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.min(10);
        (self.endpoint.backoff_base * factor).min(Duration::from_secs(60))
    }
}

/// Pulls the answer text out of a chat-completions response body.
pub fn parse_chat_response(body: &Value) -> Result<(String, Option<Usage>), ModelError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ModelError::Response("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(ModelError::Response(format!("unexpected content type: {other}"))),
    };
    let usage = body
        .get("usage")
        .and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
    Ok((text, usage))
}

fn server_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect())
}

impl VisionModel for OpenAiClient {
    fn name(&self) -> &str {
        &self.endpoint.model_name
    }

    fn complete(&self, req: &ChatRequest, _ctx: &CallContext) -> Result<Completion, ModelError> {
        let body = self.body(req)?;
        let url = self.url();
        let mut last = String::new();
        let total = 1 + self.endpoint.max_retries;
        for attempt in 0..total {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let sent_at = self.limiter.acquire();
            if let Some(f) = &self.on_send {
                f(sent_at);
            }
            let result = self
                .http
                .post(&url)
                .bearer_auth(&self.key.0)
                .json(&body)
                .send();
            let resp = match result {
                Ok(r) => r,
                Err(e) => {
                    last = if e.is_timeout() {
                        "request timed out".to_string()
                    } else {
                        format!("connection error: {}", e.without_url())
                    };
                    log::warn!("{} attempt {}/{}: {last}", self.endpoint.model_name, attempt + 1, total);
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp.text().unwrap_or_default();
            if status == 429 || status >= 500 {
                last = format!("HTTP {status}: {}", server_message(&text));
                log::warn!("{} attempt {}/{}: {last}", self.endpoint.model_name, attempt + 1, total);
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(ModelError::Request {
                    status,
                    message: server_message(&text),
                });
            }
            let json: Value = serde_json::from_str(&text)
                .map_err(|e| ModelError::Response(format!("invalid JSON body: {e}")))?;
            let (text, usage) = parse_chat_response(&json)?;
            return Ok(Completion {
                text,
                usage,
                attempts: attempt + 1,
            });
        }
        Err(ModelError::Transport {
            attempts: total,
            message: last,
        })
    }
}

/// Oracle mock: answers exactly what a flawless reader of the overlay would.
///
/// Coordinate stages get the ground-truth center in shown-image pixels as
/// `(x, y)`; grid stages get the extremity cells covering the ground truth.
#[derive(Debug, Clone)]
pub struct PerfectReader {
    name: String,
}

impl PerfectReader {
    pub fn new() -> Self {
        Self {
            name: "mock-perfect".into(),
        }
    }
}

impl Default for PerfectReader {
    fn default() -> Self {
        Self::new()
    }
}

/// The answer a flawless reader gives for `ctx`, or `None` without ground truth.
pub fn perfect_answer(ctx: &CallContext) -> Option<String> {
    let gt = ctx.ground_truth?;
    let shown = ctx.to_original.forward_box(&gt);
    Some(match ctx.format {
        AnswerFormat::Point => {
            let c = shown.center();
            format!("({}, {})", c.x, c.y)
        }
        AnswerFormat::GridIds { grid } => {
            let frame = BBox::full(grid.width, grid.height);
            let target = shown.intersect(&frame).unwrap_or(shown);
            let ids = covering_extremities(&grid, &target);
            format!(
                "leftmost: {}, topmost: {}, rightmost: {}, bottommost: {}",
                ids.leftmost, ids.topmost, ids.rightmost, ids.bottommost
            )
        }
    })
}

impl VisionModel for PerfectReader {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _req: &ChatRequest, ctx: &CallContext) -> Result<Completion, ModelError> {
        perfect_answer(ctx)
            .map(Completion::text)
            .ok_or_else(|| ModelError::Config("perfect reader needs the sample's ground truth".into()))
    }
}

/// Returns scripted responses in order and errors once the script runs out.
#[derive(Debug)]
pub struct FixedResponder {
    name: String,
    script: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl FixedResponder {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: "mock-fixed".into(),
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script poisoned").len()
    }
}

impl VisionModel for FixedResponder {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _req: &ChatRequest, _ctx: &CallContext) -> Result<Completion, ModelError> {
        let calls = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.script
            .lock()
            .expect("script poisoned")
            .pop_front()
            .map(Completion::text)
            .ok_or(ModelError::ScriptExhausted { calls })
    }
}

/// Answers every call with the same text.
#[derive(Debug, Clone)]
pub struct ConstantResponder {
    name: String,
    text: String,
}

impl ConstantResponder {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            name: "mock-constant".into(),
            text: text.into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl VisionModel for ConstantResponder {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _req: &ChatRequest, _ctx: &CallContext) -> Result<Completion, ModelError> {
        Ok(Completion::text(self.text.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::WHITE;

    fn req() -> ChatRequest {
        ChatRequest::new(vec![RasterImage::filled(8, 8, WHITE).unwrap()], "where?").unwrap()
    }

    fn ctx(format: AnswerFormat, gt: BBox) -> CallContext {
        CallContext {
            sample_id: "s".into(),
            stage: 0,
            format,
            to_original: Transform::IDENTITY,
            ground_truth: Some(gt),
        }
    }

    #[test]
    fn request_image_count_bounds() {
        let img = RasterImage::filled(4, 4, WHITE).unwrap();
        assert!(ChatRequest::new(vec![], "p").is_err());
        assert!(ChatRequest::new(vec![img.clone(), img.clone(), img], "p").is_err());
    }

    #[test]
    fn constant_echo() {
        let m = ConstantResponder::new("(12, 34)");
        let c = m.complete(&req(), &ctx(AnswerFormat::Point, BBox::full(8, 8))).unwrap();
        assert_eq!(c.text, "(12, 34)");
    }

    #[test]
    fn fixed_script_in_order_then_exhausted() {
        let m = FixedResponder::new(["garbage", "(5,5)"]);
        let c = ctx(AnswerFormat::Point, BBox::full(8, 8));
        assert_eq!(m.complete(&req(), &c).unwrap().text, "garbage");
        assert_eq!(m.complete(&req(), &c).unwrap().text, "(5,5)");
        assert!(matches!(m.complete(&req(), &c), Err(ModelError::ScriptExhausted { calls: 3 })));
        let empty = FixedResponder::new(Vec::<String>::new());
        assert!(empty.complete(&req(), &c).is_err());
    }

    #[test]
    fn perfect_reader_point_is_gt_center() {
        let gt = BBox::new(100.0, 100.0, 200.0, 150.0).unwrap();
        assert_eq!(perfect_answer(&ctx(AnswerFormat::Point, gt)).unwrap(), "(150, 125)");
    }

    #[test]
    fn perfect_reader_single_cell() {
        let grid = GridSpec::new(8, 8, 800, 600).unwrap();
        // cell 10 = row 1, col 1 = (100,75)-(200,150)
        let gt = BBox::new(120.0, 90.0, 180.0, 140.0).unwrap();
        assert_eq!(
            perfect_answer(&ctx(AnswerFormat::GridIds { grid }, gt)).unwrap(),
            "leftmost: 10, topmost: 10, rightmost: 10, bottommost: 10"
        );
    }

    #[test]
    fn perfect_reader_maps_into_crop_space() {
        let grid = GridSpec::new(2, 2, 200, 200).unwrap();
        let c = CallContext {
            to_original: Transform::new(100.0, 100.0, 2.0).unwrap(),
            ..ctx(AnswerFormat::GridIds { grid }, BBox::new(160.0, 110.0, 190.0, 140.0).unwrap())
        };
        // crop space (120,20)-(180,80): column 1, row 0 -> id 2
        assert_eq!(perfect_answer(&c).unwrap(), "leftmost: 2, topmost: 2, rightmost: 2, bottommost: 2");
    }

    #[test]
    fn missing_key_fails_before_network() {
        let mut ep = ModelEndpoint::new("m");
        ep.base_url = "http://127.0.0.1:9".into();
        ep.auth_env = "GROUNDKIT_TEST_UNSET_KEY_VAR".into();
        let err = OpenAiClient::new(ep).unwrap_err();
        assert!(matches!(err, ModelError::Config(ref m) if m.contains("GROUNDKIT_TEST_UNSET_KEY_VAR")));
    }

    #[test]
    fn endpoint_validation() {
        let mut ep = ModelEndpoint::new("m");
        ep.base_url = "https://x".into();
        assert!(ep.validate().is_ok());
        ep.rate_limit = 0.0;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn response_parsing_variants() {
        let v = json!({"choices":[{"message":{"content":"(1, 2)"}}],"usage":{"prompt_tokens":3,"completion_tokens":4,"total_tokens":7}});
        let (t, u) = parse_chat_response(&v).unwrap();
        assert_eq!(t, "(1, 2)");
        assert_eq!(u.unwrap().total_tokens, 7);
        let v = json!({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]});
        assert_eq!(parse_chat_response(&v).unwrap().0, "ab");
        assert!(parse_chat_response(&json!({"choices":[]})).is_err());
    }

    #[test]
    fn limiter_spacing() {
        let lim = RateLimiter::new(50.0);
        let a = lim.acquire();
        let b = lim.acquire();
        assert!(b.duration_since(a) >= Duration::from_millis(20));
    }
}
