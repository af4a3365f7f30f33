//! Vision-language model calls: request construction from prompt templates,
//! a retrying gateway over any [`VisionModel`], an OpenAI-compatible HTTP
//! client, a scripted mock for offline runs, and parsers for model output.

mod http;
mod mock;
mod parse;
mod prompts;

pub use http::{HttpChatClient, HttpEndpoint};
pub use mock::{RecordingModel, ScriptEntry, ScriptedError, ScriptedMock};
pub use parse::{
    extract_table_span, parse_markup_response, parse_plans_response, parse_reflection_response, ParsedMarkup,
    PlanParse, ReflectionParse,
};
pub use prompts::{PromptRegistry, PromptTemplate, RenderedPrompt, TemplateId};

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::TableImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("no scripted response for {template} request {fingerprint}")]
    MockMiss { template: String, fingerprint: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("response contains no table")]
    NoTable,
    #[error("io error: {0}")]
    Io(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::RateLimit(_))
    }
}

impl From<std::io::Error> for GatewayError {
    fn from(e: std::io::Error) -> Self {
        GatewayError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub n_samples: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 0.2,
            n_samples: 1,
        }
    }
}

/// One model call: rendered prompt, attached images and sampling settings.
#[derive(Debug, Clone)]
pub struct VisionRequest {
    pub template: TemplateId,
    pub bindings: BTreeMap<String, String>,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<TableImage>,
    pub sampling: Sampling,
    pub fingerprint: String,
}

impl VisionRequest {
    /// Renders `template` with `bindings` and checks the image count.
    pub fn new(
        prompts: &PromptRegistry,
        template: TemplateId,
        bindings: BTreeMap<String, String>,
        images: Vec<TableImage>,
        sampling: Sampling,
    ) -> Result<Self, GatewayError> {
        if images.is_empty() || images.len() > 2 {
            return Err(GatewayError::InvalidRequest(format!(
                "{} images attached, 1 or 2 allowed",
                images.len()
            )));
        }
        let rendered = prompts.get(template).render(&bindings)?;
        let fingerprint = fingerprint(template, &bindings, &images);
        Ok(Self {
            template,
            bindings,
            system_text: rendered.system,
            user_text: rendered.user,
            images,
            sampling,
            fingerprint,
        })
    }
}

/// Stable hash of the template id, the bound placeholder values and the
/// pixel digests of the attached images.
pub fn fingerprint(template: TemplateId, bindings: &BTreeMap<String, String>, images: &[TableImage]) -> String {
    let mut h = Sha256::new();
    h.update(template.as_str().as_bytes());
    h.update([0]);
    for (k, v) in bindings {
        h.update(k.as_bytes());
        h.update([1]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    for img in images {
        h.update(img.digest().as_bytes());
        h.update([2]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// What a model returns for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub usage: Usage,
}

impl ModelReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: Usage::default(),
        }
    }
}

/// Anything that can answer a [`VisionRequest`].
pub trait VisionModel: Send + Sync {
    fn complete(&self, request: &VisionRequest) -> Result<ModelReply, GatewayError>;

    /// Short provider label for reports.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): doubles each time up to
    /// the cap.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Result of a successful gateway call.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub fingerprint: String,
    pub template: TemplateId,
    pub attempts: u32,
    pub retries: u32,
    pub latency_ms: u64,
    pub usage: Usage,
}

impl Completion {
    /// SHA-256 of the response text, for reports.
    pub fn response_digest(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared front door for model calls: renders prompts, caps concurrent
/// requests and retries transient failures.
#[derive(Clone)]
pub struct Gateway {
    model: Arc<dyn VisionModel>,
    prompts: Arc<PromptRegistry>,
    policy: RetryPolicy,
    limiter: Arc<Limiter>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.model.describe())
            .field("policy", &self.policy)
            .field("max_in_flight", &self.limiter.cap)
            .finish()
    }
}

impl Gateway {
    pub fn new(model: Arc<dyn VisionModel>, policy: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            model,
            prompts: Arc::new(PromptRegistry::builtin()),
            policy,
            limiter: Arc::new(Limiter {
                cap: max_in_flight.max(1),
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptRegistry) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn prompts(&self) -> &PromptRegistry {
        &self.prompts
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn describe(&self) -> String {
        self.model.describe()
    }

    pub fn request(
        &self,
        template: TemplateId,
        bindings: BTreeMap<String, String>,
        images: Vec<TableImage>,
        sampling: Sampling,
    ) -> Result<VisionRequest, GatewayError> {
        VisionRequest::new(&self.prompts, template, bindings, images, sampling)
    }

    /// Sends the request, retrying transport failures and rate limits with
    /// exponential backoff. Other errors return immediately.
    pub fn complete(&self, request: &VisionRequest) -> Result<Completion, GatewayError> {
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _slot = self.limiter.acquire();
                self.model.complete(request)
            };
            match result {
                Ok(reply) => {
                    return Ok(Completion {
                        text: reply.text,
                        fingerprint: request.fingerprint.clone(),
                        template: request.template,
                        attempts,
                        retries: attempts - 1,
                        latency_ms: start.elapsed().as_millis() as u64,
                        usage: reply.usage,
                    })
                }
                Err(e) if e.is_retryable() && attempts <= self.policy.max_retries => {
                    let delay = self.policy.backoff(attempts);
                    debug!(
                        "{} attempt {attempts} failed ({e}); retrying in {delay:?}",
                        request.template
                    );
                    std::thread::sleep(delay);
                }
                Err(e) => {
                    if e.is_retryable() {
                        warn!("{} failed after {attempts} attempts: {e}", request.template);
                    }
                    return Err(match e {
                        GatewayError::Transport(m) if attempts > 1 => {
                            GatewayError::Transport(format!("{m} (after {attempts} attempts)"))
                        }
                        other => other,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn img(v: u8) -> TableImage {
        TableImage::from_gray("t", GrayImage::from_pixel(8, 8, Luma([v]))).unwrap()
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let b: BTreeMap<String, String> = [("row_index".to_string(), "2".to_string())].into();
        let a1 = fingerprint(TemplateId::IRDR, &b, &[img(1)]);
        assert_eq!(a1, fingerprint(TemplateId::IRDR, &b, &[img(1)]));
        assert_ne!(a1, fingerprint(TemplateId::IRDR, &b, &[img(2)]));
        assert_ne!(a1, fingerprint(TemplateId::ICDR, &b, &[img(1)]));
        assert_ne!(a1, fingerprint(TemplateId::IRDR, &BTreeMap::new(), &[img(1)]));
    }

    #[test]
    fn image_count_is_checked() {
        let reg = PromptRegistry::builtin();
        let r = VisionRequest::new(
            &reg,
            TemplateId::RecognizeSimple,
            BTreeMap::new(),
            vec![],
            Sampling::default(),
        );
        assert!(matches!(r, Err(GatewayError::InvalidRequest(_))));
        let three = vec![img(1), img(2), img(3)];
        let r = VisionRequest::new(
            &reg,
            TemplateId::RecognizeSimple,
            BTreeMap::new(),
            three,
            Sampling::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            max_retries: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        let ms: Vec<u128> = (1..=4).map(|r| p.backoff(r).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
    }
}
