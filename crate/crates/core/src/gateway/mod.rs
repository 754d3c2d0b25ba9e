//! Chat-completion backends returning text with per-token log-probabilities.

mod http;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::JobPosting;
use crate::elicitation::{Keyed, OrderArm, PersonaSpec, TraitDimension};

pub use http::{EndpointConfig, HttpBackend};
pub use mock::{MockRecruiter, MockRecruiterParams, REFUSAL_TEXT};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("backend did not return log-probabilities: {0}")]
    Capability(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unrecognized prompt: {0}")]
    UnrecognizedPrompt(String),
    #[error("could not decode response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub want_logprobs: bool,
    pub top_logprobs_k: u8,
}

impl ChatRequest {
    /// Whole prompt as a single user message, temperature 0, logprobs on.
    pub fn user(prompt: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![ChatMessage { role: Role::User, content: prompt.into() }],
            max_tokens: 16,
            temperature: 0.0,
            want_logprobs: true,
            top_logprobs_k: 5,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return bad("at least one user message is required");
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return bad("message content must be non-empty");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if !(1..=20).contains(&self.top_logprobs_k) {
            return bad("top_logprobs_k must be in 1..=20");
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Sorted by descending logprob.
    pub alternatives: Vec<TopLogprob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
}

impl ChatResponse {
    /// Check `logprob <= 0` everywhere and descending alternatives.
    pub fn check(&self) -> Result<(), GatewayError> {
        for t in &self.tokens {
            let lps = std::iter::once(t.logprob).chain(t.alternatives.iter().map(|a| a.logprob));
            if lps.clone().any(|lp| lp > 0.0 || lp.is_nan()) {
                return Err(GatewayError::Decode(format!("positive or NaN logprob at token `{}`", t.token)));
            }
            if t.alternatives.windows(2).any(|w| w[0].logprob < w[1].logprob) {
                return Err(GatewayError::Decode(format!("alternatives not sorted at token `{}`", t.token)));
            }
        }
        Ok(())
    }
}

/// What a request is about. Real endpoints ignore it; the mock recruiter
/// needs it to apply its planted model.
#[derive(Debug, Clone, Copy)]
pub enum RequestContext<'a> {
    Recommendation { job: &'a JobPosting, persona: &'a PersonaSpec, order_arm: OrderArm },
    Tipi { identity: &'a str, dimension: TraitDimension, keyed: Keyed, run: u32, attempt: u32 },
    None,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest, context: &RequestContext<'_>) -> Result<ChatResponse, GatewayError>;

    /// Stable description used in provenance records.
    fn identity(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest, context: &RequestContext<'_>) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request, context)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}
