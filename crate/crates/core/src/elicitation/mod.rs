//! Prompt construction, reply parsing and persona scoring.

pub mod data;
mod parse;
mod prompts;
mod tipi;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::JobPosting;
use crate::gateway::{ChatBackend, ChatRequest, GatewayError, RequestContext};

pub use parse::{
    female_probability, gendered_token_probabilities, parse_recommendation,
    parse_recommendation_with, HonorificMatch,
};
pub use prompts::{
    build_identity_prompt, build_persona_prompt, build_persona_prompt_from_description,
    build_recommendation_prompt, build_tipi_prompt, build_tipi_prompt_from_adjectives,
    recognize_prompt, PromptShape, IDENTITY_TEMPLATE, PERSONA_TEMPLATE, RECOMMENDATION_TEMPLATE,
    TIPI_TEMPLATE,
};
pub use tipi::{parse_tipi_answer, score_tipi, TipiRating};

#[derive(Debug, Error)]
pub enum ElicitationError {
    #[error("unknown trait `{0}`")]
    UnknownTrait(String),
    #[error("unknown keyed direction `{0}` (expected positive or negative)")]
    UnknownKeyed(String),
    #[error("unknown identity `{0}`; only the shipped list of individual figures is accepted")]
    UnknownIdentity(String),
    #[error("unknown TIPI adjective pair `{0}`")]
    UnknownTipiItem(String),
    #[error("unknown persona `{0}`")]
    UnknownPersona(String),
    #[error("TIPI score {0} outside 1..=7")]
    ScoreOutOfRange(u8),
    #[error("no usable TIPI runs for `{0}`")]
    NoRuns(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("inconsistent reply: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("record log: {0}")]
    Records(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitDimension {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    EmotionalStability,
}

impl TraitDimension {
    pub const ALL: [TraitDimension; 5] = [
        TraitDimension::Openness,
        TraitDimension::Conscientiousness,
        TraitDimension::Extraversion,
        TraitDimension::Agreeableness,
        TraitDimension::EmotionalStability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraitDimension::Openness => "openness",
            TraitDimension::Conscientiousness => "conscientiousness",
            TraitDimension::Extraversion => "extraversion",
            TraitDimension::Agreeableness => "agreeableness",
            TraitDimension::EmotionalStability => "emotional_stability",
        }
    }
}

impl FromStr for TraitDimension {
    type Err = ElicitationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraitDimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ElicitationError::UnknownTrait(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyed {
    Positive,
    Negative,
}

impl Keyed {
    pub fn as_str(self) -> &'static str {
        match self {
            Keyed::Positive => "positive",
            Keyed::Negative => "negative",
        }
    }
}

impl FromStr for Keyed {
    type Err = ElicitationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "positive" | "+" => Ok(Keyed::Positive),
            "negative" | "-" => Ok(Keyed::Negative),
            other => Err(ElicitationError::UnknownKeyed(other.to_string())),
        }
    }
}

/// Big Five scores on the 1..7 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScores {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub emotional_stability: f64,
}

impl TraitScores {
    pub fn get(&self, d: TraitDimension) -> f64 {
        match d {
            TraitDimension::Openness => self.openness,
            TraitDimension::Conscientiousness => self.conscientiousness,
            TraitDimension::Extraversion => self.extraversion,
            TraitDimension::Agreeableness => self.agreeableness,
            TraitDimension::EmotionalStability => self.emotional_stability,
        }
    }

    pub fn set(&mut self, d: TraitDimension, v: f64) {
        match d {
            TraitDimension::Openness => self.openness = v,
            TraitDimension::Conscientiousness => self.conscientiousness = v,
            TraitDimension::Extraversion => self.extraversion = v,
            TraitDimension::Agreeableness => self.agreeableness = v,
            TraitDimension::EmotionalStability => self.emotional_stability = v,
        }
    }
}

/// Recruiter identity conditioning the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PersonaSpec {
    Base,
    Trait { dimension: TraitDimension, keyed: Keyed },
    Identity { name: String },
}

impl PersonaSpec {
    /// Stable identifier, also used as the randomness key and in file names
    /// (after [`PersonaSpec::slug`]).
    pub fn key(&self) -> String {
        match self {
            PersonaSpec::Base => "base".into(),
            PersonaSpec::Trait { dimension, keyed } => {
                format!("trait:{}:{}", dimension.as_str(), keyed.as_str())
            }
            PersonaSpec::Identity { name } => format!("identity:{name}"),
        }
    }

    pub fn slug(&self) -> String {
        let mut out = String::new();
        for c in self.key().chars() {
            if c.is_ascii_alphanumeric() {
                out.push(c.to_ascii_lowercase());
            } else if !out.ends_with('-') {
                out.push('-');
            }
        }
        out.trim_end_matches('-').to_string()
    }
}

impl fmt::Display for PersonaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for PersonaSpec {
    type Err = ElicitationError;

    /// Accepts `base`, `openness+` / `openness-`, `trait:openness:positive`,
    /// `identity:<name>`, or a bare figure name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "base" {
            return Ok(PersonaSpec::Base);
        }
        if let Some(rest) = s.strip_prefix("trait:") {
            let (d, k) = rest
                .split_once(':')
                .ok_or_else(|| ElicitationError::UnknownPersona(s.to_string()))?;
            return Ok(PersonaSpec::Trait { dimension: d.parse()?, keyed: k.parse()? });
        }
        if let Some(stem) = s.strip_suffix('+').or_else(|| s.strip_suffix('-')) {
            if let Ok(dimension) = stem.parse() {
                let keyed = if s.ends_with('+') { Keyed::Positive } else { Keyed::Negative };
                return Ok(PersonaSpec::Trait { dimension, keyed });
            }
        }
        let name = s.strip_prefix("identity:").unwrap_or(s);
        if data::figure(name).is_some() {
            Ok(PersonaSpec::Identity { name: name.to_string() })
        } else {
            Err(ElicitationError::UnknownPersona(s.to_string()))
        }
    }
}

/// Which honorific is named first in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderArm {
    MrFirst,
    MsFirst,
}

impl OrderArm {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderArm::MrFirst => "mr_first",
            OrderArm::MsFirst => "ms_first",
        }
    }
}

impl FromStr for OrderArm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mr_first" => Ok(OrderArm::MrFirst),
            "ms_first" => Ok(OrderArm::MsFirst),
            other => Err(format!("unknown order arm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Male,
    Female,
    Refusal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallbackRecord {
    pub posting_id: String,
    pub persona: PersonaSpec,
    pub order_arm: OrderArm,
    pub outcome: Outcome,
    pub p_female: Option<f64>,
    /// Raw probability of the `Ms` token at the gendered position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ms: Option<f64>,
    /// Raw probability of the `Mr` token at the gendered position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mr: Option<f64>,
    pub raw_text: String,
}

impl CallbackRecord {
    pub fn is_female(&self) -> Option<bool> {
        match self.outcome {
            Outcome::Female => Some(true),
            Outcome::Male => Some(false),
            Outcome::Refusal => None,
        }
    }
}

/// Request settings shared by every elicitation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitOptions {
    pub max_tokens: u32,
    pub temperature: f64,
    pub want_logprobs: bool,
    pub top_logprobs_k: u8,
    pub honorific: HonorificMatch,
}

impl Default for ElicitOptions {
    fn default() -> Self {
        ElicitOptions {
            max_tokens: 16,
            temperature: 0.0,
            want_logprobs: true,
            top_logprobs_k: 5,
            honorific: HonorificMatch::Exact,
        }
    }
}

impl ElicitOptions {
    fn request(&self, prompt: String) -> ChatRequest {
        let mut r = ChatRequest::user(prompt);
        r.max_tokens = self.max_tokens;
        r.temperature = self.temperature;
        r.want_logprobs = self.want_logprobs;
        r.top_logprobs_k = self.top_logprobs_k;
        r
    }
}

pub fn build_prompt(job: &JobPosting, persona: &PersonaSpec, arm: OrderArm) -> Result<String, ElicitationError> {
    match persona {
        PersonaSpec::Base => Ok(build_recommendation_prompt(job, arm)),
        PersonaSpec::Trait { dimension, keyed } => Ok(build_persona_prompt(job, *dimension, *keyed, arm)),
        PersonaSpec::Identity { name } => build_identity_prompt(job, name, arm),
    }
}

/// Ask the backend for one recommendation and turn the reply into a record.
pub fn elicit_one(
    backend: &dyn ChatBackend,
    job: &JobPosting,
    persona: &PersonaSpec,
    arm: OrderArm,
    opts: &ElicitOptions,
) -> Result<CallbackRecord, ElicitationError> {
    let request = opts.request(build_prompt(job, persona, arm)?);
    let ctx = RequestContext::Recommendation { job, persona, order_arm: arm };
    let response = backend.complete(&request, &ctx)?;
    let outcome = parse_recommendation_with(&response.text, opts.honorific);
    let (p_female, (p_ms, p_mr)) = match outcome {
        Outcome::Refusal => (None, (None, None)),
        _ => (
            female_probability(&response, outcome)?,
            gendered_token_probabilities(&response),
        ),
    };
    Ok(CallbackRecord {
        posting_id: job.id.clone(),
        persona: persona.clone(),
        order_arm: arm,
        outcome,
        p_female,
        p_ms,
        p_mr,
        raw_text: response.text,
    })
}

/// Re-queries allowed for an unparsable TIPI reply.
pub const TIPI_REQUERIES: u32 = 3;

/// Perceived Big Five ratings for one identity, `runs` repetitions each.
/// A run is dropped when either item stays unparsable after re-querying.
pub fn rate_identity(
    backend: &dyn ChatBackend,
    identity: &str,
    runs: u32,
    opts: &ElicitOptions,
) -> Result<Vec<TipiRating>, ElicitationError> {
    let mut out = Vec::with_capacity(TraitDimension::ALL.len());
    for dimension in TraitDimension::ALL {
        let mut pairs = Vec::new();
        for run in 0..runs {
            let pos = ask_tipi(backend, identity, dimension, Keyed::Positive, run, opts)?;
            let neg = ask_tipi(backend, identity, dimension, Keyed::Negative, run, opts)?;
            match (pos, neg) {
                (Some(p), Some(n)) => pairs.push((p, n)),
                _ => log::warn!("dropping TIPI run {run} for {identity} / {}", dimension.as_str()),
            }
        }
        out.push(score_tipi(identity, dimension, &pairs)?);
    }
    Ok(out)
}

fn ask_tipi(
    backend: &dyn ChatBackend,
    identity: &str,
    dimension: TraitDimension,
    keyed: Keyed,
    run: u32,
    opts: &ElicitOptions,
) -> Result<Option<u8>, ElicitationError> {
    let mut request = opts.request(build_tipi_prompt(identity, dimension, keyed)?);
    request.want_logprobs = false;
    for attempt in 0..=TIPI_REQUERIES {
        let ctx = RequestContext::Tipi { identity, dimension, keyed, run, attempt };
        let reply = backend.complete(&request, &ctx)?;
        if let Some(v) = parse_tipi_answer(&reply.text) {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Collapse per-dimension ratings into one score vector.
pub fn trait_scores(ratings: &[TipiRating]) -> Option<TraitScores> {
    let mut s = TraitScores {
        openness: f64::NAN,
        conscientiousness: f64::NAN,
        extraversion: f64::NAN,
        agreeableness: f64::NAN,
        emotional_stability: f64::NAN,
    };
    for r in ratings {
        s.set(r.dimension, r.final_score);
    }
    TraitDimension::ALL.iter().all(|d| s.get(*d).is_finite()).then_some(s)
}

/// Read a JSONL record log. A truncated final line (from an interrupted
/// write) is ignored; any other malformed line is an error.
pub fn read_records(path: &Path) -> Result<Vec<CallbackRecord>, ElicitationError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| ElicitationError::Records(e.to_string()))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| ElicitationError::Records(e.to_string()))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => log::warn!("ignoring truncated last line in {}", path.display()),
            Err(e) => {
                return Err(ElicitationError::Records(format!("{}:{}: {e}", path.display(), i + 1)))
            }
        }
    }
    Ok(out)
}

pub fn write_record_line<W: Write>(w: &mut W, record: &CallbackRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}
