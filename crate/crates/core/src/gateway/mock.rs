//! Deterministic simulated recruiter with a planted logistic bias model.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, RequestContext, TokenLogprob, TopLogprob};
use crate::corpus::{ExplicitRequest, JobPosting};
use crate::elicitation::{data, recognize_prompt, Keyed, OrderArm, PersonaSpec, PromptShape, TraitScores};
use crate::keyed::keyed_rng;

/// Reply used for refusals. Contains neither honorific.
pub const REFUSAL_TEXT: &str = "I'm sorry, but I can't choose between applicants on that basis.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRecruiterParams {
    pub base_female_logodds: f64,
    /// Log-odds shift applied once per keyword present in the job text.
    pub keyword_weights: BTreeMap<String, f64>,
    /// Shift toward an explicitly requested gender.
    pub compliance_boost: f64,
    pub refusal_prob: f64,
    /// Keyed by [`PersonaSpec::key`].
    pub persona_modifiers: BTreeMap<String, f64>,
    /// Extra shift on the `ms_first` arm.
    pub ms_first_shift: f64,
    pub seed: u64,
    /// When false the mock behaves like a backend without logprob support.
    pub emit_logprobs: bool,
    /// Perceived-trait ratings per identity; shipped reference ratings are
    /// used for identities not listed.
    pub tipi_scores: BTreeMap<String, TraitScores>,
    pub tipi_noise_sd: f64,
    /// Chance that a TIPI reply contains no usable number.
    pub tipi_unparsable_prob: f64,
}

impl Default for MockRecruiterParams {
    fn default() -> Self {
        MockRecruiterParams {
            base_female_logodds: 0.0,
            keyword_weights: BTreeMap::new(),
            compliance_boost: 0.0,
            refusal_prob: 0.0,
            persona_modifiers: BTreeMap::new(),
            ms_first_shift: 0.0,
            seed: 0,
            emit_logprobs: true,
            tipi_scores: BTreeMap::new(),
            tipi_noise_sd: 0.75,
            tipi_unparsable_prob: 0.0,
        }
    }
}

impl MockRecruiterParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidRequest(m));
        if !(0.0..=1.0).contains(&self.refusal_prob) {
            return bad(format!("refusal_prob {} outside [0, 1]", self.refusal_prob));
        }
        if !(0.0..=1.0).contains(&self.tipi_unparsable_prob) {
            return bad(format!("tipi_unparsable_prob {} outside [0, 1]", self.tipi_unparsable_prob));
        }
        if !(self.compliance_boost >= 0.0) {
            return bad("compliance_boost must be non-negative".into());
        }
        if !(self.tipi_noise_sd >= 0.0) {
            return bad("tipi_noise_sd must be non-negative".into());
        }
        let all_finite = std::iter::once(self.base_female_logodds)
            .chain([self.compliance_boost, self.ms_first_shift])
            .chain(self.keyword_weights.values().copied())
            .chain(self.persona_modifiers.values().copied())
            .all(f64::is_finite);
        if !all_finite {
            return bad("log-odds terms must be finite".into());
        }
        Ok(())
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub struct MockRecruiter {
    params: MockRecruiterParams,
    keyword_tokens: Vec<(Vec<String>, f64)>,
}

impl MockRecruiter {
    pub fn new(params: MockRecruiterParams) -> Result<Self, GatewayError> {
        params.validate()?;
        let keyword_tokens = params.keyword_weights.iter().map(|(k, w)| (tokens(k), *w)).collect();
        Ok(MockRecruiter { params, keyword_tokens })
    }

    pub fn params(&self) -> &MockRecruiterParams {
        &self.params
    }

    /// Planted female log-odds for one elicitation.
    pub fn female_logodds(&self, job: &JobPosting, persona: &PersonaSpec, arm: OrderArm) -> f64 {
        let p = &self.params;
        let text = tokens(&job.job_text());
        let keywords: f64 = self
            .keyword_tokens
            .iter()
            .filter(|(k, _)| contains_phrase(&text, k))
            .map(|(_, w)| w)
            .sum();
        let compliance = match job.explicit_request {
            ExplicitRequest::Female => p.compliance_boost,
            ExplicitRequest::Male => -p.compliance_boost,
            ExplicitRequest::None => 0.0,
        };
        let persona = p.persona_modifiers.get(&persona.key()).copied().unwrap_or(0.0);
        let order = if arm == OrderArm::MsFirst { p.ms_first_shift } else { 0.0 };
        p.base_female_logodds + keywords + compliance + persona + order
    }

    pub fn female_probability(&self, job: &JobPosting, persona: &PersonaSpec, arm: OrderArm) -> f64 {
        (-softplus(-self.female_logodds(job, persona, arm))).exp()
    }

    fn recommend(
        &self,
        request: &ChatRequest,
        job: &JobPosting,
        persona: &PersonaSpec,
        arm: OrderArm,
    ) -> Result<ChatResponse, GatewayError> {
        let prompt = request.prompt();
        let shape_ok = match (recognize_prompt(prompt), persona) {
            (Some(PromptShape::Recommendation(a)), PersonaSpec::Base) => a == arm,
            (Some(PromptShape::Persona(a)), PersonaSpec::Trait { .. }) => a == arm,
            (Some(PromptShape::Identity(a)), PersonaSpec::Identity { .. }) => a == arm,
            _ => false,
        };
        if !shape_ok || !prompt.ends_with(&job.job_text()) {
            return Err(GatewayError::UnrecognizedPrompt(format!(
                "prompt does not match a {} recommendation for posting {}",
                persona.key(),
                job.id
            )));
        }
        let mut rng = keyed_rng(self.params.seed, &["recommend", &job.id, &persona.key(), arm.as_str()]);
        let u_refuse: f64 = rng.random();
        let u_gender: f64 = rng.random();
        if u_refuse < self.params.refusal_prob {
            let tokens = vec![TokenLogprob { token: REFUSAL_TEXT.into(), logprob: 0.0, alternatives: vec![] }];
            return Ok(self.finish(request, REFUSAL_TEXT.into(), tokens));
        }
        let z = self.female_logodds(job, persona, arm);
        let (ln_f, ln_m) = (-softplus(-z), -softplus(z));
        let female = u_gender < ln_f.exp();
        let (word, lp, alt, alt_lp) = if female { ("Ms", ln_f, "Mr", ln_m) } else { ("Mr", ln_m, "Ms", ln_f) };
        let tokens = vec![
            TokenLogprob {
                token: word.into(),
                logprob: lp,
                alternatives: vec![TopLogprob { token: alt.into(), logprob: alt_lp }],
            },
            TokenLogprob { token: ".".into(), logprob: 0.0, alternatives: vec![] },
            TokenLogprob { token: " X".into(), logprob: 0.0, alternatives: vec![] },
        ];
        Ok(self.finish(request, format!("{word}. X"), tokens))
    }

    fn rate(
        &self,
        request: &ChatRequest,
        identity: &str,
        dimension: crate::elicitation::TraitDimension,
        keyed: Keyed,
        run: u32,
        attempt: u32,
    ) -> Result<ChatResponse, GatewayError> {
        if recognize_prompt(request.prompt()) != Some(PromptShape::Tipi) || !request.prompt().contains(identity) {
            return Err(GatewayError::UnrecognizedPrompt(format!("not a TIPI prompt for {identity}")));
        }
        let reference = self
            .params
            .tipi_scores
            .get(identity)
            .copied()
            .or_else(|| data::figure(identity).map(|f| f.reference))
            .map(|s| s.get(dimension))
            .unwrap_or(4.0);
        let (run, attempt) = (run.to_string(), attempt.to_string());
        let mut rng = keyed_rng(
            self.params.seed,
            &["tipi", identity, dimension.as_str(), keyed.as_str(), &run, &attempt],
        );
        let text = if rng.random::<f64>() < self.params.tipi_unparsable_prob {
            "That is hard to say.".to_string()
        } else {
            let noise = if self.params.tipi_noise_sd > 0.0 {
                Normal::new(0.0, self.params.tipi_noise_sd).expect("sd checked").sample(&mut rng)
            } else {
                0.0
            };
            let s = (reference + noise).round().clamp(1.0, 7.0) as u8;
            match keyed {
                Keyed::Positive => s,
                Keyed::Negative => 8 - s,
            }
            .to_string()
        };
        let tokens = vec![TokenLogprob { token: text.clone(), logprob: 0.0, alternatives: vec![] }];
        Ok(self.finish(request, text, tokens))
    }

    fn finish(&self, request: &ChatRequest, text: String, tokens: Vec<TokenLogprob>) -> ChatResponse {
        let tokens = if request.want_logprobs { tokens } else { Vec::new() };
        ChatResponse { text, tokens }
    }
}

impl ChatBackend for MockRecruiter {
    fn complete(&self, request: &ChatRequest, context: &RequestContext<'_>) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        if request.want_logprobs && !self.params.emit_logprobs {
            return Err(GatewayError::Capability("mock configured without logprobs".into()));
        }
        match *context {
            RequestContext::Recommendation { job, persona, order_arm } => {
                self.recommend(request, job, persona, order_arm)
            }
            RequestContext::Tipi { identity, dimension, keyed, run, attempt } => {
                self.rate(request, identity, dimension, keyed, run, attempt)
            }
            RequestContext::None => Err(GatewayError::UnrecognizedPrompt(
                "the mock recruiter needs a request context".into(),
            )),
        }
    }

    fn identity(&self) -> String {
        format!("mock-recruiter:seed={}", self.params.seed)
    }
}
