use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::corpus::CorpusFormat;
use crate::econometrics::SeKind;
use crate::elicitation::{ElicitOptions, OrderArm, PersonaSpec, TraitDimension};
use crate::gateway::EndpointConfig;
use crate::gateway::MockRecruiterParams;
use crate::lexicon::{LassoOptions, VocabularyOptions};

/// Everything needed to run one audit. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub corpus_format: Option<CorpusFormat>,
    pub output_dir: PathBuf,
    /// Overrides the mock seed and seeds the Lasso split.
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendConfig,
    #[serde(default)]
    pub personas: PersonaSet,
    #[serde(default = "default_arms")]
    pub order_arms: Vec<OrderArm>,
    #[serde(default)]
    pub elicit: ElicitOptions,
    /// Thresholds for the sweep; the 0.01..0.99 grid when absent.
    #[serde(default)]
    pub threshold_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub occupations: Option<OccupationConfig>,
    #[serde(default)]
    pub econ: EconConfig,
    #[serde(default)]
    pub lexicon: Option<LexiconConfig>,
    /// Postings elicited between flushes of the record log.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    /// Concurrent requests; the endpoint setting when absent.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

fn default_arms() -> Vec<OrderArm> {
    vec![OrderArm::MrFirst, OrderArm::MsFirst]
}

fn default_chunk() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockRecruiterParams),
    Http(EndpointConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaSet {
    pub base: bool,
    /// Trait poles such as `openness+`, or `all` for all ten.
    pub traits: Vec<String>,
    /// Named public figures.
    pub figures: Vec<String>,
}

impl Default for PersonaSet {
    fn default() -> Self {
        PersonaSet { base: true, traits: Vec::new(), figures: Vec::new() }
    }
}

impl PersonaSet {
    pub fn expand(&self) -> Result<Vec<PersonaSpec>, PipelineError> {
        let mut out = Vec::new();
        if self.base {
            out.push(PersonaSpec::Base);
        }
        for t in &self.traits {
            if t == "all" {
                for dimension in TraitDimension::ALL {
                    for keyed in [crate::elicitation::Keyed::Positive, crate::elicitation::Keyed::Negative] {
                        out.push(PersonaSpec::Trait { dimension, keyed });
                    }
                }
                continue;
            }
            let p: PersonaSpec = t.parse().map_err(|e| PipelineError::Config(format!("persona `{t}`: {e}")))?;
            if !matches!(p, PersonaSpec::Trait { .. }) {
                return Err(PipelineError::Config(format!("`{t}` is not a trait persona")));
            }
            out.push(p);
        }
        for f in &self.figures {
            if f.trim().is_empty() {
                return Err(PipelineError::Config("empty figure name".into()));
            }
            if crate::elicitation::data::figure(f.trim()).is_none() {
                return Err(PipelineError::Config(format!("`{f}` is not in the shipped list of figures")));
            }
            out.push(PersonaSpec::Identity { name: f.trim().to_string() });
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &out {
            if !seen.insert(p.key()) {
                return Err(PipelineError::Config(format!("persona `{p}` listed twice")));
            }
        }
        if out.is_empty() {
            return Err(PipelineError::Config("no personas to run".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationConfig {
    /// Occupation profile CSV to embed and match against.
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    /// Precomputed assignments CSV; takes precedence over `profiles`.
    #[serde(default)]
    pub assignments: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hashed { dimension: usize },
    Remote { endpoint: EndpointConfig, dimension: usize },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed { dimension: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconConfig {
    pub se_kind: SeKind,
    /// TIPI repetitions per figure and item.
    pub tipi_runs: u32,
    /// Skill categories (posting skill tags) for the association regression.
    pub skill_categories: Vec<String>,
}

impl Default for EconConfig {
    fn default() -> Self {
        EconConfig { se_kind: SeKind::Hc1, tipi_runs: 10, skill_categories: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// Persona whose callback probabilities are the target (`base` by default).
    pub persona: String,
    pub vocabulary: VocabularyOptions,
    pub folds: usize,
    pub n_lambdas: usize,
    pub test_fraction: f64,
    /// `category: word, prefix*` dictionary for category profiles.
    pub dictionary: Option<PathBuf>,
    /// `term,category,human_score` CSV to merge with the attribution scores.
    pub external: Option<PathBuf>,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        let l = LassoOptions::default();
        LexiconConfig {
            persona: "base".into(),
            vocabulary: VocabularyOptions::default(),
            folds: l.folds,
            n_lambdas: l.n_lambdas,
            test_fraction: l.test_fraction,
            dictionary: None,
            external: None,
        }
    }
}

impl LexiconConfig {
    pub fn lasso_options(&self, seed: u64) -> LassoOptions {
        LassoOptions {
            folds: self.folds,
            n_lambdas: self.n_lambdas,
            test_fraction: self.test_fraction,
            seed,
            ..LassoOptions::default()
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let c: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parse a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(c.resolved(base))
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        if let Some(o) = &mut self.occupations {
            o.profiles.as_mut().map(fix);
            o.assignments.as_mut().map(fix);
        }
        if let Some(l) = &mut self.lexicon {
            l.dictionary.as_mut().map(fix);
            l.external.as_mut().map(fix);
        }
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.personas.expand()?;
        if self.order_arms.is_empty() {
            return bad("no order arms".into());
        }
        let mut arms = self.order_arms.clone();
        arms.sort();
        arms.dedup();
        if arms.len() != self.order_arms.len() {
            return bad("order arm listed twice".into());
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive".into());
        }
        if self.parallelism == Some(0) {
            return bad("parallelism must be positive".into());
        }
        if let Some(g) = &self.threshold_grid {
            if g.is_empty() || g.iter().any(|r| !(0.0..=1.0).contains(r)) || g.windows(2).any(|w| w[0] >= w[1]) {
                return bad("threshold_grid must be ascending values in [0, 1]".into());
            }
        }
        if let Some(o) = &self.occupations {
            if o.profiles.is_none() && o.assignments.is_none() {
                return bad("occupations needs `profiles` or `assignments`".into());
            }
        }
        if let BackendConfig::Mock(m) = &self.backend {
            m.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The output directory is left
    /// out so the same audit written to two places hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat, PipelineError> {
        self.corpus_format.or_else(|| CorpusFormat::from_path(&self.corpus)).ok_or_else(|| {
            PipelineError::Config(format!("cannot tell the format of {}; set corpus_format", self.corpus.display()))
        })
    }

    pub fn effective_parallelism(&self) -> usize {
        self.parallelism.unwrap_or(match &self.backend {
            BackendConfig::Http(e) => e.parallelism.max(1),
            BackendConfig::Mock(_) => std::thread::available_parallelism().map_or(4, |n| n.get()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
corpus = "corpus.jsonl"
output_dir = "out"
seed = 3

[backend]
kind = "mock"
base_female_logodds = -0.4

[personas]
traits = ["openness+", "agreeableness-"]
figures = ["James Watson"]
"#;

    #[test]
    fn parses_and_expands() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.order_arms, vec![OrderArm::MrFirst, OrderArm::MsFirst]);
        let p = c.personas.expand().unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0], PersonaSpec::Base);
        match &c.backend {
            BackendConfig::Mock(m) => assert_eq!(m.base_female_logodds, -0.4),
            _ => panic!(),
        }
        let r = c.clone().resolved(Path::new("/data"));
        assert_eq!(r.corpus, Path::new("/data/corpus.jsonl"));
        assert_eq!(c.hash(), RunConfig::from_toml(&c.to_toml().unwrap()).unwrap().hash());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
        let none = MINIMAL.replace("[personas]", "[personas]\nbase = false").replace(
            "traits = [\"openness+\", \"agreeableness-\"]\nfigures = [\"James Watson\"]",
            "",
        );
        assert!(matches!(RunConfig::from_toml(&none), Err(PipelineError::Config(_))));
        assert!(RunConfig::from_toml(&MINIMAL.replace("openness+", "bogus")).is_err());
        assert!(RunConfig::from_toml(&MINIMAL.replace("openness+", "agreeableness-")).is_err());
        let all = MINIMAL.replace("\"openness+\", \"agreeableness-\"", "\"all\"");
        assert_eq!(RunConfig::from_toml(&all).unwrap().personas.expand().unwrap().len(), 12);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let b = RunConfig::from_toml(&MINIMAL.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
