//! Nearest-neighbour occupation assignment over text embeddings.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::JobPosting;
use crate::gateway::EndpointConfig;
use crate::keyed::fnv1a64;

#[derive(Debug, Error)]
pub enum OccupationError {
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no occupation profiles")]
    NoProfiles,
    #[error("malformed SOC code `{0}`")]
    MalformedCode(String),
    #[error("unsupported SOC level {0} (use 2, 3, 4 or 6)")]
    BadLevel(u8),
    #[error("profile file: {0}")]
    Profiles(String),
    #[error("embedding endpoint: {0}")]
    Embedding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, OccupationError>;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OccupationError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(OccupationError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Validate `dd-dddd`.
pub fn check_soc_code(code: &str) -> Result<()> {
    let b = code.as_bytes();
    let ok = b.len() == 7
        && b[2] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 2 || c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(OccupationError::MalformedCode(code.to_string()))
    }
}

/// SOC prefix at a hierarchy level: 2 major group (`47`), 3 minor group
/// (`47-2`), 4 broad occupation (`47-203`), 6 detailed (`47-2031`).
pub fn aggregate_level(code: &str, level: u8) -> Result<String> {
    check_soc_code(code)?;
    let n = match level {
        2 => 2,
        3 => 4,
        4 => 6,
        6 => 7,
        other => return Err(OccupationError::BadLevel(other)),
    };
    Ok(code[..n].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub soc_code: String,
    pub title: String,
    #[serde(default)]
    pub alt_titles: String,
    #[serde(default)]
    pub tasks: String,
    #[serde(default)]
    pub knowledge: String,
}

impl ProfileRow {
    pub fn summary_text(&self) -> String {
        [&self.title, &self.alt_titles, &self.tasks, &self.knowledge]
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(". ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationProfile {
    pub soc_code: String,
    pub title: String,
    pub summary_text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationAssignment {
    pub posting_id: String,
    pub soc_code: String,
    pub similarity: f64,
}

pub fn read_profile_rows(path: &Path) -> Result<Vec<ProfileRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = rec.map_err(|e| OccupationError::Profiles(format!("row {}: {e}", i + 1)))?;
        check_soc_code(&row.soc_code)?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(OccupationError::NoProfiles);
    }
    Ok(rows)
}

pub fn write_profile_rows(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    fn identity(&self) -> String;
}

/// Hashed term-frequency vectors: lowercase alphanumeric tokens, FNV-1a
/// 64-bit hash modulo the dimension, L2-normalised.
#[derive(Debug, Clone, Copy)]
pub struct HashedBow {
    pub dimension: usize,
}

impl Default for HashedBow {
    fn default() -> Self {
        HashedBow { dimension: 512 }
    }
}

impl HashedBow {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = fnv1a64(&tok.to_lowercase());
            v[(h % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashedBow {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
    fn identity(&self) -> String {
        format!("hashed-bow:{}", self.dimension)
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct RemoteEmbedder {
    config: EndpointConfig,
    dimension: usize,
    batch: usize,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(config: EndpointConfig, dimension: usize) -> Result<Self> {
        let token = match &config.auth_token_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| OccupationError::Embedding(format!("{var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| OccupationError::Embedding(e.to_string()))?;
        Ok(RemoteEmbedder { config, dimension, batch: 64, client, token })
    }

    fn call(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({ "model": self.config.model, "input": texts });
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_base_ms << (attempt - 1).min(16)));
            }
            let mut req = self.client.post(&url).json(&body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp.text().map_err(|e| OccupationError::Embedding(e.to_string()))?;
            if !(200..300).contains(&status) {
                last = format!("HTTP {status}: {text}");
                if matches!(status, 429 | 500 | 502 | 503 | 504) {
                    continue;
                }
                break;
            }
            let v: Value = serde_json::from_str(&text).map_err(|e| OccupationError::Embedding(e.to_string()))?;
            let data = v["data"].as_array().ok_or_else(|| OccupationError::Embedding("no data array".into()))?;
            let mut out = vec![Vec::new(); texts.len()];
            for (pos, item) in data.iter().enumerate() {
                let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                let emb: Vec<f64> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| OccupationError::Embedding("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(f64::NAN))
                    .collect();
                if emb.len() != self.dimension {
                    return Err(OccupationError::DimensionMismatch(emb.len(), self.dimension));
                }
                *out.get_mut(idx).ok_or_else(|| OccupationError::Embedding("index out of range".into()))? = emb;
            }
            if out.iter().any(Vec::is_empty) {
                return Err(OccupationError::Embedding("response is missing inputs".into()));
            }
            return Ok(out);
        }
        Err(OccupationError::Embedding(last))
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch) {
            out.extend(self.call(chunk)?);
        }
        Ok(out)
    }
    fn identity(&self) -> String {
        format!("remote:{}#{}", self.config.base_url, self.config.model)
    }
}

pub fn build_profiles(rows: &[ProfileRow], embedder: &dyn Embedder) -> Result<Vec<OccupationProfile>> {
    if rows.is_empty() {
        return Err(OccupationError::NoProfiles);
    }
    let texts: Vec<String> = rows.iter().map(ProfileRow::summary_text).collect();
    let vectors = embedder.embed(&texts)?;
    rows.iter()
        .zip(texts)
        .zip(vectors)
        .map(|((r, summary_text), embedding)| {
            check_soc_code(&r.soc_code)?;
            if embedding.len() != embedder.dimension() {
                return Err(OccupationError::DimensionMismatch(embedding.len(), embedder.dimension()));
            }
            Ok(OccupationProfile { soc_code: r.soc_code.clone(), title: r.title.clone(), summary_text, embedding })
        })
        .collect()
}

/// Best profile by cosine similarity; ties go to the smallest code.
pub fn assign_occupation(
    posting_id: &str,
    job_embedding: &[f64],
    profiles: &[OccupationProfile],
) -> Result<OccupationAssignment> {
    let mut best: Option<(f64, &str)> = None;
    for p in profiles {
        let s = cosine_similarity(job_embedding, &p.embedding)?;
        let better = match best {
            None => true,
            Some((bs, bc)) => s > bs || (s == bs && p.soc_code.as_str() < bc),
        };
        if better {
            best = Some((s, &p.soc_code));
        }
    }
    let (similarity, code) = best.ok_or(OccupationError::NoProfiles)?;
    Ok(OccupationAssignment { posting_id: posting_id.to_string(), soc_code: code.to_string(), similarity })
}

/// Assign every posting, in parallel.
pub fn assign_postings(
    postings: &[JobPosting],
    profiles: &[OccupationProfile],
    embedder: &dyn Embedder,
) -> Result<Vec<OccupationAssignment>> {
    if profiles.is_empty() {
        return Err(OccupationError::NoProfiles);
    }
    let texts: Vec<String> = postings.iter().map(JobPosting::job_text).collect();
    let vectors = embedder.embed(&texts)?;
    postings
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(p, v)| assign_occupation(&p.id, v, profiles))
        .collect()
}

pub fn write_assignments(path: &Path, assignments: &[OccupationAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in assignments {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments(path: &Path) -> Result<Vec<OccupationAssignment>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let a: OccupationAssignment = rec?;
        check_soc_code(&a.soc_code)?;
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthConfig};
    use proptest::prelude::*;

    fn profile(code: &str, v: Vec<f64>) -> OccupationProfile {
        OccupationProfile { soc_code: code.into(), title: code.into(), summary_text: String::new(), embedding: v }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(OccupationError::ZeroVector)));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(OccupationError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn assignment_examples() {
        let one = [profile("11-1011", vec![0.0, 1.0])];
        assert_eq!(assign_occupation("j", &[1.0, 0.0], &one).unwrap().soc_code, "11-1011");
        let ps = [profile("47-2031", vec![1.0, 0.2]), profile("29-1141", vec![0.3, 0.9])];
        let a = assign_occupation("j", &[0.3, 0.9], &ps).unwrap();
        assert_eq!(a.soc_code, "29-1141");
        assert!((a.similarity - 1.0).abs() < 1e-12);
        // Both at cosine 0.8 from (1, 0).
        let ties = [profile("53-3032", vec![0.8, 0.6]), profile("47-2111", vec![0.8, -0.6])];
        let a = assign_occupation("j", &[1.0, 0.0], &ties).unwrap();
        assert_eq!(a.soc_code, "47-2111");
        assert!((a.similarity - 0.8).abs() < 1e-12);
        assert!(matches!(assign_occupation("j", &[1.0], &[]), Err(OccupationError::NoProfiles)));
    }

    #[test]
    fn levels() {
        assert_eq!(aggregate_level("47-2031", 2).unwrap(), "47");
        assert_eq!(aggregate_level("47-2031", 3).unwrap(), "47-2");
        assert_eq!(aggregate_level("47-2031", 4).unwrap(), "47-203");
        assert_eq!(aggregate_level("47-2031", 6).unwrap(), "47-2031");
        assert!(matches!(aggregate_level("4-7203", 2), Err(OccupationError::MalformedCode(_))));
        assert!(matches!(aggregate_level("47-2031", 5), Err(OccupationError::BadLevel(5))));
    }

    #[test]
    fn hashed_bow_is_deterministic_and_normalised() {
        let e = HashedBow::default();
        let a = e.embed_one("Electrician wiring, WIRING");
        assert_eq!(a, e.embed_one("electrician wiring wiring"));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.embed_one("").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn stub_recovers_synthetic_occupations() {
        let corpus = synthesize_corpus(&SynthConfig::demo(2000), 5).unwrap();
        let rows = corpus.profile_rows();
        let e = HashedBow::default();
        let profiles = build_profiles(&rows, &e).unwrap();
        let assigned = assign_postings(&corpus.postings, &profiles, &e).unwrap();
        let hits = assigned.iter().zip(&corpus.truth).filter(|(a, t)| a.soc_code == t.soc_code).count();
        assert!(hits as f64 / corpus.postings.len() as f64 >= 0.95, "{hits}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ProfileRow {
            soc_code: "47-2111".into(),
            title: "Electricians".into(),
            alt_titles: "Wireman; Electrical Technician".into(),
            tasks: "Install wiring, \"conduit\"".into(),
            knowledge: String::new(),
        }];
        let p = dir.path().join("profiles.csv");
        write_profile_rows(&p, &rows).unwrap();
        assert_eq!(read_profile_rows(&p).unwrap(), rows);
        let a = vec![OccupationAssignment { posting_id: "x".into(), soc_code: "47-2111".into(), similarity: 0.25 }];
        let p = dir.path().join("a.csv");
        write_assignments(&p, &a).unwrap();
        assert_eq!(read_assignments(&p).unwrap(), a);
    }

    proptest! {
        #[test]
        fn positive_rescaling_is_invariant(
            job in prop::collection::vec(-5.0f64..5.0, 4),
            profs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..6),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(job.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(profs.iter().all(|p| p.iter().any(|x| x.abs() > 1e-3)));
            let ps: Vec<_> = profs.into_iter().enumerate()
                .map(|(i, v)| profile(&format!("11-{:04}", i), v)).collect();
            let a = assign_occupation("j", &job, &ps).unwrap();
            let scaled: Vec<f64> = job.iter().map(|x| x * c).collect();
            let b = assign_occupation("j", &scaled, &ps).unwrap();
            prop_assert!((a.similarity - b.similarity).abs() < 1e-12);
            let sa = cosine_similarity(&job, &ps.iter().find(|p| p.soc_code == b.soc_code).unwrap().embedding).unwrap();
            prop_assert!((sa - a.similarity).abs() < 1e-12);
        }
    }
}
