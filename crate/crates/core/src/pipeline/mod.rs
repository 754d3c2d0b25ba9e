//! Batch orchestration: elicit every persona and order arm over the corpus
//! with a resumable record log, then compute summaries, sweeps, regressions
//! and lexical attribution into one output directory.

mod config;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    BackendConfig, EconConfig, EmbedderConfig, LexiconConfig, OccupationConfig, PersonaSet, RunConfig,
};
pub use report::{load_report, read_sweep_csv, render_report, ReportData, ReportFormat};

use crate::corpus::{load_corpus, trim_wage_outliers, ExplicitRequest, JobPosting};
use crate::econometrics::{
    liwc_association, skill_association, trait_segregation_regression, trait_wage_regression, wage_gap_regression,
    FigurePoint, RegressionResult, SkillOptions, WageGapOptions, WageGapResult, WageGapVariant,
};
use crate::elicitation::{
    elicit_one, rate_identity, read_records, trait_scores, write_record_line, CallbackRecord, ElicitationError,
    OrderArm, PersonaSpec, TipiRating, TraitScores,
};
use crate::gateway::{ChatBackend, GatewayError, HttpBackend, MockRecruiter};
use crate::lexicon::{
    attribution_scores, category_proportions, lasso_cv_fit, merge_external_lexicon, post_lasso_ols, preprocess,
    read_external_lexicon, tfidf_transform, write_attribution_csv, AttributionScore, CategoryDictionary,
    LexiconError, Vocabulary,
};
use crate::metrics::{
    default_grid, parity_interpolated, parity_point, summarize, threshold_sweep, write_sweep_csv, AuditSummary,
};
use crate::occupation::{
    assign_postings, build_profiles, read_assignments, read_profile_rows, write_assignments, Embedder, HashedBow,
    OccupationError, RemoteEmbedder,
};

pub const RUN_STATE_FILE: &str = "run_state.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARIES_FILE: &str = "summaries.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const TIPI_FILE: &str = "tipi.json";
pub const ATTRIBUTION_FILE: &str = "attribution.csv";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const RECORDS_DIR: &str = "records";
pub const SWEEPS_DIR: &str = "sweeps";
pub const REGRESSIONS_DIR: &str = "regressions";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for configuration and file-system problems, 3 for the endpoint,
    /// 4 for analysis failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } => 2,
            PipelineError::Transport(_) => 3,
            PipelineError::Analysis(_) | PipelineError::MissingArtifacts(_) => 4,
        }
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidRequest(m) => PipelineError::Config(m),
            other => PipelineError::Transport(other.to_string()),
        }
    }
}

impl From<ElicitationError> for PipelineError {
    fn from(e: ElicitationError) -> Self {
        match e {
            ElicitationError::Gateway(g) => g.into(),
            ElicitationError::Records(m) => PipelineError::Config(m),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl From<OccupationError> for PipelineError {
    fn from(e: OccupationError) -> Self {
        match e {
            OccupationError::Embedding(m) => PipelineError::Transport(m),
            OccupationError::Profiles(_) | OccupationError::Io(_) | OccupationError::Csv(_) => {
                PipelineError::Config(e.to_string())
            }
            other => PipelineError::Analysis(other.to_string()),
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Remove earlier outputs instead of resuming.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub backend: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub n_postings: usize,
    pub personas: Vec<String>,
    pub order_arms: Vec<OrderArm>,
    pub files: Vec<ManifestEntry>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(PipelineError::MissingArtifacts(vec![MANIFEST_FILE.into()]));
        }
        read_json(&path)
    }

    /// Files listed in the manifest that are missing or altered.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| match fs::read(dir.join(&f.path)) {
                Ok(bytes) => hex::encode(Sha256::digest(&bytes)) != f.sha256,
                Err(_) => true,
            })
            .map(|f| f.path.clone())
            .collect()
    }
}

/// One row of `summaries.json`; `order_arm` is absent for the pooled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub persona: String,
    pub order_arm: Option<OrderArm>,
    pub summary: AuditSummary,
    pub parity_rho: Option<f64>,
    pub parity_interpolated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFailure {
    pub variant: WageGapVariant,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageGapReport {
    pub persona: String,
    pub results: Vec<WageGapResult>,
    pub failures: Vec<VariantFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitReport {
    pub scores: BTreeMap<String, TraitScores>,
    pub segregation: Option<RegressionResult>,
    pub wage: Option<RegressionResult>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub n_matched: usize,
    pub match_share: f64,
    pub rank_correlation: Option<f64>,
    pub sign_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconReport {
    pub persona: String,
    pub n_documents: usize,
    pub vocabulary_size: usize,
    pub lambda_grid: Vec<f64>,
    pub chosen_lambda: f64,
    pub cv_r2: Vec<f64>,
    pub test_r2: Option<f64>,
    pub n_selected: usize,
    pub intercept_only: bool,
    pub merge: Option<MergeSummary>,
    pub warnings: Vec<String>,
}

/// What a finished run hands back; everything is also on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub summaries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    config_hash: String,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Analysis(e.to_string()))?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Analysis(format!("{}: {e}", path.display())))
}

pub fn records_file(persona: &PersonaSpec, arm: OrderArm) -> String {
    format!("{RECORDS_DIR}/{}__{}.jsonl", persona.slug(), arm.as_str())
}

pub fn build_backend(config: &RunConfig) -> Result<Box<dyn ChatBackend>> {
    match &config.backend {
        BackendConfig::Mock(p) => {
            let mut p = p.clone();
            p.seed = config.seed;
            Ok(Box::new(MockRecruiter::new(p)?))
        }
        BackendConfig::Http(e) => {
            Ok(Box::new(HttpBackend::new(e.clone()).map_err(|e| PipelineError::Config(e.to_string()))?))
        }
    }
}

pub fn run_audit(config: &RunConfig, opts: &RunOptions) -> Result<ReportBundle> {
    let backend = build_backend(config)?;
    run_audit_with_backend(config, backend.as_ref(), opts)
}

fn clear_outputs(out: &Path) -> Result<()> {
    for d in [RECORDS_DIR, SWEEPS_DIR, REGRESSIONS_DIR] {
        let p = out.join(d);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(io_err(&p))?;
        }
    }
    for f in
        [RUN_STATE_FILE, MANIFEST_FILE, SUMMARIES_FILE, ASSIGNMENTS_FILE, TIPI_FILE, ATTRIBUTION_FILE, LEXICON_FILE]
    {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn check_run_state(out: &Path, hash: &str) -> Result<()> {
    let path = out.join(RUN_STATE_FILE);
    if path.exists() {
        let state: RunState = read_json(&path)?;
        if state.config_hash != hash {
            return Err(PipelineError::Config(format!(
                "{} was produced by a different configuration (hash {} vs {hash}); use a new output directory or start fresh",
                out.display(),
                state.config_hash
            )));
        }
        return Ok(());
    }
    write_json(&path, &RunState { config_hash: hash.to_string() })
}

/// Cut an interrupted trailing line off a record log and read what remains.
fn prepare_log(path: &Path) -> Result<Vec<CallbackRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if keep != bytes.len() {
        log::warn!("dropping {} bytes of an unfinished record in {}", bytes.len() - keep, path.display());
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
    }
    Ok(read_records(path)?)
}

fn elicit_group(
    backend: &dyn ChatBackend,
    postings: &[JobPosting],
    persona: &PersonaSpec,
    arm: OrderArm,
    config: &RunConfig,
    pool: &rayon::ThreadPool,
    path: &Path,
) -> Result<Vec<CallbackRecord>> {
    let mut records = prepare_log(path)?;
    for (i, r) in records.iter().enumerate() {
        let expected = postings.get(i).map(|p| p.id.as_str());
        if expected != Some(r.posting_id.as_str()) || r.persona != *persona || r.order_arm != arm {
            return Err(PipelineError::Config(format!(
                "{} line {} does not continue the corpus in order",
                path.display(),
                i + 1
            )));
        }
    }
    if records.len() == postings.len() {
        return Ok(records);
    }
    log::info!("{} / {}: {} of {} already done", persona, arm.as_str(), records.len(), postings.len());
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let start = records.len();
    for chunk in postings[start..].chunks(config.chunk_size) {
        let results: Vec<Result<CallbackRecord, ElicitationError>> = pool.install(|| {
            chunk.par_iter().map(|job| elicit_one(backend, job, persona, arm, &config.elicit)).collect()
        });
        let mut buf = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(rec) if failure.is_none() => {
                    write_record_line(&mut buf, &rec).map_err(io_err(path))?;
                    records.push(rec);
                }
                Ok(_) => {}
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        file.write_all(&buf).map_err(io_err(path))?;
        file.flush().map_err(io_err(path))?;
        if let Some(e) = failure {
            return Err(e.into());
        }
    }
    Ok(records)
}

struct Context<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    files: Vec<String>,
    notes: Vec<String>,
}

impl Context<'_> {
    fn note(&mut self, msg: String) {
        log::warn!("{msg}");
        self.notes.push(msg);
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        write_json(&self.out.join(rel), value)?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

/// Run against an already constructed backend (a mock, or a wrapper used
/// to simulate failures).
pub fn run_audit_with_backend(
    config: &RunConfig,
    backend: &dyn ChatBackend,
    opts: &RunOptions,
) -> Result<ReportBundle> {
    let started_unix = now_unix();
    config.validate()?;
    let personas = config.personas.expand()?;
    let format = config.corpus_format()?;
    let postings = load_corpus(&config.corpus, format)
        .map_err(|e| PipelineError::Config(format!("corpus {}: {e}", config.corpus.display())))?;
    if postings.is_empty() {
        return Err(PipelineError::Config("corpus is empty".into()));
    }
    let out = config.output_dir.as_path();
    if opts.fresh {
        clear_outputs(out)?;
    }
    fs::create_dir_all(out.join(RECORDS_DIR)).map_err(io_err(out))?;
    let hash = config.hash();
    check_run_state(out, &hash)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.effective_parallelism())
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut cx = Context { config, out, files: vec![RUN_STATE_FILE.to_string()], notes: Vec::new() };
    let mut groups: Vec<(PersonaSpec, Vec<CallbackRecord>)> = Vec::new();
    for persona in &personas {
        let mut pooled = Vec::new();
        for &arm in &config.order_arms {
            let rel = records_file(persona, arm);
            pooled.extend(elicit_group(backend, &postings, persona, arm, config, &pool, &out.join(&rel))?);
            cx.files.push(rel);
        }
        groups.push((persona.clone(), pooled));
    }

    let log_wages: HashMap<String, f64> = match trim_wage_outliers(&postings) {
        Ok(points) => points.iter().map(|w| (w.posting_id.to_string(), w.log_wage)).collect(),
        Err(e) => {
            cx.note(format!("wage statistics skipped: {e}"));
            HashMap::new()
        }
    };
    let requests: HashMap<String, bool> = postings
        .iter()
        .filter_map(|p| match p.explicit_request {
            ExplicitRequest::Female => Some((p.id.clone(), true)),
            ExplicitRequest::Male => Some((p.id.clone(), false)),
            ExplicitRequest::None => None,
        })
        .collect();
    let occupations = occupation_stage(&mut cx, &postings)?;
    let grid = config.threshold_grid.clone().unwrap_or_else(default_grid);

    let mut summaries = Vec::new();
    let mut figure_points: Vec<FigurePoint> = Vec::new();
    let mut figure_wage_points: Vec<FigurePoint> = Vec::new();
    for (persona, records) in &groups {
        let summary = summarize(records, &occupations, &log_wages, &requests)
            .map_err(|e| PipelineError::Analysis(format!("{persona}: {e}")))?;
        let mut pooled = SummaryEntry {
            persona: persona.key(),
            order_arm: None,
            summary,
            parity_rho: None,
            parity_interpolated: None,
        };
        match threshold_sweep(records, &occupations, &log_wages, &grid) {
            Ok(points) => {
                let rel = format!("{SWEEPS_DIR}/{}.csv", persona.slug());
                let path = out.join(&rel);
                fs::create_dir_all(out.join(SWEEPS_DIR)).map_err(io_err(out))?;
                let f = fs::File::create(&path).map_err(io_err(&path))?;
                write_sweep_csv(f, &points).map_err(io_err(&path))?;
                cx.files.push(rel);
                pooled.parity_rho = parity_point(&points).map(|p| p.rho);
                pooled.parity_interpolated = parity_interpolated(&points);
                if let PersonaSpec::Identity { name } = persona {
                    for p in &points {
                        if let Some(d) = p.dissimilarity {
                            figure_points.push(FigurePoint { figure: name.clone(), rho: p.rho, fcr: p.fcr, value: d });
                        }
                        if let Some(w) = p.wage_gap_logpoints {
                            figure_wage_points.push(FigurePoint {
                                figure: name.clone(),
                                rho: p.rho,
                                fcr: p.fcr,
                                value: w,
                            });
                        }
                    }
                }
            }
            Err(e) => cx.note(format!("sweep for {persona} skipped: {e}")),
        }
        summaries.push(pooled);
        for &arm in &config.order_arms {
            let arm_records: Vec<CallbackRecord> = records.iter().filter(|r| r.order_arm == arm).cloned().collect();
            let summary = summarize(&arm_records, &occupations, &log_wages, &requests)
                .map_err(|e| PipelineError::Analysis(format!("{persona} / {}: {e}", arm.as_str())))?;
            summaries.push(SummaryEntry {
                persona: persona.key(),
                order_arm: Some(arm),
                summary,
                parity_rho: None,
                parity_interpolated: None,
            });
        }
        if !log_wages.is_empty() {
            let report = wage_gap_stage(&postings, records, &occupations, persona, config);
            cx.json(&format!("{REGRESSIONS_DIR}/{}__wage_gap.json", persona.slug()), &report)?;
        }
    }
    cx.json(SUMMARIES_FILE, &summaries)?;

    trait_stage(&mut cx, backend, &personas, &figure_points, &figure_wage_points)?;
    let p_female = |key: &str| -> Option<HashMap<String, f64>> {
        groups.iter().find(|(p, _)| p.key() == key).map(|(_, recs)| mean_female_probability(recs))
    };
    if !config.econ.skill_categories.is_empty() {
        let key = personas[0].key();
        let target = p_female(&key).unwrap_or_default();
        match skill_association(&postings, &target, &config.econ.skill_categories, &SkillOptions::default()) {
            Ok(r) => cx.json(&format!("{REGRESSIONS_DIR}/skills.json"), &r)?,
            Err(e) => cx.note(format!("skill association skipped: {e}")),
        }
    }
    if let Some(lc) = &config.lexicon {
        let persona: PersonaSpec =
            lc.persona.parse().map_err(|e| PipelineError::Config(format!("lexicon persona: {e}")))?;
        let target = p_female(&persona.key())
            .ok_or_else(|| PipelineError::Config(format!("lexicon persona `{persona}` is not in the run")))?;
        lexicon_stage(&mut cx, lc, &persona, &postings, &target)?;
    }

    let mut files = Vec::with_capacity(cx.files.len());
    for rel in &cx.files {
        let path = out.join(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        files.push(ManifestEntry { path: rel.clone(), sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 });
    }
    let manifest = Manifest {
        config_hash: hash,
        backend: backend.identity(),
        started_unix,
        finished_unix: now_unix(),
        n_postings: postings.len(),
        personas: personas.iter().map(PersonaSpec::key).collect(),
        order_arms: config.order_arms.clone(),
        files,
        notes: cx.notes.clone(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(ReportBundle { output_dir: out.to_path_buf(), manifest, summaries })
}

fn occupation_stage(cx: &mut Context, postings: &[JobPosting]) -> Result<HashMap<String, String>> {
    let Some(oc) = &cx.config.occupations else {
        cx.note("no occupation source configured; segregation statistics skipped".into());
        return Ok(HashMap::new());
    };
    let assignments = if let Some(path) = &oc.assignments {
        read_assignments(path)?
    } else {
        let profiles_path = oc.profiles.as_ref().expect("validated");
        let rows = read_profile_rows(profiles_path)?;
        let embedder: Box<dyn Embedder> = match &oc.embedder {
            EmbedderConfig::Hashed { dimension } => Box::new(HashedBow { dimension: *dimension }),
            EmbedderConfig::Remote { endpoint, dimension } => Box::new(RemoteEmbedder::new(endpoint.clone(), *dimension)?),
        };
        let profiles = build_profiles(&rows, embedder.as_ref())?;
        assign_postings(postings, &profiles, embedder.as_ref())?
    };
    let path = cx.out.join(ASSIGNMENTS_FILE);
    write_assignments(&path, &assignments)?;
    cx.files.push(ASSIGNMENTS_FILE.into());
    Ok(assignments.into_iter().map(|a| (a.posting_id, a.soc_code)).collect())
}

fn wage_gap_stage(
    postings: &[JobPosting],
    records: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    persona: &PersonaSpec,
    config: &RunConfig,
) -> WageGapReport {
    let opts = WageGapOptions { se_kind: config.econ.se_kind, common_sample: !occupations.is_empty() };
    let mut report = WageGapReport { persona: persona.key(), results: Vec::new(), failures: Vec::new() };
    for variant in WageGapVariant::ALL {
        match wage_gap_regression(postings, records, occupations, variant, &opts) {
            Ok(r) => report.results.push(r),
            Err(e) => report.failures.push(VariantFailure { variant, error: e.to_string() }),
        }
    }
    report
}

fn trait_stage(
    cx: &mut Context,
    backend: &dyn ChatBackend,
    personas: &[PersonaSpec],
    seg_points: &[FigurePoint],
    wage_points: &[FigurePoint],
) -> Result<()> {
    let figures: Vec<&str> = personas
        .iter()
        .filter_map(|p| match p {
            PersonaSpec::Identity { name } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    if figures.is_empty() || cx.config.econ.tipi_runs == 0 {
        return Ok(());
    }
    let tipi_path = cx.out.join(TIPI_FILE);
    let mut ratings: BTreeMap<String, Vec<TipiRating>> =
        if tipi_path.exists() { read_json(&tipi_path)? } else { BTreeMap::new() };
    let missing: Vec<&str> = figures.iter().copied().filter(|f| !ratings.contains_key(*f)).collect();
    if !missing.is_empty() {
        for f in missing {
            let r = rate_identity(backend, f, cx.config.econ.tipi_runs, &cx.config.elicit)?;
            ratings.insert(f.to_string(), r);
        }
        write_json(&tipi_path, &ratings)?;
    }
    cx.files.push(TIPI_FILE.into());
    let scores: BTreeMap<String, TraitScores> =
        ratings.iter().filter_map(|(f, r)| trait_scores(r).map(|s| (f.clone(), s))).collect();
    let lookup: HashMap<String, TraitScores> = scores.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut report = TraitReport { scores, segregation: None, wage: None, notes: Vec::new() };
    match trait_segregation_regression(seg_points, &lookup) {
        Ok(r) => report.segregation = Some(r),
        Err(e) => report.notes.push(format!("segregation regression: {e}")),
    }
    match trait_wage_regression(wage_points, &lookup) {
        Ok(r) => report.wage = Some(r),
        Err(e) => report.notes.push(format!("wage regression: {e}")),
    }
    cx.json(&format!("{REGRESSIONS_DIR}/traits.json"), &report)
}

/// Per-posting mean female probability over the answered records; the
/// recommendation itself stands in when no probability was captured.
pub fn mean_female_probability(records: &[CallbackRecord]) -> HashMap<String, f64> {
    let mut acc: HashMap<String, (f64, usize)> = HashMap::new();
    for r in records {
        let p = match (r.p_female, r.is_female()) {
            (Some(p), _) => p,
            (None, Some(f)) => f64::from(u8::from(f)),
            (None, None) => continue,
        };
        let e = acc.entry(r.posting_id.clone()).or_default();
        e.0 += p;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Results of the lexical attribution stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconOutput {
    pub report: LexiconReport,
    pub scores: Vec<AttributionScore>,
    pub post_lasso: Option<RegressionResult>,
    pub dictionary: Option<RegressionResult>,
    pub notes: Vec<String>,
}

/// TF-IDF, cross-validated Lasso, post-Lasso attribution, optional external
/// lexicon merge and dictionary regression. `target` maps posting id to the
/// female callback probability. `None` when the vocabulary is empty.
pub fn fit_lexicon(
    lc: &LexiconConfig,
    persona: &PersonaSpec,
    postings: &[JobPosting],
    target: &HashMap<String, f64>,
    seed: u64,
) -> Result<Option<LexiconOutput>> {
    let rows: Vec<(&JobPosting, f64)> =
        postings.iter().filter_map(|p| target.get(&p.id).map(|y| (p, y.clamp(0.0, 1.0)))).collect();
    let docs: Vec<Vec<String>> = rows.par_iter().map(|(p, _)| preprocess(&p.job_text())).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let vocab = Vocabulary::build(&docs, lc.vocabulary.min_df, lc.vocabulary.max_df_share);
    let analysis = |e: LexiconError| PipelineError::Analysis(format!("lexicon: {e}"));
    if vocab.is_empty() {
        return Ok(None);
    }
    let mut notes = Vec::new();
    let x = tfidf_transform(&docs, &vocab);
    let fit = lasso_cv_fit(&x, &y, &lc.lasso_options(seed)).map_err(analysis)?;
    let selected = fit.selected();
    let mut scores: Vec<AttributionScore> = Vec::new();
    let mut post_lasso = None;
    if selected.is_empty() {
        notes.push("lexicon: no terms selected".into());
    } else {
        let all: Vec<usize> = (0..y.len()).collect();
        let post = post_lasso_ols(&x, &y, &all, &selected, &vocab).map_err(analysis)?;
        scores = attribution_scores(&post, &vocab);
        post_lasso = Some(post);
    }
    let mut merge = None;
    if let Some(ext_path) = &lc.external {
        let ext = read_external_lexicon(ext_path).map_err(|e| PipelineError::Config(e.to_string()))?;
        let m = merge_external_lexicon(&scores, &ext);
        if m.rows.is_empty() {
            notes.push("no attributed term appears in the external lexicon".into());
        }
        merge = Some(MergeSummary {
            n_matched: m.rows.len(),
            match_share: m.match_share,
            rank_correlation: m.rank_correlation,
            sign_correlation: m.sign_correlation,
        });
        scores = m.annotated;
    }
    let mut dictionary = None;
    if let Some(dict_path) = &lc.dictionary {
        let dict = CategoryDictionary::from_file(dict_path).map_err(|e| PipelineError::Config(e.to_string()))?;
        let profiles: Vec<Vec<f64>> = docs.par_iter().map(|d| category_proportions(d, &dict).proportions).collect();
        let features: Vec<(String, Vec<f64>)> = dict
            .names()
            .iter()
            .enumerate()
            .map(|(k, name)| (name.to_string(), profiles.iter().map(|p| p[k]).collect()))
            .collect();
        match liwc_association(&features, &y) {
            Ok(r) => dictionary = Some(r),
            Err(e) => notes.push(format!("dictionary regression skipped: {e}")),
        }
    }
    let report = LexiconReport {
        persona: persona.key(),
        n_documents: docs.len(),
        vocabulary_size: vocab.len(),
        lambda_grid: fit.lambda_grid.clone(),
        chosen_lambda: fit.chosen_lambda,
        cv_r2: fit.cv_r2.clone(),
        test_r2: fit.test_r2,
        n_selected: selected.len(),
        intercept_only: fit.intercept_only,
        merge,
        warnings: fit.warnings,
    };
    Ok(Some(LexiconOutput { report, scores, post_lasso, dictionary, notes }))
}

pub fn write_attribution_file(path: &Path, scores: &[AttributionScore]) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    write_attribution_csv(f, scores).map_err(|e| PipelineError::Analysis(e.to_string()))
}

fn lexicon_stage(
    cx: &mut Context,
    lc: &LexiconConfig,
    persona: &PersonaSpec,
    postings: &[JobPosting],
    target: &HashMap<String, f64>,
) -> Result<()> {
    let Some(out) = fit_lexicon(lc, persona, postings, target, cx.config.seed)? else {
        cx.note("lexicon skipped: empty vocabulary".into());
        return Ok(());
    };
    for n in out.notes {
        cx.note(n);
    }
    if let Some(post) = &out.post_lasso {
        cx.json(&format!("{REGRESSIONS_DIR}/post_lasso.json"), post)?;
    }
    write_attribution_file(&cx.out.join(ATTRIBUTION_FILE), &out.scores)?;
    cx.files.push(ATTRIBUTION_FILE.into());
    cx.json(LEXICON_FILE, &out.report)?;
    if let Some(r) = &out.dictionary {
        cx.json(&format!("{REGRESSIONS_DIR}/dictionary.json"), r)?;
    }
    Ok(())
}
