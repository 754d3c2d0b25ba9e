//! Job-posting corpora: loading, validation, explicit-request detection and
//! wage trimming.

mod io;
mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_corpus, read_corpus, write_corpus, CorpusFormat};
pub use synth::{
    synthesize_corpus, GenderedKeyword, KeywordLean, OccupationSeed, PostingTruth, SynthConfig,
    SyntheticCorpus,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: field `{field}`: {message}")]
    Field {
        row: usize,
        field: String,
        message: String,
    },
    #[error("row {row}: duplicate posting id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: missing required column `{column}`")]
    MissingColumn { row: usize, column: String },
    #[error("need at least 2 wage observations, found {0}")]
    TooFewWages(usize),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Education {
    Secondary,
    SeniorSecondary,
    Diploma,
    Graduate,
    Postgraduate,
    #[default]
    Unspecified,
}

impl Education {
    pub fn as_str(self) -> &'static str {
        match self {
            Education::Secondary => "secondary",
            Education::SeniorSecondary => "senior_secondary",
            Education::Diploma => "diploma",
            Education::Graduate => "graduate",
            Education::Postgraduate => "postgraduate",
            Education::Unspecified => "unspecified",
        }
    }
}

impl FromStr for Education {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "secondary" => Education::Secondary,
            "senior_secondary" => Education::SeniorSecondary,
            "diploma" => Education::Diploma,
            "graduate" => Education::Graduate,
            "postgraduate" => Education::Postgraduate,
            "" | "unspecified" => Education::Unspecified,
            other => return Err(format!("unknown education level `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobType {
    FullTime,
    PartTime,
    Internship,
}

impl JobType {
    pub fn as_str(self) -> &'static str {
        match self {
            JobType::FullTime => "full_time",
            JobType::PartTime => "part_time",
            JobType::Internship => "internship",
        }
    }
}

impl FromStr for JobType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "full_time" => JobType::FullTime,
            "part_time" => JobType::PartTime,
            "internship" => JobType::Internship,
            other => return Err(format!("unknown job type `{other}`")),
        })
    }
}

/// Gender explicitly requested by the advertisement text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplicitRequest {
    Male,
    Female,
    #[default]
    None,
}

/// Calendar month, rendered as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MonthYear {
    pub year: u16,
    pub month: u8,
}

impl fmt::Display for MonthYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthYear {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("expected YYYY-MM, got `{s}`");
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: u16 = y.parse().map_err(|_| bad())?;
        let month: u8 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(MonthYear { year, month })
    }
}

impl Serialize for MonthYear {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthYear {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Posted wage range in currency units per year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WageRange {
    pub low: f64,
    pub high: f64,
}

impl WageRange {
    pub fn new(low: f64, high: f64) -> Result<Self, String> {
        if !(low.is_finite() && high.is_finite()) || low <= 0.0 {
            return Err(format!("wage must be positive and finite, got ({low}, {high})"));
        }
        if low > high {
            return Err(format!("wage low {low} exceeds high {high}"));
        }
        Ok(WageRange { low, high })
    }

    pub fn midpoint(&self) -> f64 {
        (self.low + self.high) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPosting {
    pub id: String,
    pub title: String,
    pub description: String,
    pub wage_range: Option<WageRange>,
    #[serde(default)]
    pub education: Education,
    pub experience_years: Option<f64>,
    pub sector: Option<String>,
    pub org_type: Option<String>,
    pub job_type: Option<JobType>,
    pub state: Option<String>,
    pub month_year: Option<MonthYear>,
    #[serde(default)]
    pub skill_tags: BTreeSet<String>,
    #[serde(default)]
    pub explicit_request: ExplicitRequest,
}

impl JobPosting {
    /// Minimal posting; `explicit_request` is derived from the text.
    pub fn new(id: impl Into<String>, title: impl Into<String>, description: impl Into<String>) -> Self {
        let title = title.into();
        let description = description.into();
        let explicit_request = detect_explicit_request(&title, &description);
        JobPosting {
            id: id.into(),
            title,
            description,
            wage_range: None,
            education: Education::Unspecified,
            experience_years: None,
            sector: None,
            org_type: None,
            job_type: None,
            state: None,
            month_year: None,
            skill_tags: BTreeSet::new(),
            explicit_request,
        }
    }

    /// Title and description joined by a single space. An empty side is
    /// skipped so no stray space is produced.
    pub fn job_text(&self) -> String {
        let t = self.title.trim();
        let d = self.description.trim();
        match (t.is_empty(), d.is_empty()) {
            (false, false) => format!("{t} {d}"),
            (false, true) => t.to_string(),
            (true, false) => d.to_string(),
            (true, true) => String::new(),
        }
    }

    pub fn log_wage(&self) -> Option<f64> {
        self.wage_range.map(|w| w.midpoint().ln())
    }

    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        if self.id.trim().is_empty() {
            return Err(("id".into(), "empty id".into()));
        }
        if self.job_text().is_empty() {
            return Err(("title".into(), "title and description are both empty".into()));
        }
        if let Some(w) = self.wage_range {
            WageRange::new(w.low, w.high).map_err(|m| ("wage_low".to_string(), m))?;
        }
        if let Some(e) = self.experience_years {
            if !(e.is_finite() && e >= 0.0) {
                return Err(("experience".into(), format!("must be non-negative, got {e}")));
            }
        }
        Ok(())
    }
}

/// How `male` / `female` are located in the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMatch {
    /// Whole lowercase alphanumeric tokens.
    #[default]
    WordBoundary,
    /// Raw substrings; occurrences of `male` inside `female` are discounted.
    Substring,
}

pub fn detect_explicit_request(title: &str, description: &str) -> ExplicitRequest {
    detect_explicit_request_with(title, description, RequestMatch::WordBoundary)
}

pub fn detect_explicit_request_with(
    title: &str,
    description: &str,
    mode: RequestMatch,
) -> ExplicitRequest {
    let text = format!("{title} {description}").to_lowercase();
    let (male, female) = match mode {
        RequestMatch::WordBoundary => {
            let mut male = false;
            let mut female = false;
            for tok in text.split(|c: char| !c.is_alphanumeric()) {
                match tok {
                    "male" => male = true,
                    "female" => female = true,
                    _ => {}
                }
            }
            (male, female)
        }
        RequestMatch::Substring => {
            let n_female = text.matches("female").count();
            let n_male = text.matches("male").count();
            (n_male > n_female, n_female > 0)
        }
    };
    match (male, female) {
        (true, false) => ExplicitRequest::Male,
        (false, true) => ExplicitRequest::Female,
        _ => ExplicitRequest::None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WagePoint<'a> {
    pub posting_id: &'a str,
    pub log_wage: f64,
}

/// Inclusive wage bounds at the 1st and 99th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WageBounds {
    pub lower: f64,
    pub upper: f64,
}

impl WageBounds {
    pub fn contains(&self, wage: f64) -> bool {
        wage >= self.lower && wage <= self.upper
    }
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn wage_bounds(postings: &[JobPosting]) -> Result<WageBounds> {
    let mut mids: Vec<f64> = postings
        .iter()
        .filter_map(|p| p.wage_range.map(|w| w.midpoint()))
        .collect();
    if mids.len() < 2 {
        return Err(CorpusError::TooFewWages(mids.len()));
    }
    if mids.len() < 100 {
        log::warn!("only {} wage observations; percentile bounds are unstable", mids.len());
    }
    mids.sort_by(f64::total_cmp);
    Ok(WageBounds {
        lower: quantile_sorted(&mids, 0.01),
        upper: quantile_sorted(&mids, 0.99),
    })
}

/// Log-wage points of postings whose wage mid-point lies within the
/// [p1, p99] band of the wage distribution.
pub fn trim_wage_outliers(postings: &[JobPosting]) -> Result<Vec<WagePoint<'_>>> {
    let bounds = wage_bounds(postings)?;
    Ok(trim_with_bounds(postings, bounds))
}

pub fn trim_with_bounds(postings: &[JobPosting], bounds: WageBounds) -> Vec<WagePoint<'_>> {
    postings
        .iter()
        .filter_map(|p| {
            let mid = p.wage_range?.midpoint();
            bounds.contains(mid).then(|| WagePoint {
                posting_id: &p.id,
                log_wage: mid.ln(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_postings: usize,
    pub share_with_wage: f64,
    pub share_explicit_male: f64,
    pub share_explicit_female: f64,
}

pub fn corpus_stats(postings: &[JobPosting]) -> CorpusStats {
    let n = postings.len();
    let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let count = |f: &dyn Fn(&JobPosting) -> bool| postings.iter().filter(|p| f(p)).count();
    CorpusStats {
        n_postings: n,
        share_with_wage: share(count(&|p| p.wage_range.is_some())),
        share_explicit_male: share(count(&|p| p.explicit_request == ExplicitRequest::Male)),
        share_explicit_female: share(count(&|p| p.explicit_request == ExplicitRequest::Female)),
    }
}
