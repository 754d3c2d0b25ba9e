//! The audit's regression models built on [`ols_fit`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ols_fit, Column, DataTable, EconError, RegressionResult, RegressionSpec, SeKind};
use crate::corpus::{trim_wage_outliers, JobPosting};
use crate::elicitation::{CallbackRecord, TraitDimension, TraitScores};
use crate::metrics::IN_RANGE;

type Result<T> = std::result::Result<T, EconError>;

/// Columns of the wage-gap table, from no controls to the most stringent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WageGapVariant {
    None,
    StateOccFe,
    PlusMonth,
    PlusControls,
    OccXStateFe,
}

impl WageGapVariant {
    pub const ALL: [WageGapVariant; 5] = [
        WageGapVariant::None,
        WageGapVariant::StateOccFe,
        WageGapVariant::PlusMonth,
        WageGapVariant::PlusControls,
        WageGapVariant::OccXStateFe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WageGapVariant::None => "none",
            WageGapVariant::StateOccFe => "state_occ_fe",
            WageGapVariant::PlusMonth => "plus_month",
            WageGapVariant::PlusControls => "plus_controls",
            WageGapVariant::OccXStateFe => "occ_x_state_fe",
        }
    }

    fn spec(self) -> RegressionSpec {
        let controls = ["education", "experience", "experience_sq", "job_type", "sector", "org_type"];
        let mut regs = vec!["female"];
        let fe: &[&[&str]] = match self {
            WageGapVariant::None => &[],
            WageGapVariant::StateOccFe => &[&["state"], &["occupation"]],
            WageGapVariant::PlusMonth => &[&["state"], &["occupation"], &["month"]],
            WageGapVariant::PlusControls => {
                regs.extend(controls);
                &[&["state"], &["occupation"], &["month"]]
            }
            WageGapVariant::OccXStateFe => {
                regs.extend(controls);
                &[&["occupation", "state"], &["month"]]
            }
        };
        RegressionSpec::new("log_wage", &regs).absorb(fe)
    }
}

impl std::str::FromStr for WageGapVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        WageGapVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown wage-gap variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WageGapOptions {
    pub se_kind: SeKind,
    /// Restrict every variant to rows usable in the most stringent one.
    pub common_sample: bool,
}

impl Default for WageGapOptions {
    fn default() -> Self {
        WageGapOptions { se_kind: SeKind::Hc1, common_sample: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageGapResult {
    pub variant: WageGapVariant,
    /// Coefficient on the female-callback indicator times 100.
    pub logpoints: f64,
    pub se_logpoints: f64,
    pub regression: RegressionResult,
}

fn cat(v: Option<&str>) -> Option<String> {
    v.map(str::to_string)
}

fn wage_table(
    postings: &[JobPosting],
    callbacks: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    common_sample: bool,
) -> Result<DataTable> {
    let trimmed = trim_wage_outliers(postings).map_err(|e| EconError::NoData(e.to_string()))?;
    let wages: HashMap<&str, f64> = trimmed.iter().map(|w| (w.posting_id, w.log_wage)).collect();
    let by_id: HashMap<&str, &JobPosting> = postings.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut rows: Vec<(&JobPosting, f64, bool)> = callbacks
        .iter()
        .filter_map(|r| {
            let female = r.is_female()?;
            let wage = *wages.get(r.posting_id.as_str())?;
            Some((*by_id.get(r.posting_id.as_str())?, wage, female))
        })
        .collect();
    if common_sample {
        rows.retain(|(p, _, _)| {
            occupations.contains_key(&p.id)
                && p.state.is_some()
                && p.month_year.is_some()
                && p.experience_years.is_some()
                && p.job_type.is_some()
                && p.sector.is_some()
                && p.org_type.is_some()
        });
    }
    if rows.is_empty() {
        return Err(EconError::NoData("no answered callbacks on postings with a usable wage".into()));
    }
    let mut t = DataTable::new(rows.len());
    let num = |f: &dyn Fn(&(&JobPosting, f64, bool)) -> Option<f64>| Column::Numeric(rows.iter().map(f).collect());
    let text = |f: &dyn Fn(&JobPosting) -> Option<String>| Column::Categorical(rows.iter().map(|r| f(r.0)).collect());
    t.push("log_wage", num(&|r| Some(r.1)))?;
    t.push("female", num(&|r| Some(f64::from(u8::from(r.2)))))?;
    t.push("state", text(&|p| cat(p.state.as_deref())))?;
    t.push("occupation", text(&|p| occupations.get(&p.id).cloned()))?;
    t.push("month", text(&|p| p.month_year.map(|m| m.to_string())))?;
    t.push("education", text(&|p| Some(p.education.as_str().to_string())))?;
    t.push("experience", num(&|r| r.0.experience_years))?;
    t.push("experience_sq", num(&|r| r.0.experience_years.map(|e| e * e)))?;
    t.push("job_type", text(&|p| p.job_type.map(|j| j.as_str().to_string())))?;
    t.push("sector", text(&|p| cat(p.sector.as_deref())))?;
    t.push("org_type", text(&|p| cat(p.org_type.as_deref())))?;
    t.push("posting_id", text(&|p| Some(p.id.clone())))?;
    Ok(t)
}

/// Log wage on the female-callback indicator. Wages outside [p1, p99] and
/// refusals are excluded. `occupations` maps posting id to SOC code.
pub fn wage_gap_regression(
    postings: &[JobPosting],
    callbacks: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    variant: WageGapVariant,
    opts: &WageGapOptions,
) -> Result<WageGapResult> {
    let t = wage_table(postings, callbacks, occupations, opts.common_sample)?;
    fit_wage(&t, variant, opts)
}

fn fit_wage(t: &DataTable, variant: WageGapVariant, opts: &WageGapOptions) -> Result<WageGapResult> {
    let mut spec = variant.spec();
    if opts.se_kind == SeKind::Cr1 {
        spec = spec.clustered("posting_id");
    }
    let regression = ols_fit(t, &spec)?;
    let female = regression.term("female").ok_or_else(|| EconError::Collinear("female".into()))?;
    Ok(WageGapResult {
        variant,
        logpoints: 100.0 * female.coef,
        se_logpoints: 100.0 * female.se,
        regression,
    })
}

/// All five variants on one table.
pub fn wage_gap_table(
    postings: &[JobPosting],
    callbacks: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    opts: &WageGapOptions,
) -> Result<Vec<WageGapResult>> {
    let t = wage_table(postings, callbacks, occupations, opts.common_sample)?;
    WageGapVariant::ALL.iter().map(|v| fit_wage(&t, *v, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillOptions {
    pub controls: bool,
    /// State and month-year fixed effects.
    pub fixed_effects: bool,
}

impl Default for SkillOptions {
    fn default() -> Self {
        SkillOptions { controls: true, fixed_effects: true }
    }
}

/// Female-callback probability on skill-category indicators. Categories
/// that never (or always) occur are reported in `absent_terms`.
pub fn skill_association(
    postings: &[JobPosting],
    p_female: &HashMap<String, f64>,
    categories: &[String],
    opts: &SkillOptions,
) -> Result<RegressionResult> {
    let rows: Vec<(&JobPosting, f64)> =
        postings.iter().filter_map(|p| p_female.get(&p.id).map(|v| (p, *v))).collect();
    if rows.is_empty() {
        return Err(EconError::NoData("no postings with a female probability".into()));
    }
    let mut t = DataTable::new(rows.len());
    t.push_numeric("p_female", rows.iter().map(|r| r.1).collect())?;
    let mut regs = Vec::new();
    let mut absent = Vec::new();
    for c in categories {
        let v: Vec<f64> = rows.iter().map(|(p, _)| f64::from(u8::from(p.skill_tags.contains(c)))).collect();
        let ones = v.iter().filter(|x| **x == 1.0).count();
        if ones == 0 || ones == v.len() {
            absent.push(c.clone());
            continue;
        }
        t.push_numeric(c.clone(), v)?;
        regs.push(c.clone());
    }
    if opts.controls {
        let text = |f: &dyn Fn(&JobPosting) -> Option<String>| Column::Categorical(rows.iter().map(|r| f(r.0)).collect());
        t.push("ctl:education", text(&|p| Some(p.education.as_str().to_string())))?;
        t.push("ctl:experience", Column::Numeric(rows.iter().map(|r| r.0.experience_years).collect()))?;
        t.push(
            "ctl:experience_sq",
            Column::Numeric(rows.iter().map(|r| r.0.experience_years.map(|e| e * e)).collect()),
        )?;
        t.push("ctl:job_type", text(&|p| p.job_type.map(|j| j.as_str().to_string())))?;
        t.push("ctl:sector", text(&|p| cat(p.sector.as_deref())))?;
        t.push("ctl:org_type", text(&|p| cat(p.org_type.as_deref())))?;
        regs.extend(
            ["education", "experience", "experience_sq", "job_type", "sector", "org_type"].map(|c| format!("ctl:{c}")),
        );
    }
    let mut spec = RegressionSpec::new("p_female", &[]);
    spec.regressors = regs;
    if opts.fixed_effects {
        t.push("state", Column::Categorical(rows.iter().map(|r| cat(r.0.state.as_deref())).collect()))?;
        t.push("month", Column::Categorical(rows.iter().map(|r| r.0.month_year.map(|m| m.to_string())).collect()))?;
        spec = spec.absorb(&[&["state"], &["month"]]);
    }
    let mut r = ols_fit(&t, &spec)?;
    r.absent_terms.extend(absent);
    Ok(r)
}

/// Female-callback probability on z-scored category proportions, no
/// controls. Zero-variance categories are left out with a note.
pub fn liwc_association(features: &[(String, Vec<f64>)], p_female: &[f64]) -> Result<RegressionResult> {
    let n = p_female.len();
    let mut t = DataTable::new(n);
    t.push_numeric("p_female", p_female.to_vec())?;
    let mut regs = Vec::new();
    let mut notes = Vec::new();
    for (name, v) in features {
        if v.len() != n {
            return Err(EconError::Length { name: name.clone(), got: v.len(), want: n });
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            log::warn!("category `{name}` has no variance; excluded");
            notes.push(format!("excluded zero-variance category `{name}`"));
            continue;
        }
        let sd = var.sqrt();
        t.push_numeric(name.clone(), v.iter().map(|x| (x - mean) / sd).collect())?;
        regs.push(name.clone());
    }
    let mut spec = RegressionSpec::new("p_female", &[]);
    spec.regressors = regs;
    let mut r = ols_fit(&t, &spec)?;
    r.notes.extend(notes);
    Ok(r)
}

/// One (figure, threshold) observation for the trait regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub figure: String,
    pub rho: f64,
    pub fcr: f64,
    pub value: f64,
}

fn trait_regression(
    points: &[FigurePoint],
    tipi: &HashMap<String, TraitScores>,
    outcome: &str,
    transform: fn(f64) -> f64,
) -> Result<RegressionResult> {
    let mut notes = Vec::new();
    let mut by_figure: BTreeMap<&str, Vec<&FigurePoint>> = BTreeMap::new();
    for p in points {
        by_figure.entry(&p.figure).or_default();
        if (IN_RANGE.0..=IN_RANGE.1).contains(&p.fcr) && p.value.is_finite() {
            by_figure.get_mut(p.figure.as_str()).expect("inserted").push(p);
        }
    }
    let mut rows: Vec<(&FigurePoint, f64, &TraitScores)> = Vec::new();
    for (fig, pts) in &by_figure {
        let Some(scores) = tipi.get(*fig) else {
            log::warn!("no trait scores for {fig}; dropped");
            notes.push(format!("dropped {fig}: no trait scores"));
            continue;
        };
        if pts.is_empty() {
            log::warn!("{fig} has no in-range points; dropped");
            notes.push(format!("dropped {fig}: no in-range points"));
            continue;
        }
        if TraitDimension::ALL.iter().any(|d| !(1.0..=7.0).contains(&scores.get(*d))) {
            return Err(EconError::Spec(format!("trait scores for {fig} outside [1, 7]")));
        }
        let w = 1.0 / pts.len() as f64;
        rows.extend(pts.iter().map(|p| (*p, w, scores)));
    }
    let figures = rows.iter().map(|r| r.0.figure.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    if figures < 2 {
        return Err(EconError::TooFewClusters(figures));
    }
    let mut t = DataTable::new(rows.len());
    t.push_numeric(outcome, rows.iter().map(|r| transform(r.0.value)).collect())?;
    for d in TraitDimension::ALL {
        t.push_numeric(d.as_str(), rows.iter().map(|r| r.2.get(d)).collect())?;
    }
    t.push_numeric("fcr", rows.iter().map(|r| r.0.fcr).collect())?;
    t.push_numeric("weight", rows.iter().map(|r| r.1).collect())?;
    t.push_categorical("figure", rows.iter().map(|r| r.0.figure.clone()).collect())?;
    let mut regs: Vec<&str> = TraitDimension::ALL.iter().map(|d| d.as_str()).collect();
    regs.push("fcr");
    let spec = RegressionSpec::new(outcome, &regs).weighted("weight").clustered("figure");
    let mut r = ols_fit(&t, &spec)?;
    r.notes.extend(notes);
    Ok(r)
}

/// Dissimilarity at each in-range threshold on the five trait scores and
/// the callback rate; each figure carries equal total weight and errors
/// are clustered by figure.
pub fn trait_segregation_regression(
    points: &[FigurePoint],
    tipi: &HashMap<String, TraitScores>,
) -> Result<RegressionResult> {
    trait_regression(points, tipi, "dissimilarity", |v| v)
}

/// As [`trait_segregation_regression`] with the absolute wage disparity
/// (in log units) as outcome.
pub fn trait_wage_regression(points: &[FigurePoint], tipi: &HashMap<String, TraitScores>) -> Result<RegressionResult> {
    trait_regression(points, tipi, "abs_wage_disparity", f64::abs)
}
