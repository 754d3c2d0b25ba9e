//! Callback rates, compliance, segregation, threshold sweeps and Pareto sets.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::{CallbackRecord, Outcome};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("female callback rate undefined: every record is a refusal")]
    UndefinedRate,
    #[error("record for posting {0} has no female probability")]
    MissingProbability(String),
    #[error("dissimilarity undefined: no {0} callbacks")]
    GenderAbsent(&'static str),
    #[error("kappa undefined: chance agreement is 1")]
    DegenerateKappa,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("threshold grid must be strictly increasing within (0, 1)")]
    BadGrid,
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Share of non-refusal records that favour the female candidate.
pub fn female_callback_rate(records: &[CallbackRecord]) -> Result<f64> {
    let (mut f, mut m) = (0usize, 0usize);
    for r in records {
        match r.outcome {
            Outcome::Female => f += 1,
            Outcome::Male => m += 1,
            Outcome::Refusal => {}
        }
    }
    if f + m == 0 {
        return Err(MetricsError::UndefinedRate);
    }
    Ok(f as f64 / (f + m) as f64)
}

pub fn refusal_rate(records: &[CallbackRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = records.iter().filter(|r| r.outcome == Outcome::Refusal).count();
    Ok(n as f64 / records.len() as f64)
}

/// Female iff `p_female > rho`.
pub fn classify_at_threshold(record: &CallbackRecord, rho: f64) -> Result<bool> {
    if record.outcome == Outcome::Refusal {
        return Err(MetricsError::Precondition("refusals cannot be classified".into()));
    }
    record
        .p_female
        .map(|p| p > rho)
        .ok_or_else(|| MetricsError::MissingProbability(record.posting_id.clone()))
}

/// Duncan index from per-occupation `(female, male)` counts.
pub fn dissimilarity_from_counts<K>(counts: &BTreeMap<K, (f64, f64)>) -> Result<f64> {
    let nf: f64 = counts.values().map(|c| c.0).sum();
    let nm: f64 = counts.values().map(|c| c.1).sum();
    if nf <= 0.0 {
        return Err(MetricsError::GenderAbsent("female"));
    }
    if nm <= 0.0 {
        return Err(MetricsError::GenderAbsent("male"));
    }
    let d = 0.5 * counts.values().map(|(f, m)| (f / nf - m / nm).abs()).sum::<f64>();
    Ok(d.clamp(0.0, 1.0))
}

/// Duncan index over `(occupation, is_female)` observations.
pub fn dissimilarity_index<S: AsRef<str>>(observations: &[(S, bool)]) -> Result<f64> {
    let mut counts: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (occ, female) in observations {
        let c = counts.entry(occ.as_ref()).or_default();
        if *female {
            c.0 += 1.0;
        } else {
            c.1 += 1.0;
        }
    }
    dissimilarity_from_counts(&counts)
}

/// Cohen's kappa between requested and recommended gender, over
/// `(female_requested, female_recommended)` pairs.
pub fn cohen_kappa(pairs: &[(bool, bool)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = pairs.len() as f64;
    let req_f = pairs.iter().filter(|p| p.0).count() as f64 / n;
    if req_f == 0.0 || req_f == 1.0 {
        return Err(MetricsError::Precondition("both request classes must be represented".into()));
    }
    let cb_f = pairs.iter().filter(|p| p.1).count() as f64 / n;
    let p_o = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / n;
    let p_e = req_f * cb_f + (1.0 - req_f) * (1.0 - cb_f);
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(MetricsError::DegenerateKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Inclusive grid `{0.01, 0.02, ..., 0.99}`.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| f64::from(i) / 100.0).collect()
}

/// Points with a female callback rate in this band are usable for
/// threshold comparisons.
pub const IN_RANGE: (f64, f64) = (0.10, 0.90);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rho: f64,
    pub fcr: f64,
    /// `None` when one gender receives no callbacks at this threshold.
    pub dissimilarity: Option<f64>,
    /// Female minus male mean log wage, times 100.
    pub wage_gap_logpoints: Option<f64>,
    pub n_female: usize,
    pub n_male: usize,
    pub in_range: bool,
}

/// Difference in mean log wage (female minus male) in log points. Equals
/// 100 times the slope of a no-controls regression on a female indicator.
pub fn mean_wage_gap(obs: &[(f64, bool)]) -> Option<f64> {
    let (mut sf, mut nf, mut sm, mut nm) = (0.0, 0usize, 0.0, 0usize);
    for &(w, female) in obs {
        if female {
            sf += w;
            nf += 1;
        } else {
            sm += w;
            nm += 1;
        }
    }
    (nf > 0 && nm > 0).then(|| 100.0 * (sf / nf as f64 - sm / nm as f64))
}

/// Reclassify the records at each threshold and recompute the statistics.
/// Refusals are skipped; every remaining record needs `p_female`. Records
/// without an occupation are left out of the dissimilarity, and records
/// without a (trimmed) wage out of the wage gap.
pub fn threshold_sweep(
    records: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    log_wages: &HashMap<String, f64>,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadGrid);
    }
    struct Obs<'a> {
        p: f64,
        occ: Option<&'a str>,
        wage: Option<f64>,
    }
    let mut obs = Vec::with_capacity(records.len());
    for r in records.iter().filter(|r| r.outcome != Outcome::Refusal) {
        let p = r.p_female.ok_or_else(|| MetricsError::MissingProbability(r.posting_id.clone()))?;
        obs.push(Obs {
            p,
            occ: occupations.get(&r.posting_id).map(String::as_str),
            wage: log_wages.get(&r.posting_id).copied(),
        });
    }
    if obs.is_empty() {
        return Err(MetricsError::UndefinedRate);
    }
    let points = grid
        .par_iter()
        .map(|&rho| {
            let mut counts: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            let mut wages = Vec::new();
            let mut n_female = 0;
            for o in &obs {
                let female = o.p > rho;
                n_female += usize::from(female);
                if let Some(occ) = o.occ {
                    let c = counts.entry(occ).or_default();
                    if female {
                        c.0 += 1.0
                    } else {
                        c.1 += 1.0
                    }
                }
                if let Some(w) = o.wage {
                    wages.push((w, female));
                }
            }
            let n_male = obs.len() - n_female;
            let fcr = n_female as f64 / obs.len() as f64;
            SweepPoint {
                rho,
                fcr,
                dissimilarity: dissimilarity_from_counts(&counts).ok(),
                wage_gap_logpoints: mean_wage_gap(&wages),
                n_female,
                n_male,
                in_range: (IN_RANGE.0..=IN_RANGE.1).contains(&fcr),
            }
        })
        .collect();
    Ok(points)
}

/// Grid point with the FCR closest to one half; ties go to the smaller rho.
pub fn parity_point(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points.iter().fold(None, |best: Option<&SweepPoint>, p| match best {
        Some(b) => {
            let (db, dp) = ((b.fcr - 0.5).abs(), (p.fcr - 0.5).abs());
            if dp < db || (dp == db && p.rho < b.rho) {
                Some(p)
            } else {
                Some(b)
            }
        }
        None => Some(p),
    })
}

/// Threshold where FCR crosses one half, by linear interpolation between
/// the bracketing grid points. `None` if the sweep never crosses.
pub fn parity_interpolated(points: &[SweepPoint]) -> Option<f64> {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    if let Some(p) = sorted.iter().find(|p| p.fcr == 0.5) {
        return Some(p.rho);
    }
    sorted.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        let crosses = (a.fcr - 0.5) * (b.fcr - 0.5) < 0.0;
        crosses.then(|| a.rho + (0.5 - a.fcr) * (b.rho - a.rho) / (b.fcr - a.fcr))
    })
}

/// Dominance rule used by [`pareto_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    /// No worse in every coordinate and better in at least one.
    #[default]
    Weak,
    /// Better in every coordinate.
    Strict,
}

fn dominates(a: &[f64; 3], b: &[f64; 3], rule: Dominance) -> bool {
    match rule {
        Dominance::Weak => a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y),
        Dominance::Strict => a.iter().zip(b).all(|(x, y)| x < y),
    }
}

/// Indices of the non-dominated points (all coordinates minimised), in
/// input order.
pub fn pareto_filter(points: &[[f64; 3]], rule: Dominance) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i], rule)))
        .collect()
}

/// `(|fcr - 0.5|, |wage gap|, dissimilarity)` for sweep points that have
/// all three and lie in range.
pub fn sweep_objectives(points: &[SweepPoint]) -> Vec<(usize, [f64; 3])> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.in_range)
        .filter_map(|(i, p)| Some((i, [(p.fcr - 0.5).abs(), p.wage_gap_logpoints?.abs(), p.dissimilarity?])))
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, points: &[SweepPoint]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["rho", "fcr", "dissimilarity", "wage_gap", "n_female", "n_male", "in_range"])?;
    for p in points {
        w.write_record([
            p.rho.to_string(),
            p.fcr.to_string(),
            opt(p.dissimilarity),
            opt(p.wage_gap_logpoints),
            p.n_female.to_string(),
            p.n_male.to_string(),
            p.in_range.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_records: usize,
    pub n_refusals: usize,
    pub fcr: Option<f64>,
    pub refusal_rate: f64,
    pub dissimilarity_6digit: Option<f64>,
    pub wage_gap_logpoints: Option<f64>,
    pub kappa: Option<f64>,
    pub n_compliance_pairs: usize,
}

/// Headline statistics for one set of records. `requests` maps posting id
/// to the explicitly requested gender (true = female) for postings that
/// make one.
pub fn summarize(
    records: &[CallbackRecord],
    occupations: &HashMap<String, String>,
    log_wages: &HashMap<String, f64>,
    requests: &HashMap<String, bool>,
) -> Result<AuditSummary> {
    let rr = refusal_rate(records)?;
    let answered: Vec<(&CallbackRecord, bool)> =
        records.iter().filter_map(|r| r.is_female().map(|f| (r, f))).collect();
    let seg: Vec<(&str, bool)> = answered
        .iter()
        .filter_map(|(r, f)| occupations.get(&r.posting_id).map(|o| (o.as_str(), *f)))
        .collect();
    let wages: Vec<(f64, bool)> =
        answered.iter().filter_map(|(r, f)| log_wages.get(&r.posting_id).map(|w| (*w, *f))).collect();
    let pairs: Vec<(bool, bool)> =
        answered.iter().filter_map(|(r, f)| requests.get(&r.posting_id).map(|q| (*q, *f))).collect();
    Ok(AuditSummary {
        n_records: records.len(),
        n_refusals: records.len() - answered.len(),
        fcr: female_callback_rate(records).ok(),
        refusal_rate: rr,
        dissimilarity_6digit: dissimilarity_index(&seg).ok(),
        wage_gap_logpoints: mean_wage_gap(&wages),
        kappa: cohen_kappa(&pairs).ok(),
        n_compliance_pairs: pairs.len(),
    })
}
