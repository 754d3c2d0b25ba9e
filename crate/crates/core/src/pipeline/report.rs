use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    io_err, read_json, LexiconReport, Manifest, PipelineError, Result, SummaryEntry, TraitReport, WageGapReport,
    LEXICON_FILE, REGRESSIONS_DIR, SUMMARIES_FILE, SWEEPS_DIR,
};
use crate::econometrics::render_table;
use crate::metrics::SweepPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    CsvDir,
    Text,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv_dir" | "csv" => Ok(ReportFormat::CsvDir),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(format!("unknown report format `{other}` (json, csv_dir, text)")),
        }
    }
}

/// Everything a report shows, loaded back from a finished output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportData {
    pub config_hash: String,
    pub backend: String,
    pub summaries: Vec<SummaryEntry>,
    /// Keyed by the sweep file stem.
    pub sweeps: BTreeMap<String, Vec<SweepPoint>>,
    pub wage_gaps: Vec<WageGapReport>,
    pub traits: Option<TraitReport>,
    pub lexicon: Option<LexiconReport>,
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| format!("{s}: {e}"))
    }
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepPoint>> {
    let bad = |m: String| PipelineError::Analysis(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", &rec[i])));
        let count = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("{}: {e}", &rec[i])));
        out.push(SweepPoint {
            rho: num(0)?,
            fcr: num(1)?,
            dissimilarity: parse_opt(&rec[2]).map_err(bad)?,
            wage_gap_logpoints: parse_opt(&rec[3]).map_err(bad)?,
            n_female: count(4)?,
            n_male: count(5)?,
            in_range: rec[6].parse().map_err(|e| bad(format!("{}: {e}", &rec[6])))?,
        });
    }
    Ok(out)
}

/// Load a finished bundle, failing with the list of missing files when the
/// manifest is absent or any listed file is gone.
pub fn load_report(dir: &Path) -> Result<ReportData> {
    let manifest = Manifest::read(dir)?;
    let mut missing: Vec<String> =
        manifest.files.iter().filter(|f| !dir.join(&f.path).exists()).map(|f| f.path.clone()).collect();
    if !manifest.files.iter().any(|f| f.path == SUMMARIES_FILE) && !dir.join(SUMMARIES_FILE).exists() {
        missing.push(SUMMARIES_FILE.into());
    }
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifacts(missing));
    }
    let mut data = ReportData {
        config_hash: manifest.config_hash.clone(),
        backend: manifest.backend.clone(),
        summaries: read_json(&dir.join(SUMMARIES_FILE))?,
        sweeps: BTreeMap::new(),
        wage_gaps: Vec::new(),
        traits: None,
        lexicon: None,
    };
    for f in &manifest.files {
        let path = dir.join(&f.path);
        if let Some(rest) = f.path.strip_prefix(&format!("{SWEEPS_DIR}/")) {
            let stem = rest.trim_end_matches(".csv").to_string();
            data.sweeps.insert(stem, read_sweep_csv(&path)?);
        } else if f.path.starts_with(REGRESSIONS_DIR) && f.path.ends_with("__wage_gap.json") {
            data.wage_gaps.push(read_json(&path)?);
        } else if f.path == format!("{REGRESSIONS_DIR}/traits.json") {
            data.traits = Some(read_json(&path)?);
        } else if f.path == LEXICON_FILE {
            data.lexicon = Some(read_json(&path)?);
        }
    }
    Ok(data)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}", 100.0 * x))
}

fn num(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.decimals$}"))
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pooled(data: &ReportData) -> impl Iterator<Item = &SummaryEntry> {
    data.summaries.iter().filter(|s| s.order_arm.is_none())
}

/// Human-readable report: headline table per persona, then regressions.
pub fn render_text(data: &ReportData) -> String {
    let mut out = String::new();
    let header = ["Persona", "FCR %", "Dissim. %", "Wage gap (lp)", "Refusal %", "Compliance k", "Parity rho"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for s in pooled(data) {
        rows.push(vec![
            s.persona.clone(),
            pct(s.summary.fcr),
            pct(s.summary.dissimilarity_6digit),
            num(s.summary.wage_gap_logpoints, 2),
            pct(Some(s.summary.refusal_rate)),
            num(s.summary.kappa, 3),
            num(s.parity_rho, 2),
        ]);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let _ = writeln!(out, "Callback summary");
    for (i, r) in rows.iter().enumerate() {
        let mut line = format!("{:<w$}", r[0], w = widths[0]);
        for (c, w) in r.iter().zip(&widths).skip(1) {
            let _ = write!(line, "  {c:>w$}");
        }
        let _ = writeln!(out, "{}", line.trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    for wg in &data.wage_gaps {
        if wg.results.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\nLog wage on female callback ({}), log points", wg.persona);
        let cols: Vec<(&str, &crate::econometrics::RegressionResult)> =
            wg.results.iter().map(|r| (r.variant.as_str(), &r.regression)).collect();
        out.push_str(&render_table(&cols, &["female"], 100.0, 2));
        for f in &wg.failures {
            let _ = writeln!(out, "not estimated: {} ({})", f.variant.as_str(), f.error);
        }
    }
    if let Some(t) = &data.traits {
        let cols: Vec<(&str, &crate::econometrics::RegressionResult)> = [("segregation", &t.segregation), ("wage", &t.wage)]
            .into_iter()
            .filter_map(|(n, r)| r.as_ref().map(|r| (n, r)))
            .collect();
        if !cols.is_empty() {
            let _ = writeln!(out, "\nPerceived traits and outcomes");
            out.push_str(&render_table(&cols, &[], 1.0, 4));
        }
        for n in &t.notes {
            let _ = writeln!(out, "note: {n}");
        }
    }
    if let Some(l) = &data.lexicon {
        let _ = writeln!(
            out,
            "\nLexical attribution ({}): {} documents, {} terms, {} selected, chosen lambda {:.3e}, test R2 {}",
            l.persona,
            l.n_documents,
            l.vocabulary_size,
            l.n_selected,
            l.chosen_lambda,
            num(l.test_r2, 4)
        );
        if let Some(m) = &l.merge {
            let _ = writeln!(
                out,
                "External lexicon: {} matched ({:.1}%), rank correlation {}, sign correlation {}",
                m.n_matched,
                100.0 * m.match_share,
                num(m.rank_correlation, 3),
                num(m.sign_correlation, 3)
            );
        }
    }
    out
}

fn write_file(path: &Path, contents: &[u8]) -> Result<PathBuf> {
    fs::write(path, contents).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |e: csv::Error| PipelineError::Analysis(e.to_string());
    w.write_record(header).map_err(e)?;
    for r in rows {
        w.write_record(&r).map_err(e)?;
    }
    w.into_inner().map_err(|e| PipelineError::Analysis(e.to_string()))
}

/// Render the bundle in `dir` into `dest` (created if needed) and return
/// the files written.
pub fn render_report(dir: &Path, format: ReportFormat, dest: &Path) -> Result<Vec<PathBuf>> {
    let data = load_report(dir)?;
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(&data).map_err(|e| PipelineError::Analysis(e.to_string()))?;
            bytes.push(b'\n');
            Ok(vec![write_file(&dest.join("report.json"), &bytes)?])
        }
        ReportFormat::Text => Ok(vec![write_file(&dest.join("report.txt"), render_text(&data).as_bytes())?]),
        ReportFormat::CsvDir => {
            let mut written = Vec::new();
            let rows = pooled(&data)
                .map(|s| {
                    vec![
                        s.persona.clone(),
                        csv_opt(s.summary.fcr),
                        csv_opt(s.summary.dissimilarity_6digit),
                        csv_opt(s.summary.wage_gap_logpoints),
                        s.summary.refusal_rate.to_string(),
                        csv_opt(s.summary.kappa),
                        csv_opt(s.parity_rho),
                        s.summary.n_records.to_string(),
                    ]
                })
                .collect();
            let header =
                ["persona", "fcr", "dissimilarity", "wage_gap_logpoints", "refusal_rate", "kappa", "parity_rho", "n_records"];
            written.push(write_file(&dest.join("summary.csv"), &csv_bytes(&header, rows)?)?);
            let mut dis = Vec::new();
            let mut wage = Vec::new();
            for (stem, points) in &data.sweeps {
                for p in points {
                    if let Some(d) = p.dissimilarity {
                        dis.push(vec![stem.clone(), p.rho.to_string(), p.fcr.to_string(), d.to_string(), p.in_range.to_string()]);
                    }
                    if let Some(w) = p.wage_gap_logpoints {
                        wage.push(vec![stem.clone(), p.rho.to_string(), p.fcr.to_string(), w.to_string(), p.in_range.to_string()]);
                    }
                }
            }
            written.push(write_file(
                &dest.join("dissimilarity_vs_fcr.csv"),
                &csv_bytes(&["persona", "rho", "fcr", "dissimilarity", "in_range"], dis)?,
            )?);
            written.push(write_file(
                &dest.join("wage_gap_vs_fcr.csv"),
                &csv_bytes(&["persona", "rho", "fcr", "wage_gap_logpoints", "in_range"], wage)?,
            )?);
            let mut reg = Vec::new();
            for wg in &data.wage_gaps {
                for r in &wg.results {
                    reg.push(vec![
                        wg.persona.clone(),
                        r.variant.as_str().to_string(),
                        r.logpoints.to_string(),
                        r.se_logpoints.to_string(),
                        r.regression.n_effective.to_string(),
                    ]);
                }
            }
            written.push(write_file(
                &dest.join("wage_gap_regressions.csv"),
                &csv_bytes(&["persona", "variant", "logpoints", "se_logpoints", "n"], reg)?,
            )?);
            Ok(written)
        }
    }
}
