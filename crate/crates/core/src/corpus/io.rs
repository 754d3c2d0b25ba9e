use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{detect_explicit_request, CorpusError, JobPosting, Result, WageRange};

pub const COLUMNS: [&str; 13] = [
    "id",
    "title",
    "description",
    "wage_low",
    "wage_high",
    "education",
    "experience",
    "sector",
    "org_type",
    "job_type",
    "state",
    "month_year",
    "skill_tags",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<JobPosting>> {
    read_corpus(File::open(path)?, format)
}

pub fn read_corpus<R: Read>(reader: R, format: CorpusFormat) -> Result<Vec<JobPosting>> {
    let rows = match format {
        CorpusFormat::Csv => csv_rows(reader)?,
        CorpusFormat::Jsonl => jsonl_rows(reader)?,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (row, fields) in rows {
        let posting = posting_from_fields(row, &fields)?;
        if !seen.insert(posting.id.clone()) {
            return Err(CorpusError::DuplicateId { row, id: posting.id });
        }
        out.push(posting);
    }
    Ok(out)
}

type Fields = HashMap<String, String>;

fn csv_rows<R: Read>(reader: R) -> Result<Vec<(usize, Fields)>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for required in ["id", "title", "description"] {
        if !headers.iter().any(|h| h == required) {
            return Err(CorpusError::MissingColumn { row: 0, column: required.into() });
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let fields = headers
            .iter()
            .cloned()
            .zip(rec.iter().map(str::to_string))
            .collect();
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn jsonl_rows<R: Read>(reader: R) -> Result<Vec<(usize, Fields)>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Field {
            row,
            field: "<line>".into(),
            message: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(CorpusError::Field {
                row,
                field: "<line>".into(),
                message: "expected a JSON object".into(),
            });
        };
        let mut fields = Fields::new();
        for (k, v) in map {
            let s = match v {
                Value::Null => continue,
                Value::String(s) => s,
                Value::Number(n) => n.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(";"),
                Value::Object(_) => {
                    return Err(CorpusError::Field {
                        row,
                        field: k,
                        message: "nested objects are not supported".into(),
                    })
                }
            };
            fields.insert(k, s);
        }
        rows.push((row, fields));
    }
    Ok(rows)
}

fn posting_from_fields(row: usize, f: &Fields) -> Result<JobPosting> {
    let err = |field: &str, message: String| CorpusError::Field {
        row,
        field: field.to_string(),
        message,
    };
    let get = |k: &str| f.get(k).map(|s| s.trim()).filter(|s| !s.is_empty());
    let required = |k: &str| {
        f.get(k)
            .map(|s| s.to_string())
            .ok_or_else(|| CorpusError::MissingColumn { row, column: k.into() })
    };
    let num = |k: &str| -> Result<Option<f64>> {
        get(k)
            .map(|s| s.parse::<f64>().map_err(|e| err(k, format!("`{s}`: {e}"))))
            .transpose()
    };
    let id = required("id")?.trim().to_string();
    let title = required("title")?;
    let description = required("description")?;

    let wage_range = match (num("wage_low")?, num("wage_high")?) {
        (Some(lo), Some(hi)) => Some(WageRange::new(lo, hi).map_err(|m| err("wage_low", m))?),
        (Some(v), None) => Some(WageRange::new(v, v).map_err(|m| err("wage_low", m))?),
        (None, Some(v)) => Some(WageRange::new(v, v).map_err(|m| err("wage_high", m))?),
        (None, None) => None,
    };
    let education = get("education")
        .map(str::parse)
        .transpose()
        .map_err(|m| err("education", m))?
        .unwrap_or_default();
    let job_type = get("job_type")
        .map(str::parse)
        .transpose()
        .map_err(|m| err("job_type", m))?;
    let month_year = get("month_year")
        .map(str::parse)
        .transpose()
        .map_err(|m| err("month_year", m))?;
    let skill_tags: BTreeSet<String> = get("skill_tags")
        .map(|s| {
            s.split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();

    let posting = JobPosting {
        explicit_request: detect_explicit_request(&title, &description),
        id,
        title,
        description,
        wage_range,
        education,
        experience_years: num("experience")?,
        sector: get("sector").map(str::to_string),
        org_type: get("org_type").map(str::to_string),
        job_type,
        state: get("state").map(str::to_string),
        month_year,
        skill_tags,
    };
    posting.validate().map_err(|(field, m)| err(&field, m))?;
    Ok(posting)
}

fn to_row(p: &JobPosting) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![
        p.id.clone(),
        p.title.clone(),
        p.description.clone(),
        opt(p.wage_range.map(|w| w.low)),
        opt(p.wage_range.map(|w| w.high)),
        p.education.as_str().to_string(),
        opt(p.experience_years),
        p.sector.clone().unwrap_or_default(),
        p.org_type.clone().unwrap_or_default(),
        p.job_type.map(|j| j.as_str().to_string()).unwrap_or_default(),
        p.state.clone().unwrap_or_default(),
        p.month_year.map(|m| m.to_string()).unwrap_or_default(),
        p.skill_tags.iter().cloned().collect::<Vec<_>>().join(";"),
    ]
}

pub fn write_corpus(postings: &[JobPosting], path: &Path, format: CorpusFormat) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        CorpusFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(COLUMNS)?;
            for p in postings {
                w.write_record(to_row(p))?;
            }
            w.flush()?;
        }
        CorpusFormat::Jsonl => {
            let mut w = file;
            for p in postings {
                let mut obj = serde_json::Map::new();
                for (k, v) in COLUMNS.iter().zip(to_row(p)) {
                    if v.is_empty() {
                        continue;
                    }
                    let value = match *k {
                        "wage_low" | "wage_high" | "experience" => v
                            .parse::<f64>()
                            .ok()
                            .and_then(serde_json::Number::from_f64)
                            .map(Value::Number)
                            .unwrap_or(Value::String(v)),
                        _ => Value::String(v),
                    };
                    obj.insert(k.to_string(), value);
                }
                serde_json::to_writer(&mut w, &Value::Object(obj)).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, Education, ExplicitRequest, JobType};

    const CSV3: &str = "\
id,title,description,wage_low,wage_high,education,experience,sector,org_type,job_type,state,month_year,skill_tags
j1,Chef,prepare meals,120000,180000,diploma,2,services,private,full_time,Goa,2021-07,cooking;hygiene
j2,Guard,male security guard needed,,,,,,,,,,
j3,Tele-caller,female tele-callers preferred,90000,,graduate,1.5,services,others,part_time,Delhi,2022-01,
";

    #[test]
    fn loads_three_rows() {
        let ps = read_corpus(CSV3.as_bytes(), CorpusFormat::Csv).unwrap();
        assert_eq!(ps.len(), 3);
        assert_eq!(ps[0].education, Education::Diploma);
        assert_eq!(ps[0].job_type, Some(JobType::FullTime));
        assert_eq!(ps[0].skill_tags.len(), 2);
        assert_eq!(ps[1].education, Education::Unspecified);
        assert_eq!(ps[1].explicit_request, ExplicitRequest::Male);
        assert_eq!(ps[2].explicit_request, ExplicitRequest::Female);
        assert_eq!(ps[2].wage_range.unwrap().low, 90000.0);
        let s = corpus_stats(&ps);
        assert_eq!(s.n_postings, 3);
        assert!((s.share_with_wage - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.share_explicit_male - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_wage_names_row() {
        let bad = "id,title,description,wage_low,wage_high\na,Cook,x,10,20\nb,Cook,y,30,20\n";
        let err = read_corpus(bad.as_bytes(), CorpusFormat::Csv).unwrap_err();
        match err {
            CorpusError::Field { row, field, .. } => {
                assert_eq!(row, 2);
                assert_eq!(field, "wage_low");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let bad = "id,title,description\na,Cook,x\na,Cook,y\n";
        assert!(matches!(
            read_corpus(bad.as_bytes(), CorpusFormat::Csv),
            Err(CorpusError::DuplicateId { row: 2, .. })
        ));
    }

    #[test]
    fn missing_required_column() {
        let bad = "id,title\na,Cook\n";
        assert!(matches!(
            read_corpus(bad.as_bytes(), CorpusFormat::Csv),
            Err(CorpusError::MissingColumn { .. })
        ));
    }

    #[test]
    fn jsonl_without_wages() {
        let src = r#"{"id":"a","title":"Cook","description":"meals","skill_tags":["x","y"]}
{"id":"b","title":"Driver","description":"drive","experience":3}
"#;
        let ps = read_corpus(src.as_bytes(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().all(|p| p.wage_range.is_none()));
        assert_eq!(corpus_stats(&ps).share_with_wage, 0.0);
        assert_eq!(ps[0].skill_tags.len(), 2);
        assert_eq!(ps[1].experience_years, Some(3.0));
    }

    #[test]
    fn malformed_number_names_field() {
        let src = "{\"id\":\"a\",\"title\":\"Cook\",\"description\":\"x\",\"experience\":\"lots\"}\n";
        let err = read_corpus(src.as_bytes(), CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("experience"), "{err}");
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn write_then_read_both_formats() {
        let ps = read_corpus(CSV3.as_bytes(), CorpusFormat::Csv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for fmt in [CorpusFormat::Csv, CorpusFormat::Jsonl] {
            let path = dir.path().join("c");
            write_corpus(&ps, &path, fmt).unwrap();
            assert_eq!(load_corpus(&path, fmt).unwrap(), ps);
        }
    }
}
