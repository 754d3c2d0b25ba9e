use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributionScore, LexiconError};

/// Category word lists; a pattern ending in `*` matches by prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDictionary {
    categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq)]
struct Category {
    name: String,
    literals: HashSet<String>,
    prefixes: Vec<String>,
}

impl Category {
    fn matches(&self, token: &str) -> bool {
        self.literals.contains(token) || self.prefixes.iter().any(|p| token.starts_with(p.as_str()))
    }
}

impl CategoryDictionary {
    /// One `category: word, prefix*` line per category. Blank lines and lines
    /// starting with `#` are skipped. Patterns are lowercased.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut categories: Vec<Category> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| LexiconError::Dictionary { line: lineno + 1, message: message.into() };
            let (name, words) = line.split_once(':').ok_or_else(|| err("missing ':'"))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty category name"));
            }
            if categories.iter().any(|c| c.name == name) {
                return Err(err("duplicate category"));
            }
            let mut cat = Category { name: name.to_string(), literals: HashSet::new(), prefixes: Vec::new() };
            for w in words.split(',').map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()) {
                match w.strip_suffix('*') {
                    Some("") => return Err(err("bare wildcard")),
                    Some(p) => cat.prefixes.push(p.to_string()),
                    None => {
                        cat.literals.insert(w);
                    }
                }
            }
            if cat.literals.is_empty() && cat.prefixes.is_empty() {
                return Err(err("category has no words"));
            }
            categories.push(cat);
        }
        if categories.is_empty() {
            return Err(LexiconError::Dictionary { line: 0, message: "no categories".into() });
        }
        Ok(CategoryDictionary { categories })
    }

    pub fn from_file(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    /// In dictionary order.
    pub proportions: Vec<f64>,
    pub empty_document: bool,
}

/// Share of tokens matching each category. Categories may overlap.
pub fn category_proportions(tokens: &[String], dict: &CategoryDictionary) -> CategoryProfile {
    if tokens.is_empty() {
        return CategoryProfile { proportions: vec![0.0; dict.len()], empty_document: true };
    }
    let n = tokens.len() as f64;
    let proportions = dict
        .categories
        .iter()
        .map(|c| tokens.iter().filter(|t| c.matches(t)).count() as f64 / n)
        .collect();
    CategoryProfile { proportions, empty_document: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEntry {
    pub term: String,
    pub category: String,
    pub human_score: f64,
}

pub fn read_external_lexicon(path: &Path) -> Result<Vec<ExternalEntry>, LexiconError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let mut e: ExternalEntry = row?;
        e.term = e.term.trim().to_lowercase();
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub term: String,
    pub score: f64,
    pub category: String,
    pub human_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub rows: Vec<MergedRow>,
    /// Matched terms over model terms.
    pub match_share: f64,
    /// Spearman correlation of model score and human score.
    pub rank_correlation: Option<f64>,
    /// Pearson correlation of the two signs.
    pub sign_correlation: Option<f64>,
    /// Input scores with the external category filled in where matched.
    pub annotated: Vec<AttributionScore>,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Average ranks, 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Inner join on term. The first external row for a term wins.
pub fn merge_external_lexicon(scores: &[AttributionScore], external: &[ExternalEntry]) -> MergeReport {
    let mut ext: HashMap<&str, &ExternalEntry> = HashMap::new();
    for e in external {
        ext.entry(e.term.as_str()).or_insert(e);
    }
    let mut rows = Vec::new();
    let mut annotated = scores.to_vec();
    for s in &mut annotated {
        if let Some(e) = ext.get(s.term.as_str()) {
            s.category = Some(e.category.clone());
            rows.push(MergedRow {
                term: s.term.clone(),
                score: s.score,
                category: e.category.clone(),
                human_score: e.human_score,
            });
        }
    }
    let match_share = if scores.is_empty() { 0.0 } else { rows.len() as f64 / scores.len() as f64 };
    if rows.is_empty() {
        log::warn!("no model term appears in the external lexicon");
    }
    let model: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let human: Vec<f64> = rows.iter().map(|r| r.human_score).collect();
    let rank_correlation = spearman(&model, &human);
    let sign_correlation = pearson(
        &model.iter().map(|v| sign(*v)).collect::<Vec<_>>(),
        &human.iter().map(|v| sign(*v)).collect::<Vec<_>>(),
    );
    MergeReport { rows, match_share, rank_correlation, sign_correlation, annotated }
}

/// `term,score,category` rows.
pub fn write_attribution_csv<W: Write>(w: W, scores: &[AttributionScore]) -> Result<(), LexiconError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["term", "score", "category"])?;
    for s in scores {
        wtr.write_record([s.term.as_str(), &format!("{}", s.score), s.category.as_deref().unwrap_or("")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyed_rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn score(term: &str, s: f64) -> AttributionScore {
        AttributionScore { term: term.into(), coefficient: s, idf: 1.0, score: s, category: None }
    }

    #[test]
    fn money_example() {
        let d = CategoryDictionary::parse("money: salary, pay*\nsocial: team, friend*").unwrap();
        let p = category_proportions(&toks("pay payment salary visit"), &d);
        assert_eq!(p.proportions, vec![0.75, 0.0]);
        assert!(!p.empty_document);
        let p = category_proportions(&toks("salary salary"), &d);
        assert_eq!(p.proportions[0], 1.0);
        let p = category_proportions(&[], &d);
        assert!(p.empty_document);
        assert_eq!(p.proportions, vec![0.0, 0.0]);
    }

    #[test]
    fn dictionary_errors() {
        assert!(CategoryDictionary::parse("").is_err());
        assert!(CategoryDictionary::parse("money:").is_err());
        assert!(CategoryDictionary::parse("money salary").is_err());
        assert!(CategoryDictionary::parse("a: x\na: y").is_err());
        assert!(CategoryDictionary::parse("a: *").is_err());
        let d = CategoryDictionary::parse("# comment\n\nWork: Job*, OFFICE").unwrap();
        assert_eq!(d.names(), vec!["Work"]);
        assert_eq!(category_proportions(&toks("jobs office"), &d).proportions, vec![1.0]);
    }

    #[test]
    fn merge_cases() {
        let scores = vec![score("nurse", 0.8), score("driver", -0.5), score("caring", 0.3), score("heavy", -0.1)];
        let same: Vec<ExternalEntry> = scores
            .iter()
            .map(|s| ExternalEntry { term: s.term.clone(), category: "g".into(), human_score: s.score.signum() })
            .collect();
        let r = merge_external_lexicon(&scores, &same);
        assert_eq!(r.match_share, 1.0);
        assert!((r.sign_correlation.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.annotated.iter().all(|s| s.category.as_deref() == Some("g")));

        let scaled: Vec<ExternalEntry> = scores
            .iter()
            .map(|s| ExternalEntry { term: s.term.clone(), category: "g".into(), human_score: 3.0 * s.score })
            .collect();
        assert!((merge_external_lexicon(&scores, &scaled).rank_correlation.unwrap() - 1.0).abs() < 1e-12);

        let disjoint = vec![ExternalEntry { term: "other".into(), category: "g".into(), human_score: 1.0 }];
        let r = merge_external_lexicon(&scores, &disjoint);
        assert_eq!(r.match_share, 0.0);
        assert!(r.rank_correlation.is_none() && r.sign_correlation.is_none());
    }

    #[test]
    fn random_signs_uncorrelated() {
        let mut rng = keyed_rng(17, &["merge"]);
        let scores: Vec<AttributionScore> =
            (0..2000).map(|i| score(&format!("w{i}"), rng.random::<f64>() - 0.5)).collect();
        let ext: Vec<ExternalEntry> = scores
            .iter()
            .map(|s| ExternalEntry {
                term: s.term.clone(),
                category: "g".into(),
                human_score: if rng.random::<bool>() { 1.0 } else { -1.0 },
            })
            .collect();
        let r = merge_external_lexicon(&scores, &ext);
        // Null sd is 1/sqrt(2000), about 0.022.
        assert!(r.sign_correlation.unwrap().abs() < 0.09);
        assert!(r.rank_correlation.unwrap().abs() < 0.09);
    }

    #[test]
    fn attribution_csv_layout() {
        let mut s = score("nurse", 0.5);
        s.category = Some("care".into());
        let mut buf = Vec::new();
        write_attribution_csv(&mut buf, &[s, score("x", -1.0)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "term,score,category\nnurse,0.5,care\nx,-1,\n");
    }

    #[test]
    fn spearman_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn order_invariant(words in prop::collection::vec("[a-d]{1,3}", 1..30), seed in 0u64..100) {
            let d = CategoryDictionary::parse("x: a*, bb\ny: c, dd*").unwrap();
            let mut shuffled = words.clone();
            shuffled.shuffle(&mut keyed_rng(seed, &[]));
            prop_assert_eq!(category_proportions(&words, &d), category_proportions(&shuffled, &d));
        }
    }
}
