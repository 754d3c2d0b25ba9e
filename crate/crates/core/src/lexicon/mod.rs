//! Unigram TF-IDF features, cross-validated Lasso with post-Lasso OLS
//! attribution, external lexicon merging, and dictionary category profiles.

mod dictionary;
mod lasso;
mod sparse;

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dictionary::{
    category_proportions, merge_external_lexicon, read_external_lexicon, spearman, write_attribution_csv, CategoryDictionary,
    CategoryProfile, ExternalEntry, MergeReport, MergedRow,
};
pub use lasso::{
    attribution_scores, lasso_cv_fit, lasso_objective, lasso_path_at, post_lasso_ols, post_lasso_r2, AttributionScore, LassoFit,
    LassoOptions, TERM_PREFIX,
};
pub use sparse::{CscMatrix, CsrMatrix};

use crate::econometrics::EconError;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{rows} feature rows but {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("target value {0} outside [0, 1]")]
    TargetRange(f64),
    #[error("too few rows ({0}) for the requested split and folds")]
    TooFewRows(usize),
    #[error("no terms were selected")]
    EmptySelection,
    #[error("invalid option: {0}")]
    Options(String),
    #[error("dictionary line {line}: {message}")]
    Dictionary { line: usize, message: String },
    #[error(transparent)]
    Regression(#[from] EconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S*").expect("valid regex"))
}

fn entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"&(?:[a-zA-Z]+|#[0-9]+|#[xX][0-9a-fA-F]+);").expect("valid regex"))
}

/// Lowercased alphabetic tokens of two or more letters, with URLs and HTML
/// entities removed first.
pub fn preprocess(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let no_urls = url_re().replace_all(&lower, " ");
    let no_entities = entity_re().replace_all(&no_urls, " ");
    no_entities
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}

/// Terms kept for the document-term matrix, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub n_documents: usize,
    lookup: HashMap<String, usize>,
}

pub const MIN_DF: usize = 10;
pub const MAX_DF_SHARE: f64 = 0.85;

impl Vocabulary {
    /// Terms with `min_df <= DF <= max_df_share * n`.
    pub fn build(docs: &[Vec<String>], min_df: usize, max_df_share: f64) -> Self {
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            let mut seen: Vec<&str> = d.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len();
        let cap = max_df_share * n as f64;
        let mut kept: Vec<(&str, usize)> =
            df.into_iter().filter(|(_, c)| *c >= min_df && (*c as f64) <= cap).collect();
        kept.sort_unstable();
        Self::from_parts(
            kept.iter().map(|(t, _)| t.to_string()).collect(),
            kept.iter().map(|(_, c)| *c).collect(),
            n,
        )
    }

    pub fn from_parts(terms: Vec<String>, document_frequency: Vec<usize>, n_documents: usize) -> Self {
        let lookup = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms, document_frequency, n_documents, lookup }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.lookup.get(term).copied()
    }

    /// `ln((1 + n) / (1 + DF)) + 1`.
    pub fn idf(&self, j: usize) -> f64 {
        idf(self.n_documents, self.document_frequency[j])
    }
}

pub fn idf(n_documents: usize, df: usize) -> f64 {
    ((1.0 + n_documents as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Rows are `count / document length * IDF`; tokens outside the vocabulary
/// still count toward the length. Rows are not normalised.
pub fn tfidf_transform(docs: &[Vec<String>], vocab: &Vocabulary) -> CsrMatrix {
    let idf: Vec<f64> = (0..vocab.len()).map(|j| vocab.idf(j)).collect();
    let rows: Vec<Vec<(usize, f64)>> = docs
        .par_iter()
        .map(|d| {
            if d.is_empty() {
                return Vec::new();
            }
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for t in d {
                if let Some(j) = vocab.index_of(t) {
                    *counts.entry(j).or_default() += 1;
                }
            }
            let len = d.len() as f64;
            let mut row: Vec<(usize, f64)> =
                counts.into_iter().map(|(j, c)| (j, c as f64 / len * idf[j])).collect();
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    CsrMatrix::from_rows(vocab.len(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabularyOptions {
    pub min_df: usize,
    pub max_df_share: f64,
}

impl Default for VocabularyOptions {
    fn default() -> Self {
        VocabularyOptions { min_df: MIN_DF, max_df_share: MAX_DF_SHARE }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn preprocessing_examples() {
        assert_eq!(preprocess("Visit http://x.co NOW!!"), vec!["visit", "now"]);
        assert!(preprocess("R&D a b").is_empty());
        assert!(preprocess("").is_empty());
        assert_eq!(preprocess("Salary&nbsp;Rs&#8377;15k www.jobs.in/apply  team-work"), vec!["salary", "rs", "team", "work"]);
        assert_eq!(preprocess("caf&eacute; AT&amp;T"), vec!["caf", "at"]);
    }

    #[test]
    fn idf_examples() {
        assert_eq!(idf(5, 5), 1.0);
        assert!((idf(3, 1) - (2.0f64.ln() + 1.0)).abs() < 1e-15);
        let v = Vocabulary::from_parts(vec!["alpha".into()], vec![1], 3);
        let m = tfidf_transform(&[toks("alpha alpha beta")], &v);
        let row = m.row(0);
        assert_eq!(row.len(), 1);
        assert!((row[0].1 - 2.0 / 3.0 * (2.0f64.ln() + 1.0)).abs() < 1e-12);
        assert!((row[0].1 - 1.1288).abs() < 1e-4);
        assert!(tfidf_transform(&[vec![]], &v).row(0).is_empty());
    }

    #[test]
    fn vocabulary_filter() {
        let mut docs = Vec::new();
        for i in 0..20 {
            let mut d = vec!["common".to_string()];
            if i < 10 {
                d.push("ten".into());
            }
            if i < 9 {
                d.push("nine".into());
            }
            if i < 17 {
                d.push("seventeen".into());
            }
            if i < 18 {
                d.push("eighteen".into());
            }
            docs.push(d);
        }
        let v = Vocabulary::build(&docs, 10, 0.85);
        assert_eq!(v.terms, vec!["seventeen", "ten"]);
        assert_eq!(v.document_frequency, vec![17, 10]);
    }

    proptest! {
        #[test]
        fn filter_invariant(docs in prop::collection::vec(prop::collection::vec(0u8..30, 0..8), 10..60)) {
            let docs: Vec<Vec<String>> = docs.iter().map(|d| d.iter().map(|t| format!("t{t}")).collect()).collect();
            let v = Vocabulary::build(&docs, 3, 0.85);
            for (j, t) in v.terms.iter().enumerate() {
                let df = docs.iter().filter(|d| d.contains(t)).count();
                prop_assert_eq!(df, v.document_frequency[j]);
                prop_assert!(df >= 3 && df as f64 <= 0.85 * docs.len() as f64);
            }
        }
    }
}
