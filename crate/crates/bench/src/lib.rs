//! Deterministic inputs for the kernel benchmarks.

use std::collections::HashMap;

use callback_audit_core::econometrics::DataTable;
use callback_audit_core::lexicon::CsrMatrix;
use callback_audit_core::{CallbackRecord, OrderArm, Outcome, PersonaSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Token lists drawn uniformly from `vocab` synthetic words.
pub fn documents(n: usize, vocab: usize, len: usize, seed: u64) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..len).map(|_| format!("w{}", r.random_range(0..vocab))).collect()).collect()
}

/// Sparse design with roughly `density * cols` nonzeros per row, plus a
/// target driven by the first five columns.
pub fn sparse_problem(rows: usize, cols: usize, density: f64, seed: u64) -> (CsrMatrix, Vec<f64>) {
    let mut r = rng(seed);
    let mut y = Vec::with_capacity(rows);
    let data: Vec<Vec<(usize, f64)>> = (0..rows)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..cols {
                if r.random::<f64>() < density {
                    row.push((j, r.random_range(0.0..1.0)));
                }
            }
            let signal: f64 = row.iter().filter(|e| e.0 < 5).map(|e| 0.05 * e.1).sum();
            y.push((0.4 + signal + r.random_range(-0.05..0.05)).clamp(0.0, 1.0));
            row
        })
        .collect();
    (CsrMatrix::from_rows(cols, data), y)
}

/// Outcome, two regressors and two categorical fixed effects.
pub fn fe_table(n: usize, levels: (usize, usize), seed: u64) -> DataTable {
    let mut r = rng(seed);
    let g1: Vec<usize> = (0..n).map(|i| if i < levels.0 { i } else { r.random_range(0..levels.0) }).collect();
    let g2: Vec<usize> = (0..n).map(|i| if i < levels.1 { i } else { r.random_range(0..levels.1) }).collect();
    let x1: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> =
        (0..n).map(|i| x1[i] - 0.5 * x2[i] + 0.01 * (g1[i] + g2[i]) as f64 + r.random_range(-1.0..1.0)).collect();
    let mut t = DataTable::new(n);
    t.push_numeric("y", y).unwrap();
    t.push_numeric("x1", x1).unwrap();
    t.push_numeric("x2", x2).unwrap();
    t.push_categorical("g1", g1.iter().map(|g| format!("a{g}")).collect()).unwrap();
    t.push_categorical("g2", g2.iter().map(|g| format!("b{g}")).collect()).unwrap();
    t.push_categorical("cl", (0..n).map(|i| format!("c{}", i % 97)).collect()).unwrap();
    t
}

/// Answered callback records with probabilities, plus occupation and log
/// wage lookups for every posting.
pub struct SweepInput {
    pub records: Vec<CallbackRecord>,
    pub occupations: HashMap<String, String>,
    pub log_wages: HashMap<String, f64>,
}

pub fn sweep_input(n: usize, n_occupations: usize, seed: u64) -> SweepInput {
    let mut r = rng(seed);
    let mut records = Vec::with_capacity(n);
    let mut occupations = HashMap::with_capacity(n);
    let mut log_wages = HashMap::with_capacity(n);
    for i in 0..n {
        let id = format!("p{i}");
        let occ = r.random_range(0..n_occupations);
        let p = (0.2 + 0.6 * occ as f64 / n_occupations as f64 + r.random_range(-0.2..0.2)).clamp(0.01, 0.99);
        records.push(CallbackRecord {
            posting_id: id.clone(),
            persona: PersonaSpec::Base,
            order_arm: OrderArm::MrFirst,
            outcome: if p > 0.5 { Outcome::Female } else { Outcome::Male },
            p_female: Some(p),
            p_ms: None,
            p_mr: None,
            raw_text: String::new(),
        });
        occupations.insert(id.clone(), format!("{:02}-{:04}", 11 + occ % 40, occ));
        log_wages.insert(id, 12.0 + r.random_range(-0.5..0.5));
    }
    SweepInput { records, occupations, log_wages }
}

/// `(occupation, is_female)` observations.
pub fn segregation_obs(n: usize, n_occupations: usize, seed: u64) -> Vec<(String, bool)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let occ = r.random_range(0..n_occupations);
            (format!("occ{occ}"), r.random::<f64>() < occ as f64 / n_occupations as f64)
        })
        .collect()
}
