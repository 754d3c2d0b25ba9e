//! End-to-end acceptance checks. Each test prints one line of the form
//! `acceptance <n> <name>: PASS|FAIL ...` and fails if its criterion does.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use callback_audit_core::corpus::{
    synthesize_corpus, trim_wage_outliers, write_corpus, CorpusFormat, KeywordLean, SynthConfig, SyntheticCorpus,
};
use callback_audit_core::econometrics::{
    ols_fit, trait_segregation_regression, DataTable, FigurePoint, RegressionSpec, WageGapVariant,
};
use callback_audit_core::elicitation::{
    build_identity_prompt, build_persona_prompt, build_recommendation_prompt, build_tipi_prompt, score_tipi, Keyed,
    TraitDimension, TraitScores,
};
use callback_audit_core::gateway::{GatewayError, RequestContext};
use callback_audit_core::lexicon::{
    lasso_cv_fit, post_lasso_ols, post_lasso_r2, preprocess, tfidf_transform, LassoOptions, Vocabulary,
};
use callback_audit_core::metrics::{cohen_kappa, dissimilarity_index};
use callback_audit_core::occupation::{cosine_similarity, write_profile_rows};
use callback_audit_core::pipeline::{
    build_backend, read_sweep_csv, run_audit, run_audit_with_backend, BackendConfig, EconConfig, LexiconConfig,
    Manifest, OccupationConfig, PersonaSet, RunConfig, RunOptions, WageGapReport,
};
use callback_audit_core::{
    ChatBackend, ChatRequest, ChatResponse, ExplicitRequest, JobPosting, MockRecruiter, MockRecruiterParams, OrderArm,
    PersonaSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn report(n: u8, name: &str, outcome: Check) {
    match outcome {
        Ok(detail) => println!("acceptance {n} {name}: PASS ({detail})"),
        Err(why) => {
            println!("acceptance {n} {name}: FAIL ({why})");
            panic!("criterion {n} failed: {why}");
        }
    }
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- 1

#[test]
fn c1_prompt_fidelity() {
    let run = || -> Check {
        let job = JobPosting::new("g", "Registered Nurse", "Provide patient care on a busy ward.");
        let cases = [
            ("recommendation.txt", build_recommendation_prompt(&job, OrderArm::MrFirst)),
            ("recommendation_ms_first.txt", build_recommendation_prompt(&job, OrderArm::MsFirst)),
            (
                "persona.txt",
                build_persona_prompt(&job, TraitDimension::EmotionalStability, Keyed::Positive, OrderArm::MrFirst),
            ),
            ("identity.txt", build_identity_prompt(&job, "Marie Curie", OrderArm::MrFirst).map_err(|e| e.to_string())?),
            (
                "tipi.txt",
                build_tipi_prompt("Marie Curie", TraitDimension::Extraversion, Keyed::Positive)
                    .map_err(|e| e.to_string())?,
            ),
        ];
        for (file, built) in &cases {
            let want = golden(file);
            if *built != want {
                let at = built.bytes().zip(want.bytes()).position(|(a, b)| a != b).unwrap_or(built.len().min(want.len()));
                return Err(format!("{file} differs at byte {at}"));
            }
        }
        Ok(format!("{} golden files byte-equal", cases.len()))
    };
    report(1, "prompt fidelity", run());
}

// ---------------------------------------------------------------- 2

fn brute_dissimilarity(obs: &[(String, bool)]) -> f64 {
    let mut occs: Vec<&str> = Vec::new();
    for (o, _) in obs {
        if !occs.contains(&o.as_str()) {
            occs.push(o);
        }
    }
    let nf = obs.iter().filter(|o| o.1).count() as f64;
    let nm = obs.iter().filter(|o| !o.1).count() as f64;
    let mut total = 0.0;
    for occ in occs {
        let f = obs.iter().filter(|o| o.0 == occ && o.1).count() as f64;
        let m = obs.iter().filter(|o| o.0 == occ && !o.1).count() as f64;
        total += (f / nf - m / nm).abs();
    }
    total / 2.0
}

/// Kappa from the 2x2 table: 2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d)).
fn brute_kappa(pairs: &[(bool, bool)]) -> f64 {
    let count = |r: bool, c: bool| pairs.iter().filter(|p| p.0 == r && p.1 == c).count() as f64;
    let (a, b, c, d) = (count(true, true), count(true, false), count(false, true), count(false, false));
    2.0 * (a * d - b * c) / ((a + b) * (b + d) + (a + c) * (c + d))
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.hypot(*x));
    let (na, nb) = (norm(a), norm(b));
    a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
}

fn formula_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: [f64; 5] = [0.0; 5];

    let mut n_done = 0;
    while n_done < 1000 {
        let k = rng.random_range(1..8);
        let n = rng.random_range(2..60);
        let obs: Vec<(String, bool)> =
            (0..n).map(|_| (format!("occ{}", rng.random_range(0..k)), rng.random::<bool>())).collect();
        let both = obs.iter().any(|o| o.1) && obs.iter().any(|o| !o.1);
        match dissimilarity_index(&obs) {
            Ok(d) => {
                ensure!(both, "dissimilarity defined with one gender absent");
                worst[0] = worst[0].max((d - brute_dissimilarity(&obs)).abs());
                n_done += 1;
            }
            Err(_) => ensure!(!both, "dissimilarity failed on a valid instance"),
        }
    }

    let mut n_done = 0;
    while n_done < 1000 {
        let n = rng.random_range(2..50);
        let bias = rng.random::<f64>();
        let pairs: Vec<(bool, bool)> = (0..n)
            .map(|_| {
                let req = rng.random::<bool>();
                let follow = rng.random::<f64>() < bias;
                (req, if follow { req } else { rng.random::<bool>() })
            })
            .collect();
        let both = pairs.iter().any(|p| p.0) && pairs.iter().any(|p| !p.0);
        match cohen_kappa(&pairs) {
            Ok(k) => {
                ensure!(both, "kappa defined with one request class");
                worst[1] = worst[1].max((k - brute_kappa(&pairs)).abs());
                n_done += 1;
            }
            Err(_) => ensure!(!both, "kappa failed on a valid instance"),
        }
    }

    for _ in 0..1000 {
        let dim = rng.random_range(1..20);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max((c - brute_cosine(&a, &b)).abs());
    }
    ensure!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).is_err(), "zero vector accepted");

    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    for _ in 0..1000 {
        let n = rng.random_range(1..15);
        let docs: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let len = rng.random_range(0..12);
                (0..len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
            })
            .collect();
        let min_df = rng.random_range(1..4);
        let share = rng.random_range(0.5..=1.0);
        let vocab = Vocabulary::build(&docs, min_df, share);
        let x = tfidf_transform(&docs, &vocab);
        let mut expected_terms = Vec::new();
        for w in words {
            let df = docs.iter().filter(|d| d.iter().any(|t| t == w)).count();
            if df >= min_df && df as f64 <= share * n as f64 {
                expected_terms.push(w);
            }
        }
        let mut got: Vec<&str> = vocab.terms.iter().map(String::as_str).collect();
        got.sort_unstable();
        expected_terms.sort_unstable();
        ensure!(got == expected_terms, "vocabulary {got:?} != {expected_terms:?}");
        for (i, d) in docs.iter().enumerate() {
            let row = x.row(i);
            for w in &expected_terms {
                let count = d.iter().filter(|t| t == w).count() as f64;
                let df = docs.iter().filter(|d| d.iter().any(|t| t == w)).count() as f64;
                let want = if d.is_empty() { 0.0 } else { count / d.len() as f64 * (((1.0 + n as f64) / (1.0 + df)).ln() + 1.0) };
                let j = vocab.index_of(w).unwrap();
                let have = row.iter().find(|e| e.0 == j).map_or(0.0, |e| e.1);
                worst[3] = worst[3].max((have - want).abs());
            }
        }
    }

    for _ in 0..1000 {
        let runs: Vec<(u8, u8)> =
            (0..rng.random_range(1..11)).map(|_| (rng.random_range(1..=7), rng.random_range(1..=7))).collect();
        let r = score_tipi("x", TraitDimension::Openness, &runs).map_err(|e| e.to_string())?;
        let pos: f64 = runs.iter().map(|r| f64::from(r.0)).sum();
        let neg: f64 = runs.iter().map(|r| 8.0 - f64::from(r.1)).sum();
        worst[4] = worst[4].max((r.final_score - (pos + neg) / (2 * runs.len()) as f64).abs());
    }

    let elapsed = start.elapsed().as_secs_f64();
    let names = ["dissimilarity", "kappa", "cosine", "tfidf", "tipi"];
    for (name, w) in names.iter().zip(worst) {
        ensure!(w < 1e-10, "{name} max error {w:e}");
    }
    ensure!(elapsed < 10.0, "took {elapsed:.2}s");
    Ok(format!("max errors {:?}, {elapsed:.2}s", worst.map(|w| format!("{w:.1e}"))))
}

#[test]
fn c2_formula_oracles() {
    report(2, "formula oracles", formula_oracles());
}

// ---------------------------------------------------------------- 3

struct FeInstance {
    table: DataTable,
    x: DMatrix<f64>,
    y: DVector<f64>,
    clusters: Vec<usize>,
    n_clusters: usize,
}

fn fe_instance(rng: &mut ChaCha8Rng) -> FeInstance {
    let l1 = rng.random_range(2..7usize);
    let l2 = rng.random_range(2..6usize);
    let n = rng.random_range((l1 * l2 + 5).max(20)..=200);
    let mut g1 = Vec::with_capacity(n);
    let mut g2 = Vec::with_capacity(n);
    for i in 0..n {
        // Every level pair occurs once up front: no singletons, connected design.
        let (a, b) = if i < l1 * l2 { (i % l1, i / l1) } else { (rng.random_range(0..l1), rng.random_range(0..l2)) };
        g1.push(a);
        g2.push(b);
    }
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x2: Vec<f64> = (0..n).map(|i| rng.random_range(-1.0..1.0) + 0.4 * g2[i] as f64).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.8 * x1[i] - 1.3 * x2[i] + 0.5 * g1[i] as f64 - 0.2 * g2[i] as f64 + rng.random_range(-1.0..1.0))
        .collect();
    let n_clusters = rng.random_range(3..12usize);
    let clusters: Vec<usize> = (0..n).map(|i| if i < n_clusters { i } else { rng.random_range(0..n_clusters) }).collect();

    let mut table = DataTable::new(n);
    table.push_numeric("y", y.clone()).unwrap();
    table.push_numeric("x1", x1.clone()).unwrap();
    table.push_numeric("x2", x2.clone()).unwrap();
    table.push_categorical("g1", g1.iter().map(|g| format!("a{g}")).collect()).unwrap();
    table.push_categorical("g2", g2.iter().map(|g| format!("b{g}")).collect()).unwrap();
    table.push_categorical("cl", clusters.iter().map(|c| format!("c{c}")).collect()).unwrap();

    // Dummy expansion: all g1 levels, g2 levels after the first.
    let p = 2 + l1 + l2 - 1;
    let x = DMatrix::from_fn(n, p, |i, j| match j {
        0 => x1[i],
        1 => x2[i],
        j if j < 2 + l1 => f64::from(u8::from(g1[i] == j - 2)),
        j => f64::from(u8::from(g2[i] == j - 2 - l1 + 1)),
    });
    FeInstance { table, x, y: DVector::from_vec(y), clusters, n_clusters }
}

fn regression_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut coef_err, mut se_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let inst = fe_instance(&mut rng);
        let (n, k) = (inst.x.nrows(), inst.x.ncols());
        let bread = (inst.x.transpose() * &inst.x).try_inverse().ok_or("singular dummy design")?;
        let beta = &bread * inst.x.transpose() * &inst.y;
        let e = &inst.y - &inst.x * &beta;

        let mut hc = DMatrix::zeros(k, k);
        for i in 0..n {
            let xi = inst.x.row(i).transpose();
            hc += &xi * xi.transpose() * (e[i] * e[i]);
        }
        let v_hc1 = &bread * hc * &bread * (n as f64 / (n - k) as f64);

        let mut cl = DMatrix::zeros(k, k);
        for g in 0..inst.n_clusters {
            let mut s = DVector::zeros(k);
            for i in (0..n).filter(|&i| inst.clusters[i] == g) {
                s += inst.x.row(i).transpose() * e[i];
            }
            cl += &s * s.transpose();
        }
        let gf = inst.n_clusters as f64;
        let v_cr1 = &bread * cl * &bread * (gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k) as f64);

        let spec = RegressionSpec::new("y", &["x1", "x2"]).absorb(&[&["g1"], &["g2"]]);
        let hc1 = ols_fit(&inst.table, &spec).map_err(|e| e.to_string())?;
        let cr1 = ols_fit(&inst.table, &spec.clone().clustered("cl")).map_err(|e| e.to_string())?;
        ensure!(hc1.n_effective == n, "rows dropped: {} of {n}", n - hc1.n_effective);
        for (j, name) in ["x1", "x2"].iter().enumerate() {
            coef_err = coef_err.max((hc1.coef(name).unwrap() - beta[j]).abs());
            se_err = se_err.max((hc1.se(name).unwrap() - v_hc1[(j, j)].sqrt()).abs());
            se_err = se_err.max((cr1.se(name).unwrap() - v_cr1[(j, j)].sqrt()).abs());
        }
    }
    ensure!(coef_err < 1e-8, "coefficient error {coef_err:e}");
    ensure!(se_err < 1e-10, "standard error error {se_err:e}");
    Ok(format!("200 instances, coef err {coef_err:.1e}, se err {se_err:.1e}"))
}

#[test]
fn c3_regression_oracle() {
    report(3, "regression oracle", regression_oracle());
}

// ---------------------------------------------------------------- 4

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, root bracketed.
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Expected statistics of the planted model, with `keyword[i]` the keyword
/// log-odds of posting `i` and `request[i]` in {-1, 0, 1}.
struct Planted<'a> {
    keyword: &'a [f64],
    request: &'a [f64],
}

impl Planted<'_> {
    fn probs(&self, base: f64, boost: f64) -> Vec<f64> {
        self.keyword.iter().zip(self.request).map(|(k, r)| sigmoid(base + k + boost * r)).collect()
    }

    fn fcr(&self, base: f64, boost: f64) -> f64 {
        let p = self.probs(base, boost);
        p.iter().sum::<f64>() / p.len() as f64
    }

    fn kappa(&self, base: f64, boost: f64) -> f64 {
        let p = self.probs(base, boost);
        let idx: Vec<usize> = (0..p.len()).filter(|&i| self.request[i] != 0.0).collect();
        let m = idx.len() as f64;
        let q = idx.iter().filter(|&&i| self.request[i] > 0.0).count() as f64 / m;
        let cb = idx.iter().map(|&i| p[i]).sum::<f64>() / m;
        let po = idx.iter().map(|&i| if self.request[i] > 0.0 { p[i] } else { 1.0 - p[i] }).sum::<f64>() / m;
        let pe = q * cb + (1.0 - q) * (1.0 - cb);
        (po - pe) / (1.0 - pe)
    }
}

fn weighted_gap(corpus: &SyntheticCorpus, p: &HashMap<&str, f64>) -> f64 {
    let trimmed = trim_wage_outliers(&corpus.postings).unwrap();
    let (mut fw, mut f, mut mw, mut m) = (0.0, 0.0, 0.0, 0.0);
    for w in &trimmed {
        let pi = p[w.posting_id];
        fw += pi * w.log_wage;
        f += pi;
        mw += (1.0 - pi) * w.log_wage;
        m += 1.0 - pi;
    }
    fw / f - mw / m
}

fn analytic_dissimilarity(corpus: &SyntheticCorpus, p: &[f64]) -> f64 {
    let mut by_occ: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (t, pi) in corpus.truth.iter().zip(p) {
        let e = by_occ.entry(&t.soc_code).or_default();
        e.0 += pi;
        e.1 += 1.0 - pi;
    }
    let nf: f64 = by_occ.values().map(|v| v.0).sum();
    let nm: f64 = by_occ.values().map(|v| v.1).sum();
    0.5 * by_occ.values().map(|(f, m)| (f / nf - m / nm).abs()).sum::<f64>()
}

fn planted_keywords() -> BTreeMap<String, f64> {
    [
        ("nurse", 1.6),
        ("beautician", 1.4),
        ("teacher", 0.9),
        ("customer", 0.4),
        ("developer", -0.5),
        ("electrician", -1.3),
        ("welder", -1.4),
        ("driver", -1.6),
        ("caring", 0.8),
        ("polite", 0.6),
        ("strong", -0.8),
        ("fieldwork", -0.6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn planted_bias() -> Check {
    const N: usize = 10_000;
    const CORPUS_SEED: u64 = 41;
    const RUN_SEED: u64 = 7;
    const FCR: f64 = 0.40;
    const KAPPA: f64 = 0.8;
    const WAGE: f64 = -0.10;
    let start = Instant::now();

    let mut cfg = SynthConfig::demo(N);
    cfg.explicit_request_rate = 0.10;
    cfg.wage_share = 1.0;
    let text_only = synthesize_corpus(&cfg, CORPUS_SEED).map_err(|e| e.to_string())?;

    // Keyword log-odds from the mock itself with base and boost zeroed.
    let probe = MockRecruiter::new(MockRecruiterParams {
        keyword_weights: planted_keywords(),
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let keyword: Vec<f64> =
        text_only.postings.iter().map(|j| probe.female_logodds(j, &PersonaSpec::Base, OrderArm::MrFirst)).collect();
    let request: Vec<f64> = text_only
        .postings
        .iter()
        .map(|j| match j.explicit_request {
            ExplicitRequest::Female => 1.0,
            ExplicitRequest::Male => -1.0,
            ExplicitRequest::None => 0.0,
        })
        .collect();
    let planted = Planted { keyword: &keyword, request: &request };
    let base_for = |boost: f64| bisect(-10.0, 10.0, |b| planted.fcr(b, boost) - FCR);
    let boost = bisect(0.0, 20.0, |c| planted.kappa(base_for(c), c) - KAPPA);
    let base = base_for(boost);
    let probs = planted.probs(base, boost);

    let params = MockRecruiterParams {
        base_female_logodds: base,
        keyword_weights: planted_keywords(),
        compliance_boost: boost,
        refusal_prob: 0.05,
        seed: RUN_SEED,
        ..Default::default()
    };
    let mock = MockRecruiter::new(params.clone()).map_err(|e| e.to_string())?;
    for (j, want) in text_only.postings.iter().zip(&probs).take(200) {
        let got = mock.female_probability(j, &PersonaSpec::Base, OrderArm::MsFirst);
        ensure!((got - want).abs() < 1e-12, "planted model decomposition off for {}", j.id);
    }

    // Female-leaning keywords carry a wage shift chosen so the expected
    // female-minus-male log wage equals the planted penalty.
    let p_by_id: HashMap<&str, f64> =
        text_only.postings.iter().map(|j| j.id.as_str()).zip(probs.iter().copied()).collect();
    let with_shift = |s: f64| {
        let mut c = cfg.clone();
        for k in c.gendered_keywords.iter_mut().filter(|k| k.lean == KeywordLean::Female) {
            k.wage_log_shift = s;
        }
        synthesize_corpus(&c, CORPUS_SEED).unwrap()
    };
    // The gap is close to linear in the shift, so a few secant steps suffice.
    let (mut s0, mut g0) = (0.0, weighted_gap(&with_shift(0.0), &p_by_id) - WAGE);
    let (mut shift, mut g1) = (-0.5, weighted_gap(&with_shift(-0.5), &p_by_id) - WAGE);
    for _ in 0..8 {
        if g1.abs() < 1e-9 {
            break;
        }
        let next = shift - g1 * (shift - s0) / (g1 - g0);
        (s0, g0) = (shift, g1);
        shift = next;
        g1 = weighted_gap(&with_shift(shift), &p_by_id) - WAGE;
    }
    ensure!(g1.abs() < 1e-6, "wage calibration did not converge ({g1:e})");
    let corpus = with_shift(shift);
    ensure!(corpus.truth.iter().zip(&text_only.truth).all(|(a, b)| a == b), "wage shift perturbed the text");
    let target_gap = weighted_gap(&corpus, &p_by_id);
    let target_d = analytic_dissimilarity(&corpus, &probs);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    write_corpus(&corpus.postings, &d.join("corpus.jsonl"), CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    write_profile_rows(&d.join("profiles.csv"), &corpus.profile_rows()).map_err(|e| e.to_string())?;
    let config = RunConfig {
        corpus: d.join("corpus.jsonl"),
        corpus_format: None,
        output_dir: d.join("out"),
        seed: RUN_SEED,
        backend: BackendConfig::Mock(params),
        personas: PersonaSet { base: true, traits: vec![], figures: vec![] },
        order_arms: vec![OrderArm::MrFirst, OrderArm::MsFirst],
        elicit: Default::default(),
        threshold_grid: None,
        occupations: Some(OccupationConfig { profiles: Some(d.join("profiles.csv")), assignments: None, embedder: Default::default() }),
        econ: EconConfig { se_kind: callback_audit_core::econometrics::SeKind::Cr1, ..Default::default() },
        lexicon: None,
        chunk_size: 512,
        parallelism: None,
    };
    let bundle = run_audit(&config, &RunOptions::default()).map_err(|e| e.to_string())?;
    let pooled = bundle
        .summaries
        .iter()
        .find(|s| s.persona == "base" && s.order_arm.is_none())
        .ok_or("no pooled summary")?;
    let s = &pooled.summary;
    let fcr = s.fcr.ok_or("no fcr")?;
    let kappa = s.kappa.ok_or("no kappa")?;
    let dis = s.dissimilarity_6digit.ok_or("no dissimilarity")?;
    let wage: WageGapReport =
        serde_json::from_slice(&fs::read(d.join("out/regressions/base__wage_gap.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let w = wage.results.iter().find(|r| r.variant == WageGapVariant::None).ok_or("no unadjusted wage gap")?;
    let (coef, se) = (w.logpoints / 100.0, w.se_logpoints / 100.0);
    let elapsed = start.elapsed().as_secs_f64();

    let detail = format!(
        "fcr {fcr:.4} (target {FCR}), kappa {kappa:.4} (target {KAPPA}), wage {coef:.4} se {se:.4} (planted {WAGE}, \
         expected {target_gap:.4}), D {dis:.4} (analytic {target_d:.4}), boost {boost:.3}, base {base:.3}, \
         shift {shift:.3}, {elapsed:.1}s"
    );
    ensure!((fcr - FCR).abs() <= 0.02, "fcr off: {detail}");
    ensure!((kappa - KAPPA).abs() <= 0.05, "kappa off: {detail}");
    ensure!((coef - WAGE).abs() <= 3.0 * se, "wage gap off: {detail}");
    ensure!((dis - target_d).abs() <= 0.03, "dissimilarity off: {detail}");
    ensure!(elapsed < 60.0, "too slow: {detail}");
    Ok(detail)
}

#[test]
fn c4_planted_bias_end_to_end() {
    report(4, "planted bias end to end", planted_bias());
}

// ---------------------------------------------------------------- 5

fn synthetic_word(j: usize) -> String {
    let letters: String = [j / 676, (j / 26) % 26, j % 26].iter().map(|&k| char::from(b'a' + k as u8)).collect();
    format!("q{letters}")
}

fn lasso_recovery() -> Check {
    const N: usize = 2000;
    const VOCAB: usize = 500;
    const TOKENS: usize = 30;
    const SNR: f64 = 2.0;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let words: Vec<String> = (0..VOCAB).map(synthetic_word).collect();
    let texts: Vec<String> =
        (0..N).map(|_| (0..TOKENS).map(|_| words[rng.random_range(0..VOCAB)].as_str()).collect::<Vec<_>>().join(" ")).collect();
    let docs: Vec<Vec<String>> = texts.iter().map(|t| preprocess(t)).collect();
    let vocab = Vocabulary::build(&docs, 10, 0.85);
    ensure!(vocab.len() == VOCAB, "vocabulary has {} terms", vocab.len());
    let x = tfidf_transform(&docs, &vocab);

    let truth: Vec<(usize, f64)> = (0..10)
        .map(|k| {
            let j = vocab.index_of(&words[k * 47 + 3]).unwrap();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            (j, sign * (1.0 + 0.1 * k as f64))
        })
        .collect();
    let signal: Vec<f64> = (0..N)
        .map(|i| {
            let row = x.row(i);
            truth.iter().map(|&(j, b)| b * row.iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)).sum()
        })
        .collect();
    let mean = signal.iter().sum::<f64>() / N as f64;
    let var_signal = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / N as f64;
    let sigma = (var_signal / SNR).sqrt();
    let explainable = SNR / (SNR + 1.0);
    let noise = Normal::new(0.0, sigma).unwrap();
    // Targets are probabilities; an affine map keeps them well inside [0, 1]
    // without changing R² or the support.
    let scale = 0.05 / (var_signal + sigma * sigma).sqrt();
    let y: Vec<f64> = signal.iter().map(|s| 0.5 + scale * (s - mean + noise.sample(&mut rng))).collect();

    let fit = lasso_cv_fit(&x, &y, &LassoOptions { seed: 9, ..Default::default() }).map_err(|e| e.to_string())?;
    let selected = fit.selected();
    let recovered: Vec<&(usize, f64)> = truth.iter().filter(|(j, _)| selected.contains(j)).collect();
    let post = post_lasso_ols(&x, &y, &fit.train_rows, &selected, &vocab).map_err(|e| e.to_string())?;
    for (j, b) in &recovered {
        let name = format!("w:{}", vocab.terms[*j]);
        let c = post.coef(&name).ok_or(format!("{name} missing from post-lasso fit"))?;
        ensure!(c.signum() == b.signum(), "{name}: sign of {c} vs planted {b}");
    }
    let r2 = post_lasso_r2(&post, &x, &y, &fit.test_rows, &vocab);
    // Share of held-out variance the true model explains on the same rows;
    // the population value is SNR / (SNR + 1).
    let yt: Vec<f64> = fit.test_rows.iter().map(|&i| y[i]).collect();
    let yt_mean = yt.iter().sum::<f64>() / yt.len() as f64;
    let sst: f64 = yt.iter().map(|v| (v - yt_mean).powi(2)).sum();
    let sse: f64 = fit.test_rows.iter().map(|&i| (y[i] - 0.5 - scale * (signal[i] - mean)).powi(2)).sum();
    let oracle = 1.0 - sse / sst;
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!(
        "recovered {}/10, selected {}, held-out R2 {r2:.4} (explainable {oracle:.4} on these rows, {explainable:.4} in \
         population), {elapsed:.1}s",
        recovered.len(),
        selected.len()
    );
    ensure!(recovered.len() >= 8, "support: {detail}");
    ensure!((r2 - oracle).abs() <= 0.05, "R2: {detail}");
    ensure!(elapsed < 30.0, "too slow: {detail}");
    Ok(detail)
}

#[test]
fn c5_lasso_recovery() {
    report(5, "lasso recovery", lasso_recovery());
}

// ---------------------------------------------------------------- 6, 7

fn mock_workspace(dir: &Path, n: usize, seed: u64, personas: PersonaSet) -> RunConfig {
    let synth = synthesize_corpus(&SynthConfig::demo(n), seed).unwrap();
    write_corpus(&synth.postings, &dir.join("corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    write_profile_rows(&dir.join("profiles.csv"), &synth.profile_rows()).unwrap();
    let mut modifiers = BTreeMap::new();
    modifiers.insert("trait:agreeableness:positive".to_string(), 0.4);
    modifiers.insert("trait:openness:negative".to_string(), -0.5);
    modifiers.insert("identity:James Watson".to_string(), -0.3);
    RunConfig {
        corpus: dir.join("corpus.jsonl"),
        corpus_format: None,
        output_dir: dir.join("out"),
        seed,
        backend: BackendConfig::Mock(MockRecruiterParams {
            base_female_logodds: -0.2,
            keyword_weights: planted_keywords(),
            compliance_boost: 2.5,
            refusal_prob: 0.05,
            persona_modifiers: modifiers,
            ms_first_shift: 0.15,
            ..Default::default()
        }),
        personas,
        order_arms: vec![OrderArm::MrFirst, OrderArm::MsFirst],
        elicit: Default::default(),
        threshold_grid: None,
        occupations: Some(OccupationConfig { profiles: Some(dir.join("profiles.csv")), assignments: None, embedder: Default::default() }),
        econ: EconConfig { tipi_runs: 3, ..Default::default() },
        lexicon: Some(LexiconConfig::default()),
        chunk_size: 32,
        parallelism: Some(3),
    }
}

fn every_persona() -> PersonaSet {
    PersonaSet {
        base: true,
        traits: vec!["all".into()],
        figures: vec!["James Watson".into(), "Francis Crick".into()],
    }
}

fn sweep_checks() -> Check {
    let mut sweeps = 0;
    for (n, seed) in [(500usize, 1u64), (700, 2)] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = mock_workspace(dir.path(), n, seed, every_persona());
        let bundle = run_audit(&config, &RunOptions::default()).map_err(|e| e.to_string())?;
        for persona in config.personas.expand().map_err(|e| e.to_string())? {
            let path = config.output_dir.join("sweeps").join(format!("{}.csv", persona.slug()));
            let points = read_sweep_csv(&path).map_err(|e| e.to_string())?;
            ensure!(points.len() == 99, "{}: {} grid points", path.display(), points.len());
            for w in points.windows(2) {
                ensure!(w[0].rho < w[1].rho, "{}: grid not ascending", path.display());
                ensure!(w[1].fcr <= w[0].fcr, "{}: fcr rises from {} to {} at rho {}", path.display(), w[0].fcr, w[1].fcr, w[1].rho);
            }
            let best = points.iter().map(|p| (p.fcr - 0.5).abs()).fold(f64::INFINITY, f64::min);
            let entry = bundle
                .summaries
                .iter()
                .find(|s| s.persona == persona.key() && s.order_arm.is_none())
                .ok_or(format!("no summary for {}", persona.key()))?;
            let rho = entry.parity_rho.ok_or(format!("no parity point for {}", persona.key()))?;
            let at = points.iter().find(|p| p.rho == rho).ok_or("parity rho not on the grid")?;
            ensure!((at.fcr - 0.5).abs() <= best, "{}: parity at {rho} is not closest to one half", persona.key());
            sweeps += 1;
        }
    }
    Ok(format!("{sweeps} sweeps monotone with minimal parity gap"))
}

#[test]
fn c6_sweep_monotonicity_and_parity() {
    report(6, "sweep monotonicity and parity", sweep_checks());
}

struct Flaky<B> {
    inner: B,
    left: AtomicUsize,
}

impl<B: ChatBackend> ChatBackend for Flaky<B> {
    fn complete(&self, r: &ChatRequest, c: &RequestContext<'_>) -> Result<ChatResponse, GatewayError> {
        if self.left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1)).is_err() {
            return Err(GatewayError::Transport { attempts: 1, message: "connection reset".into() });
        }
        self.inner.complete(r, c)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn resumability() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ca = mock_workspace(a.path(), 400, 3, every_persona());
    let mut cb = ca.clone();
    cb.output_dir = b.path().join("out");
    run_audit(&ca, &RunOptions::default()).map_err(|e| e.to_string())?;

    let mut interruptions = 0;
    for budget in [150, 900, 2600] {
        let flaky = Flaky { inner: build_backend(&cb).map_err(|e| e.to_string())?, left: AtomicUsize::new(budget) };
        match run_audit_with_backend(&cb, &flaky, &RunOptions::default()) {
            Err(e) => {
                ensure!(e.exit_code() == 3, "interruption reported as {e}");
                interruptions += 1;
            }
            Ok(_) => return Err(format!("budget {budget} was enough to finish")),
        }
    }
    // A half-written line on top of the failures.
    let log = cb.output_dir.join("records/base__ms_first.jsonl");
    let mut bytes = fs::read(&log).map_err(|e| e.to_string())?;
    bytes.extend_from_slice(b"{\"posting_id\":\"syn-0");
    fs::write(&log, bytes).map_err(|e| e.to_string())?;
    run_audit(&cb, &RunOptions::default()).map_err(|e| e.to_string())?;

    let (fa, fb) = (files_under(&ca.output_dir), files_under(&cb.output_dir));
    ensure!(fa == fb, "file sets differ");
    let mut compared = 0;
    let mut differing = Vec::new();
    for rel in &fa {
        if rel == Path::new("manifest.json") {
            continue;
        }
        if fs::read(ca.output_dir.join(rel)).unwrap() != fs::read(cb.output_dir.join(rel)).unwrap() {
            differing.push(rel.display().to_string());
        }
        compared += 1;
    }
    ensure!(differing.is_empty(), "differing files: {}", differing.join(", "));
    // The manifest carries wall-clock times; its file digests must agree.
    let (ma, mb) = (Manifest::read(&ca.output_dir).unwrap(), Manifest::read(&cb.output_dir).unwrap());
    ensure!(ma.files == mb.files, "manifest digests differ");
    ensure!(ma.config_hash == mb.config_hash, "config hashes differ");
    Ok(format!("{interruptions} interruptions and a torn line, {compared} files byte-identical"))
}

#[test]
fn c7_determinism_and_resumability() {
    report(7, "determinism and resumability", resumability());
}

// ---------------------------------------------------------------- 8

fn trait_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let effect = Normal::new(0.0, 0.01).unwrap();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut tipi = HashMap::new();
    let mut points = Vec::new();
    for h in 0..50 {
        let name = format!("figure{h:02}");
        let s = TraitScores {
            openness: rng.random_range(1.0..7.0),
            conscientiousness: rng.random_range(1.0..7.0),
            extraversion: rng.random_range(1.0..7.0),
            agreeableness: rng.random_range(1.0..7.0),
            emotional_stability: rng.random_range(1.0..7.0),
        };
        let u = effect.sample(&mut rng);
        for _ in 0..rng.random_range(2..20) {
            let fcr = rng.random_range(0.12..0.88);
            let d = 0.05 + 0.02 * s.openness + 0.005 * s.conscientiousness - 0.004 * s.extraversion + 0.03 * fcr
                + u
                + noise.sample(&mut rng);
            points.push(FigurePoint { figure: name.clone(), rho: rng.random_range(0.01..0.99), fcr, value: d });
        }
        tipi.insert(name, s);
    }
    let fit = trait_segregation_regression(&points, &tipi).map_err(|e| e.to_string())?;
    let (b, se) = (fit.coef("openness").ok_or("no openness term")?, fit.se("openness").unwrap());
    ensure!(fit.n_clusters == Some(50), "clusters {:?}", fit.n_clusters);
    ensure!((b - 0.02).abs() <= 3.0 * se, "openness {b} (se {se})");

    let mut dup = points.clone();
    dup.extend(points.iter().filter(|p| p.figure == "figure07").cloned());
    let refit = trait_segregation_regression(&dup, &tipi).map_err(|e| e.to_string())?;
    let mut shift: f64 = 0.0;
    for t in &fit.terms {
        shift = shift.max((refit.coef(&t.name).unwrap() - t.coef).abs());
    }
    ensure!(shift < 1e-10, "duplicating a figure moved estimates by {shift:e}");
    Ok(format!("openness {b:.5} (se {se:.5}), duplication shift {shift:.1e}"))
}

#[test]
fn c8_trait_regression_oracle() {
    report(8, "trait regression oracle", trait_oracle());
}
