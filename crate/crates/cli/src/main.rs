//! Command-line front end for the callback audit toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 transport error,
//! 4 analysis error.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use callback_audit_core::corpus::{
    corpus_stats, load_corpus, synthesize_corpus, trim_wage_outliers, write_corpus, CorpusFormat, SynthConfig,
};
use callback_audit_core::econometrics::{render_table, wage_gap_regression, SeKind, WageGapOptions, WageGapVariant};
use callback_audit_core::elicitation::{rate_identity, read_records, trait_scores, CallbackRecord};
use callback_audit_core::metrics::{default_grid, parity_interpolated, parity_point, threshold_sweep, write_sweep_csv};
use callback_audit_core::occupation::{
    assign_postings, build_profiles, read_assignments, read_profile_rows, write_assignments, write_profile_rows,
    Embedder, HashedBow, RemoteEmbedder,
};
use callback_audit_core::pipeline::{
    build_backend, fit_lexicon, mean_female_probability, render_report, run_audit, write_attribution_file,
    EmbedderConfig, LexiconConfig, PipelineError, ReportFormat, RunConfig, RunOptions,
};
use callback_audit_core::{JobPosting, PersonaSpec};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Analysis(_) => 4,
            CliError::Pipeline(p) => p.exit_code() as u8,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn analysis_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Analysis(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "callback-audit", version, about = "Audit gender bias in LLM hiring callbacks")]
struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect job-posting corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Run audits and threshold sweeps.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Map postings to occupation codes.
    #[command(subcommand)]
    Occupations(OccupationsCmd),
    /// Fit the lexical attribution model.
    #[command(subcommand)]
    Lexicon(LexiconCmd),
    /// Wage-gap regressions.
    #[command(subcommand)]
    Econ(EconCmd),
    /// Perceived-personality ratings for public figures.
    #[command(subcommand)]
    Persona(PersonaCmd),
    /// Render a finished audit directory.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Write a synthetic corpus with planted structure.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (.jsonl or .csv).
        #[arg(long)]
        out: PathBuf,
        /// Also write the generating occupation profiles here.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Also write the per-posting ground truth (JSON) here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print summary statistics of a corpus as JSON.
    Stats {
        #[command(flatten)]
        corpus: CorpusArg,
    },
}

#[derive(Args)]
struct CorpusArg {
    #[arg(long)]
    corpus: PathBuf,
    /// csv or jsonl; taken from the extension when omitted.
    #[arg(long)]
    format: Option<CorpusFormat>,
}

impl CorpusArg {
    fn load(&self) -> Result<Vec<JobPosting>> {
        let format = match self.format {
            Some(f) => f,
            None => CorpusFormat::from_path(&self.corpus)
                .ok_or_else(|| CliError::Config(format!("cannot tell the format of {}", self.corpus.display())))?,
        };
        load_corpus(&self.corpus, format).map_err(|e| CliError::Config(format!("{}: {e}", self.corpus.display())))
    }
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Run a full audit from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Discard earlier outputs instead of resuming.
        #[arg(long)]
        fresh: bool,
    },
    /// Threshold sweep over existing record logs.
    Sweep {
        /// Record logs (JSONL); pooled.
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        /// Corpus for wages.
        #[command(flatten)]
        corpus: CorpusArgOpt,
        /// Occupation assignments CSV for dissimilarity.
        #[arg(long)]
        assignments: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgOpt {
    #[arg(long = "corpus")]
    corpus_path: Option<PathBuf>,
    #[arg(long = "corpus-format")]
    corpus_format: Option<CorpusFormat>,
}

impl CorpusArgOpt {
    fn load(&self) -> Result<Option<Vec<JobPosting>>> {
        match &self.corpus_path {
            None => Ok(None),
            Some(p) => CorpusArg { corpus: p.clone(), format: self.corpus_format }.load().map(Some),
        }
    }
}

#[derive(Subcommand)]
enum OccupationsCmd {
    /// Assign every posting its nearest occupation profile.
    Map {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hashed bag-of-words dimension.
        #[arg(long, default_value_t = 512)]
        dimension: usize,
        /// TOML embedder config (`kind = "remote"` with an endpoint) instead
        /// of the hashed embedder.
        #[arg(long)]
        embedder: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LexiconCmd {
    /// Lasso attribution of posting words to the female callback probability.
    Fit {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        /// Output directory for attribution.csv and lexicon.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        min_df: usize,
        #[arg(long, default_value_t = 0.85)]
        max_df: f64,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        external: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EconCmd {
    /// Log wage on the female-callback indicator, all specifications.
    WageGap {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        assignments: PathBuf,
        /// hc1 or cluster_cr1 (clustered by posting).
        #[arg(long, default_value = "hc1")]
        se: String,
        /// Write the full results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PersonaCmd {
    /// Ask the configured backend for TIPI ratings of figures.
    Tipi {
        /// Run config whose backend is used.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        figure: Vec<String>,
        #[arg(long, default_value_t = 10)]
        runs: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Render summaries, sweeps and regressions of an audit directory.
    Render {
        #[arg(long)]
        dir: PathBuf,
        /// json, csv_dir or text.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Destination directory; `<dir>/report` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_all_records(paths: &[PathBuf]) -> Result<Vec<CallbackRecord>> {
    let mut out = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(CliError::Config(format!("{} does not exist", p.display())));
        }
        out.extend(read_records(p).map_err(config_err)?);
    }
    Ok(out)
}

fn occupation_map(path: &Path) -> Result<HashMap<String, String>> {
    Ok(read_assignments(path).map_err(config_err)?.into_iter().map(|a| (a.posting_id, a.soc_code)).collect())
}

fn log_wage_map(postings: &[JobPosting]) -> HashMap<String, f64> {
    trim_wage_outliers(postings)
        .map(|pts| pts.iter().map(|w| (w.posting_id.to_string(), w.log_wage)).collect())
        .unwrap_or_default()
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(analysis_err)?;
    match path {
        Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCmd::Synth { n, seed, out, profiles, truth }) => {
            let synth = synthesize_corpus(&SynthConfig::demo(n), seed).map_err(config_err)?;
            let format = CorpusFormat::from_path(&out)
                .ok_or_else(|| CliError::Config(format!("{}: use a .csv or .jsonl name", out.display())))?;
            write_corpus(&synth.postings, &out, format).map_err(config_err)?;
            if let Some(p) = profiles {
                write_profile_rows(&p, &synth.profile_rows()).map_err(config_err)?;
            }
            if let Some(p) = truth {
                write_json(Some(&p), &synth.truth)?;
            }
            write_json(None, &corpus_stats(&synth.postings))
        }
        Command::Corpus(CorpusCmd::Stats { corpus }) => write_json(None, &corpus_stats(&corpus.load()?)),
        Command::Audit(AuditCmd::Run { config, fresh }) => {
            let cfg = RunConfig::load(&config)?;
            let bundle = run_audit(&cfg, &RunOptions { fresh })?;
            let mut stdout = std::io::stdout().lock();
            for s in bundle.summaries.iter().filter(|s| s.order_arm.is_none()) {
                let _ = writeln!(
                    stdout,
                    "{}: fcr {} refusal {:.4} n {}",
                    s.persona,
                    s.summary.fcr.map_or("n/a".into(), |v| format!("{v:.4}")),
                    s.summary.refusal_rate,
                    s.summary.n_records
                );
            }
            let _ = writeln!(stdout, "outputs in {}", bundle.output_dir.display());
            Ok(())
        }
        Command::Audit(AuditCmd::Sweep { records, corpus, assignments, out }) => {
            let recs = read_all_records(&records)?;
            let postings = corpus.load()?.unwrap_or_default();
            let occ = match &assignments {
                Some(p) => occupation_map(p)?,
                None => HashMap::new(),
            };
            let points = threshold_sweep(&recs, &occ, &log_wage_map(&postings), &default_grid()).map_err(analysis_err)?;
            if let Some(p) = parity_point(&points) {
                log::info!("parity at rho {} (fcr {:.4})", p.rho, p.fcr);
            }
            if let Some(r) = parity_interpolated(&points) {
                log::info!("interpolated parity at rho {r:.4}");
            }
            match out {
                Some(path) => {
                    let f = fs::File::create(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    write_sweep_csv(f, &points).map_err(config_err)
                }
                None => write_sweep_csv(std::io::stdout().lock(), &points).map_err(config_err),
            }
        }
        Command::Occupations(OccupationsCmd::Map { corpus, profiles, out, dimension, embedder }) => {
            let postings = corpus.load()?;
            let rows = read_profile_rows(&profiles).map_err(config_err)?;
            let embedder_cfg = match embedder {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    toml_embedder(&text)?
                }
                None => EmbedderConfig::Hashed { dimension },
            };
            let e: Box<dyn Embedder> = match embedder_cfg {
                EmbedderConfig::Hashed { dimension } => Box::new(HashedBow { dimension }),
                EmbedderConfig::Remote { endpoint, dimension } => {
                    Box::new(RemoteEmbedder::new(endpoint, dimension).map_err(config_err)?)
                }
            };
            let built = build_profiles(&rows, e.as_ref()).map_err(PipelineError::from)?;
            let assigned = assign_postings(&postings, &built, e.as_ref()).map_err(PipelineError::from)?;
            write_assignments(&out, &assigned).map_err(config_err)?;
            println!("assigned {} postings to {} profiles", assigned.len(), built.len());
            Ok(())
        }
        Command::Lexicon(LexiconCmd::Fit { corpus, records, out, seed, min_df, max_df, dictionary, external }) => {
            let postings = corpus.load()?;
            let recs = read_all_records(&records)?;
            let target = mean_female_probability(&recs);
            let mut lc = LexiconConfig { dictionary, external, ..LexiconConfig::default() };
            lc.vocabulary.min_df = min_df;
            lc.vocabulary.max_df_share = max_df;
            let persona = recs.first().map_or(PersonaSpec::Base, |r| r.persona.clone());
            let fitted = fit_lexicon(&lc, &persona, &postings, &target, seed)?
                .ok_or_else(|| CliError::Analysis("empty vocabulary; lower --min-df".into()))?;
            fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
            write_attribution_file(&out.join("attribution.csv"), &fitted.scores)?;
            write_json(Some(&out.join("lexicon.json")), &fitted.report)?;
            if let Some(d) = &fitted.dictionary {
                write_json(Some(&out.join("dictionary.json")), d)?;
            }
            for n in &fitted.notes {
                log::warn!("{n}");
            }
            println!(
                "{} terms, {} selected, test R2 {}",
                fitted.report.vocabulary_size,
                fitted.report.n_selected,
                fitted.report.test_r2.map_or("n/a".into(), |v| format!("{v:.4}"))
            );
            Ok(())
        }
        Command::Econ(EconCmd::WageGap { corpus, records, assignments, se, out }) => {
            let postings = corpus.load()?;
            let recs = read_all_records(&records)?;
            let occ = occupation_map(&assignments)?;
            let se_kind = match se.as_str() {
                "hc1" => SeKind::Hc1,
                "cluster_cr1" | "cr1" => SeKind::Cr1,
                other => return Err(CliError::Config(format!("unknown standard error `{other}`"))),
            };
            let opts = WageGapOptions { se_kind, common_sample: true };
            let mut results = Vec::new();
            for v in WageGapVariant::ALL {
                match wage_gap_regression(&postings, &recs, &occ, v, &opts) {
                    Ok(r) => results.push(r),
                    Err(e) => log::warn!("{} not estimated: {e}", v.as_str()),
                }
            }
            if results.is_empty() {
                return Err(CliError::Analysis("no specification could be estimated".into()));
            }
            let cols: Vec<_> = results.iter().map(|r| (r.variant.as_str(), &r.regression)).collect();
            print!("{}", render_table(&cols, &["female"], 100.0, 2));
            if let Some(p) = out {
                write_json(Some(&p), &results)?;
            }
            Ok(())
        }
        Command::Persona(PersonaCmd::Tipi { config, figure, runs, out }) => {
            let cfg = RunConfig::load(&config)?;
            let backend = build_backend(&cfg)?;
            let mut all = std::collections::BTreeMap::new();
            for f in &figure {
                let ratings = rate_identity(backend.as_ref(), f, runs, &cfg.elicit).map_err(PipelineError::from)?;
                all.insert(f.clone(), (trait_scores(&ratings), ratings));
            }
            write_json(out.as_deref(), &all)
        }
        Command::Report(ReportCmd::Render { dir, format, out }) => {
            let dest = out.unwrap_or_else(|| dir.join("report"));
            for p in render_report(&dir, format, &dest)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn toml_embedder(text: &str) -> Result<EmbedderConfig> {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        embedder: EmbedderConfig,
    }
    let w: Wrapper = toml::from_str(text).map_err(config_err)?;
    Ok(w.embedder)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
