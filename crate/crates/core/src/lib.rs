//! Audit large language models for gender bias in hiring callbacks.
//!
//! The crate covers the full pipeline: a job-posting corpus, chat backends
//! (including a simulated recruiter with a planted bias model), prompt
//! construction and reply parsing, occupation mapping, segregation and
//! compliance metrics, fixed-effects wage regressions, lexical attribution
//! via Lasso, and a resumable audit orchestrator.

pub mod corpus;
pub mod econometrics;
pub mod elicitation;
pub mod gateway;
pub mod lexicon;
mod keyed;
pub mod metrics;
pub mod occupation;
pub mod pipeline;

pub use corpus::{ExplicitRequest, JobPosting};
pub use elicitation::{CallbackRecord, OrderArm, Outcome, PersonaSpec};
pub use gateway::{ChatBackend, ChatRequest, ChatResponse, MockRecruiter, MockRecruiterParams};
pub use keyed::{key_hash, keyed_rng};
