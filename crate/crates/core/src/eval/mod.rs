//! Evaluation of generated consultation reports.
//!
//! Two strategies: rubric scoring by an evaluator model with access to the
//! full case record ([`score_report`]), and entity-overlap matching of
//! diagnoses after ICD-10 normalization ([`extract_entities`],
//! [`normalize_to_icd`], [`set_overlap_metrics`], [`corpus_metrics`]).

use thiserror::Error;

use crate::backend::BackendError;

mod icd;
mod metrics;
mod scoring;
mod stats;

pub use icd::{
    extract_entities, extract_entities_model, extract_entities_rule, normalize_to_icd,
    ExtractionMode, IcdEntry, IcdError, IcdIndex, Normalized, DEFAULT_ICD_JSON,
};
pub use metrics::{corpus_metrics, f1, set_overlap_metrics, CorpusMatchMetrics, MatchResult, Overlap, Prf};
pub use scoring::{parse_scores, score_report, FiveScores, ScoreOutcome, SCORE_GRAMMAR};
pub use stats::{
    aggregate_scores, score_histogram, turn_histogram, AspectStats, ScoreAggregate, ScoreBucket,
    TurnHistogram, CI95_Z,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluator reply unusable after {attempts} attempts: {reason}")]
    EvaluatorParseFailure { attempts: u32, reason: String },
    #[error("cannot aggregate an empty list")]
    EmptyInput,
    #[error("ground-truth code set is empty{}", .0.as_deref().map(|c| format!(" for case {c}")).unwrap_or_default())]
    EmptyTruth(Option<String>),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
