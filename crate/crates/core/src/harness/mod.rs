//! Running consultations over a corpus, persisting transcripts, and
//! evaluating and summarizing finished runs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::backend::BackendError;
use crate::case::CorpusError;
use crate::eval::IcdError;
use crate::prompt::PromptError;
use crate::taxonomy::TaxonomyError;

mod analytics;
mod config;
mod evaluate;
mod reward;
mod runner;
mod transcript;

pub use analytics::{render_stats_text, stats, ScoreHistograms, StatsDocument, TURN_UNIT_NOTE};
pub use config::{
    file_stem, BackendMode, BackendProvider, BackendSettings, RunConfig, ScriptedFixtures,
    SharedBackend,
};
pub use evaluate::{
    evaluate_run, CaseMetrics, EvalConfig, EvaluatorInfo, Exclusion, ExclusionStage,
    MetricsDocument, UnmatchedEntities,
};
pub use reward::{terminal_reward, RewardWeights, TerminalReward};
pub use runner::{
    run_benchmark, run_benchmark_with, run_consultation, CaseFailure, Engine, RunSummary,
    MAX_GOAL_UNMET_STREAK, RUN_SUMMARY_FILE,
};
pub use transcript::{
    load_transcripts, read_transcript, replay_transcript, write_line, LoadedTranscript,
    ReplayMismatch, TerminationCause, Transcript, TranscriptFailure, TranscriptLine, TurnRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Icd(#[from] IcdError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no transcripts found in {0}")]
    EmptyTranscriptDir(PathBuf),
    #[error("transcripts come from different run configurations ({}); pass force to evaluate anyway", .0.join(", "))]
    MixedFingerprints(Vec<String>),
    #[error("reward weights must be finite and nonnegative")]
    InvalidWeights,
    #[error(transparent)]
    CaseFailed(#[from] CaseFailure),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors caused by the operator's inputs rather than by a
    /// case failing mid-run.
    pub fn is_configuration(&self) -> bool {
        !matches!(self, HarnessError::Backend(_) | HarnessError::CaseFailed(_))
    }
}

/// Applies `f` to every item with at most `limit` calls in flight, keeping
/// results in input order.
pub(crate) fn bounded_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..limit.max(1).min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect()
}
