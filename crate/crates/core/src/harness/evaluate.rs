use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{BackendMode, BackendProvider, BackendSettings};
use super::reward::{terminal_reward, RewardWeights};
use super::transcript::{load_transcripts, LoadedTranscript, Transcript};
use super::{bounded_map, HarnessError};
use crate::agents::MAX_PARSE_ATTEMPTS;
use crate::case::{load_corpus, CaseRecord};
use crate::eval::{
    aggregate_scores, corpus_metrics, extract_entities, f1, normalize_to_icd, score_report,
    set_overlap_metrics, CorpusMatchMetrics, EvalError, ExtractionMode, FiveScores, IcdIndex,
    MatchResult, ScoreAggregate,
};
use crate::prompt::PromptSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub transcripts: PathBuf,
    pub corpus: PathBuf,
    /// `None` uses the bundled ICD-10 subset.
    #[serde(default)]
    pub icd: Option<PathBuf>,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    pub evaluator: BackendSettings,
    #[serde(default)]
    pub extraction: ExtractionMode,
    #[serde(default)]
    pub weights: RewardWeights,
    /// Evaluate even when transcripts come from different configurations.
    #[serde(default)]
    pub force: bool,
    #[serde(default = "one")]
    pub concurrency: usize,
}

fn one() -> usize {
    1
}

impl EvalConfig {
    pub fn new(transcripts: impl Into<PathBuf>, corpus: impl Into<PathBuf>) -> Self {
        Self {
            transcripts: transcripts.into(),
            corpus: corpus.into(),
            icd: None,
            prompts: None,
            evaluator: BackendSettings::default(),
            extraction: ExtractionMode::Rule,
            weights: RewardWeights::default(),
            force: false,
            concurrency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorInfo {
    pub model: String,
    pub backend: BackendMode,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub extraction: ExtractionMode,
    pub max_parse_attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionStage {
    /// The case has no usable transcript; excluded everywhere.
    Transcript,
    /// Excluded from the score aggregates.
    Scoring,
    /// Excluded from the match metrics.
    Matching,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub case_id: String,
    pub stage: ExclusionStage,
    pub reason: String,
}

/// Entities that did not map to any code in the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmatchedEntities {
    pub case_id: String,
    pub predicted: Vec<String>,
    pub truth: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub scores: Option<FiveScores>,
    pub predicted_entities: Vec<String>,
    pub predicted_codes: BTreeSet<String>,
    pub truth_codes: BTreeSet<String>,
    pub intersection: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Present when both scores and F1 are available.
    pub terminal_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub evaluator: EvaluatorInfo,
    pub config_fingerprints: Vec<String>,
    pub cases_total: usize,
    /// Rubric aggregates; `None` when no case was scored.
    pub scores: Option<ScoreAggregate>,
    /// Entity-overlap metrics; `None` when no case could be matched.
    pub matching: Option<CorpusMatchMetrics>,
    pub evaluator_failures: usize,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
    pub unmatched_entities: Vec<UnmatchedEntities>,
    pub reward_weights: RewardWeights,
    pub per_case: Vec<CaseMetrics>,
}

impl MetricsDocument {
    pub fn is_complete(&self) -> bool {
        self.excluded.is_empty()
    }
}

struct CaseOutcome {
    metrics: Option<CaseMetrics>,
    exclusions: Vec<Exclusion>,
    unmatched: Option<UnmatchedEntities>,
    evaluator_failures: usize,
}

struct Ctx<'a> {
    index: &'a IcdIndex,
    prompts: &'a PromptSet,
    config: &'a EvalConfig,
    provider: &'a dyn BackendProvider,
}

fn evaluate_case(ctx: &Ctx, record: &CaseRecord, transcript: &Transcript) -> CaseOutcome {
    let settings = &ctx.config.evaluator.model;
    let exclude = |stage, reason: String| Exclusion {
        case_id: record.case_id.clone(),
        stage,
        reason,
    };
    let mut out = CaseOutcome {
        metrics: None,
        exclusions: Vec::new(),
        unmatched: None,
        evaluator_failures: 0,
    };
    let backend = match ctx.provider.backend_for(record) {
        Ok(b) => b,
        Err(e) => {
            out.evaluator_failures += 1;
            out.exclusions.push(exclude(ExclusionStage::Transcript, e.to_string()));
            return out;
        }
    };

    let scores = match score_report(&transcript.report, record, ctx.prompts, settings, backend.as_ref()) {
        Ok(s) => Some(s.scores),
        Err(e) => {
            out.evaluator_failures += 1;
            out.exclusions.push(exclude(ExclusionStage::Scoring, e.to_string()));
            None
        }
    };

    let mut m = CaseMetrics {
        case_id: record.case_id.clone(),
        scores,
        predicted_entities: Vec::new(),
        predicted_codes: BTreeSet::new(),
        truth_codes: BTreeSet::new(),
        intersection: 0,
        precision: None,
        recall: None,
        f1: None,
        terminal_reward: None,
    };
    let truth = normalize_to_icd(&record.ground_truth.diagnosis_entities, ctx.index);
    m.truth_codes = truth.codes;
    let predicted = extract_entities(
        &transcript.report.diagnostic_results,
        ctx.config.extraction,
        ctx.index,
        Some((ctx.prompts, settings, backend.as_ref())),
    );
    match predicted {
        Ok(entities) => {
            let norm = normalize_to_icd(&entities, ctx.index);
            m.predicted_entities = entities;
            m.predicted_codes = norm.codes;
            if !norm.unmatched.is_empty() || !truth.unmatched.is_empty() {
                out.unmatched = Some(UnmatchedEntities {
                    case_id: record.case_id.clone(),
                    predicted: norm.unmatched,
                    truth: truth.unmatched,
                });
            }
            match set_overlap_metrics(&m.predicted_codes, &m.truth_codes) {
                Ok(o) => {
                    m.intersection = m.predicted_codes.intersection(&m.truth_codes).count();
                    m.precision = Some(o.precision);
                    m.recall = Some(o.recall);
                    m.f1 = Some(f1(o.precision, o.recall));
                }
                Err(EvalError::EmptyTruth(_)) => out.exclusions.push(exclude(
                    ExclusionStage::Matching,
                    "no ground-truth entity maps to an ICD-10 code".into(),
                )),
                Err(e) => out.exclusions.push(exclude(ExclusionStage::Matching, e.to_string())),
            }
        }
        Err(e) => {
            out.evaluator_failures += 1;
            out.exclusions.push(exclude(ExclusionStage::Matching, e.to_string()));
        }
    }
    if let (Some(s), Some(f)) = (&m.scores, m.f1) {
        m.terminal_reward = Some(terminal_reward(s, f, &ctx.config.weights).value);
    }
    out.metrics = Some(m);
    out
}

/// Scores and matches every corpus case that has a finished transcript.
/// Missing or failed transcripts and evaluator failures exclude the case
/// and are listed in the document.
pub fn evaluate_run(
    config: &EvalConfig,
    provider: &dyn BackendProvider,
) -> Result<MetricsDocument, HarnessError> {
    if config.concurrency < 1 {
        return Err(HarnessError::Config("concurrency must be at least 1".into()));
    }
    config.weights.validate()?;
    let cases = load_corpus(&config.corpus)?;
    let index = match &config.icd {
        Some(p) => IcdIndex::load(p)?,
        None => IcdIndex::bundled(),
    };
    let prompts = match &config.prompts {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::bundled(),
    };
    let loaded = load_transcripts(&config.transcripts)?;

    let fingerprints: BTreeSet<String> = loaded.iter().map(|(_, t)| t.fingerprint().to_string()).collect();
    let mut warnings = Vec::new();
    if fingerprints.len() > 1 {
        if !config.force {
            return Err(HarnessError::MixedFingerprints(fingerprints.into_iter().collect()));
        }
        warnings.push(format!(
            "transcripts come from {} different run configurations",
            fingerprints.len()
        ));
    }

    let corpus_ids: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    let mut by_case: BTreeMap<String, LoadedTranscript> = BTreeMap::new();
    for (path, t) in loaded {
        if !corpus_ids.contains(t.case_id()) {
            warnings.push(format!(
                "{} belongs to case {:?}, which is not in the corpus",
                path.display(),
                t.case_id()
            ));
            continue;
        }
        if by_case.contains_key(t.case_id()) {
            warnings.push(format!("duplicate transcript for case {:?} ignored", t.case_id()));
            continue;
        }
        by_case.insert(t.case_id().to_string(), t);
    }

    let ctx = Ctx {
        index: &index,
        prompts: &prompts,
        config,
        provider,
    };
    let outcomes = bounded_map(&cases, config.concurrency, |record| {
        match by_case.get(&record.case_id) {
            Some(LoadedTranscript::Complete(t)) => evaluate_case(&ctx, record, t),
            other => {
                let reason = match other {
                    Some(LoadedTranscript::Failed(f)) => format!("the run failed: {}", f.error),
                    _ => "no transcript for this case".to_string(),
                };
                CaseOutcome {
                    metrics: None,
                    exclusions: vec![Exclusion {
                        case_id: record.case_id.clone(),
                        stage: ExclusionStage::Transcript,
                        reason,
                    }],
                    unmatched: None,
                    evaluator_failures: 0,
                }
            }
        }
    });

    let mut doc = MetricsDocument {
        evaluator: EvaluatorInfo {
            model: config.evaluator.model.model_name.clone(),
            backend: config.evaluator.mode,
            temperature: config.evaluator.model.temperature,
            seed: config.evaluator.model.seed,
            extraction: config.extraction,
            max_parse_attempts: MAX_PARSE_ATTEMPTS,
        },
        config_fingerprints: fingerprints.into_iter().collect(),
        cases_total: cases.len(),
        scores: None,
        matching: None,
        evaluator_failures: 0,
        excluded: Vec::new(),
        warnings,
        unmatched_entities: Vec::new(),
        reward_weights: config.weights.clone(),
        per_case: Vec::new(),
    };
    for o in outcomes {
        doc.evaluator_failures += o.evaluator_failures;
        for e in &o.exclusions {
            tracing::warn!(case_id = %e.case_id, stage = ?e.stage, reason = %e.reason, "case excluded");
            doc.warnings
                .push(format!("case {} excluded ({:?}): {}", e.case_id, e.stage, e.reason));
        }
        doc.excluded.extend(o.exclusions);
        doc.unmatched_entities.extend(o.unmatched);
        doc.per_case.extend(o.metrics);
    }

    let scored: Vec<FiveScores> = doc.per_case.iter().filter_map(|m| m.scores).collect();
    doc.scores = aggregate_scores(&scored).ok();
    let matched: Vec<MatchResult> = doc
        .per_case
        .iter()
        .filter(|m| m.f1.is_some())
        .map(|m| MatchResult::new(m.case_id.clone(), m.predicted_codes.clone(), m.truth_codes.clone()))
        .collect();
    doc.matching = corpus_metrics(&matched).ok();
    Ok(doc)
}
