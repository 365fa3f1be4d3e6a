use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{file_stem, BackendProvider, RunConfig};
use super::transcript::{write_line, TerminationCause, Transcript, TranscriptLine, TurnRecord};
use super::{bounded_map, HarnessError};
use crate::agents::{
    examiner_respond, fallback_action, memory_append, AgentError, DoctorAgent, MemoryBank,
    Observation, PatientAgent, ReportComposer,
};
use crate::backend::{BackendError, ChatBackend, Metered, ModelSettings, Usage};
use crate::case::{load_corpus, CaseRecord};
use crate::fsm::{
    classify_transition, initial_state, is_terminal, FsmError, GatePolicy, GoalUnmet, Step,
    TransitionModel,
};
use crate::prompt::PromptSet;
use crate::taxonomy::{Action, ActionTaxonomy, Phase};

/// Consecutive refused progressions after which the runner applies the
/// fallback action instead of asking the doctor again.
pub const MAX_GOAL_UNMET_STREAK: u32 = 3;

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("case {case_id} failed after {turns_completed} turns: {error}")]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
    pub turns_completed: u32,
}

#[derive(Debug, Error)]
enum StepError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error("writing transcript: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a consultation needs apart from the case and the backend.
#[derive(Debug, Clone)]
pub struct Engine {
    pub taxonomy: ActionTaxonomy,
    pub prompts: PromptSet,
    pub settings: ModelSettings,
    pub patient: PatientAgent,
    pub max_turns: u32,
    pub gate: GatePolicy,
    pub fingerprint: String,
}

impl Engine {
    pub fn from_config(config: &RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut patient = PatientAgent::new(config.patient.clone())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        patient.mode = config.patient_mode;
        Ok(Self {
            taxonomy: config.load_taxonomy()?,
            prompts: config.load_prompts()?,
            settings: config.backend.model.clone(),
            patient,
            max_turns: config.max_turns,
            gate: config.gate(),
            fingerprint: config.fingerprint()?,
        })
    }

    fn observe(
        &self,
        record: &CaseRecord,
        action: &Action,
        backend: &dyn ChatBackend,
    ) -> Result<Observation, AgentError> {
        match action.phase {
            Phase::Inquiry => {
                self.patient
                    .respond_with(record, action, &self.prompts, &self.settings, backend)
            }
            Phase::Examination => examiner_respond(record, action),
            Phase::Diagnosis => Ok(Observation::reflective(action.utterance.clone())),
        }
    }

    /// Runs one consultation, passing each transcript line to `sink` as it
    /// is produced. On failure a failure line has been emitted.
    pub fn run_case(
        &self,
        record: &CaseRecord,
        backend: &dyn ChatBackend,
        sink: &mut dyn FnMut(&TranscriptLine) -> std::io::Result<()>,
    ) -> Result<Transcript, CaseFailure> {
        let metered = Metered::new(backend);
        let started_at = now();
        let mut turns = Vec::new();
        let mut completed = 0;
        let result = self.drive(record, &metered, &started_at, &mut turns, &mut completed, sink);
        match result {
            Ok(t) => Ok(t),
            Err(e) => {
                let failure = CaseFailure {
                    case_id: record.case_id.clone(),
                    error: e.to_string(),
                    turns_completed: completed,
                };
                let _ = sink(&TranscriptLine::Failure {
                    error: failure.error.clone(),
                    turns_completed: completed,
                    finished_at: now(),
                });
                Err(failure)
            }
        }
    }

    fn drive(
        &self,
        record: &CaseRecord,
        backend: &Metered<&dyn ChatBackend>,
        started_at: &str,
        turns: &mut Vec<TurnRecord>,
        completed: &mut u32,
        sink: &mut dyn FnMut(&TranscriptLine) -> std::io::Result<()>,
    ) -> Result<Transcript, StepError> {
        sink(&TranscriptLine::Header {
            case_id: record.case_id.clone(),
            config_fingerprint: self.fingerprint.clone(),
            max_turns: self.max_turns,
            gate: self.gate,
            started_at: started_at.to_string(),
        })?;
        let doctor = DoctorAgent::new(&self.taxonomy, &self.prompts, &self.settings);
        let model = TransitionModel::new(&self.taxonomy, self.gate);
        let mut state = initial_state(self.max_turns)?;
        let mut memory = MemoryBank::new();
        let mut pending: Option<GoalUnmet> = None;
        let mut streak = 0;

        while !is_terminal(&state) {
            let (action, doctor_fallback, forced) = if streak >= MAX_GOAL_UNMET_STREAK {
                (fallback_action(&state, &self.taxonomy), false, true)
            } else {
                let d = doctor.select_action(&state, &memory, pending.as_ref(), backend)?;
                (d.action, d.fallback, false)
            };
            let kind = classify_transition(&state, &action);
            let rec = match model.apply(&state, &action)? {
                Step::GoalUnmet(g) => {
                    streak += 1;
                    let rec = TurnRecord {
                        turn: state.turn + 1,
                        action: action.render(),
                        transition: kind,
                        observation: None,
                        goal_unmet: true,
                        unmet: g.unmet.clone(),
                        doctor_fallback,
                        forced,
                    };
                    pending = Some(g);
                    rec
                }
                Step::Advanced { state: next, transition } => {
                    let observation = self.observe(record, &action, backend)?;
                    memory_append(&mut memory, &next, &action, &observation)?;
                    state = next;
                    *completed = state.turn;
                    pending = None;
                    streak = 0;
                    TurnRecord {
                        turn: state.turn,
                        action: action.render(),
                        transition,
                        observation: Some(observation),
                        goal_unmet: false,
                        unmet: Vec::new(),
                        doctor_fallback,
                        forced,
                    }
                }
            };
            sink(&TranscriptLine::Turn(rec.clone()))?;
            turns.push(rec);
        }

        let composed = ReportComposer::new(&self.prompts, &self.settings).compose(&memory, backend)?;
        let transcript = Transcript {
            case_id: record.case_id.clone(),
            config_fingerprint: self.fingerprint.clone(),
            max_turns: self.max_turns,
            gate: self.gate,
            started_at: started_at.to_string(),
            turns: std::mem::take(turns),
            report: composed.report,
            report_missing: composed.missing,
            termination: if state.terminated {
                TerminationCause::FinalDiagnosis
            } else {
                TerminationCause::TurnCap
            },
            turn_count: state.turn,
            final_phase: state.phase,
            terminal_reward: None,
            usage: backend.usage_totals(),
            finished_at: now(),
        };
        let summary = transcript.to_lines().pop().expect("summary line");
        sink(&summary)?;
        Ok(transcript)
    }
}

/// One consultation without persistence.
pub fn run_consultation(
    record: &CaseRecord,
    config: &RunConfig,
    backend: &dyn ChatBackend,
) -> Result<Transcript, HarnessError> {
    let engine = Engine::from_config(config)?;
    Ok(engine.run_case(record, backend, &mut |_| Ok(()))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_fingerprint: String,
    pub total: usize,
    pub succeeded: Vec<String>,
    pub failed: Vec<CaseFailure>,
    pub usage: Usage,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn all_succeeded(&self) -> bool {
        self.failed.is_empty()
    }
}

pub const RUN_SUMMARY_FILE: &str = "run_summary.json";

pub fn run_benchmark(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let provider = config.backend.provider()?;
    run_benchmark_with(config, provider.as_ref())
}

/// Runs every case with at most `config.concurrency` in flight, writing
/// `{case_id}.jsonl` per case and `run_summary.json`. Case failures are
/// reported in the summary; only configuration problems are errors.
pub fn run_benchmark_with(
    config: &RunConfig,
    provider: &dyn BackendProvider,
) -> Result<RunSummary, HarnessError> {
    let engine = Engine::from_config(config)?;
    let cases = load_corpus(&config.corpus)?;
    let mut stems = BTreeSet::new();
    for c in &cases {
        if !stems.insert(file_stem(&c.case_id)) {
            return Err(HarnessError::Config(format!(
                "case id {:?} collides with another case's transcript file name",
                c.case_id
            )));
        }
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| HarnessError::io(&config.out_dir, e))?;

    let outcomes = bounded_map(&cases, config.concurrency, |case| {
        run_one(&engine, case, provider, config)
    });

    let mut summary = RunSummary {
        config_fingerprint: engine.fingerprint.clone(),
        total: cases.len(),
        succeeded: Vec::new(),
        failed: Vec::new(),
        usage: Usage::default(),
        out_dir: config.out_dir.clone(),
    };
    for (outcome, usage) in outcomes {
        summary.usage = summary.usage + usage;
        match outcome {
            Ok(id) => summary.succeeded.push(id),
            Err(f) => summary.failed.push(f),
        }
    }
    let path = config.out_dir.join(RUN_SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(summary)
}

fn run_one(
    engine: &Engine,
    case: &CaseRecord,
    provider: &dyn BackendProvider,
    config: &RunConfig,
) -> (Result<String, CaseFailure>, Usage) {
    let path = config.out_dir.join(format!("{}.jsonl", file_stem(&case.case_id)));
    let fail = |error: String| CaseFailure {
        case_id: case.case_id.clone(),
        error,
        turns_completed: 0,
    };
    let file = match File::create(&path) {
        Ok(f) => f,
        Err(e) => return (Err(fail(format!("{}: {e}", path.display()))), Usage::default()),
    };
    let mut out = BufWriter::new(file);
    let mut sink = |line: &TranscriptLine| write_line(&mut out, line);
    let backend = match provider.backend_for(case) {
        Ok(b) => b,
        Err(e) => {
            let error = e.to_string();
            let _ = sink(&TranscriptLine::Header {
                case_id: case.case_id.clone(),
                config_fingerprint: engine.fingerprint.clone(),
                max_turns: engine.max_turns,
                gate: engine.gate,
                started_at: now(),
            });
            let _ = sink(&TranscriptLine::Failure {
                error: error.clone(),
                turns_completed: 0,
                finished_at: now(),
            });
            tracing::warn!(case_id = %case.case_id, %error, "case failed before start");
            return (Err(fail(error)), Usage::default());
        }
    };
    let metered = Metered::new(backend.as_ref());
    let result = engine.run_case(case, &metered, &mut sink);
    let usage = metered.usage_totals();
    match result {
        Ok(t) => {
            tracing::info!(case_id = %case.case_id, turns = t.turn_count, "case finished");
            (Ok(case.case_id.clone()), usage)
        }
        Err(f) => {
            tracing::warn!(case_id = %case.case_id, error = %f.error, "case failed");
            (Err(f), usage)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FixtureEntry, ScriptedBackend};
    use crate::case::fixtures::sample_case;
    use crate::fsm::TransitionKind;

    const REPORT: &str = "Symptoms: Abdominal pain.\nMedical Examinations: ECG normal.\n\
Diagnostic Results: Acute appendicitis.\nDiagnostic Rationales: Pain pattern.\nTreatment Plan: Surgery.";

    fn engine(gating: bool, max_turns: u32) -> Engine {
        let mut c = RunConfig::new("unused", "unused");
        c.gating = gating;
        c.max_turns = max_turns;
        Engine::from_config(&c).unwrap()
    }

    fn scripted(replies: &[&str]) -> ScriptedBackend {
        ScriptedBackend::new(replies.iter().map(|r| FixtureEntry::any(*r)).collect())
    }

    #[test]
    fn three_action_run_without_gating() {
        let b = scripted(&[
            "<Inquiry>: Chief Complaint. What brings you in?",
            "<Examination>: ECG. Perform an ECG.",
            "<Diagnosis>: Final Diagnosis. Acute appendicitis.",
            REPORT,
        ]);
        let mut lines = Vec::new();
        let t = engine(false, 20)
            .run_case(&sample_case("c1"), &b, &mut |l| {
                lines.push(l.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(t.turn_count, 3);
        assert_eq!(t.termination, TerminationCause::FinalDiagnosis);
        assert_eq!(t.turns[1].transition, TransitionKind::Progressive);
        assert_eq!(t.report.diagnostic_results, "Acute appendicitis.");
        assert_eq!(lines.len(), 5);
        assert_eq!(t.usage.requests, 4);
        assert!(t.check().is_ok());
    }

    #[test]
    fn early_progression_is_flagged_under_gating() {
        let b = scripted(&[
            "<Inquiry>: Chief Complaint. What brings you in?",
            "<Diagnosis>: Final Diagnosis. Appendicitis.",
            "<Inquiry>: History of Present Illness. When did it start?",
            "<Examination>: Physical Examination. Palpate the abdomen.",
            "<Diagnosis>: Preliminary Diagnosis. Appendicitis.",
            "<Diagnosis>: Diagnostic Rationale. RLQ pain.",
            "<Diagnosis>: Treatment Plan. Surgery.",
            "<Diagnosis>: Final Diagnosis. Acute appendicitis.",
            REPORT,
        ]);
        let t = engine(true, 20)
            .run_case(&sample_case("c1"), &b, &mut |_| Ok(()))
            .unwrap();
        let refused = &t.turns[1];
        assert!(refused.goal_unmet);
        assert_eq!(refused.turn, 2);
        assert_eq!(refused.unmet, vec!["History of Present Illness".to_string()]);
        assert_eq!(t.turns[2].turn, 2);
        assert_eq!(t.termination, TerminationCause::FinalDiagnosis);
        assert_eq!(t.turn_count, 7);
    }

    #[test]
    fn turn_cap_termination() {
        let mut replies = vec!["<Inquiry>: Chief Complaint. Tell me more."; 5];
        replies.push(REPORT);
        let t = engine(true, 5)
            .run_case(&sample_case("c1"), &scripted(&replies), &mut |_| Ok(()))
            .unwrap();
        assert_eq!(t.termination, TerminationCause::TurnCap);
        assert_eq!(t.turn_count, 5);
    }

    #[test]
    fn refusal_streak_forces_fallback() {
        // two forced inquiry turns, then the final diagnosis is allowed
        let mut replies = vec!["<Diagnosis>: Final Diagnosis. Appendicitis."; 7];
        replies.push(REPORT);
        let b = scripted(&replies);
        let t = engine(true, 20)
            .run_case(&sample_case("c1"), &b, &mut |_| Ok(()))
            .unwrap();
        assert_eq!(t.goal_unmet_count(), 6);
        assert!(t.turns[3].forced);
        assert!(t.turns[3].action.starts_with("<Inquiry>: Chief Complaint."));
        assert_eq!(t.turn_count, 3);
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn exhausted_fixture_fails_with_stub() {
        let mut lines = Vec::new();
        let err = engine(false, 20)
            .run_case(
                &sample_case("c1"),
                &scripted(&["<Inquiry>: Chief Complaint. Hi."]),
                &mut |l| {
                    lines.push(l.clone());
                    Ok(())
                },
            )
            .unwrap_err();
        assert_eq!(err.turns_completed, 1);
        assert!(matches!(lines.last(), Some(TranscriptLine::Failure { .. })));
    }
}
