use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HarnessError;
use crate::agents::{DiagnosticReport, Observation, ReportSection};
use crate::backend::Usage;
use crate::fsm::{initial_state, is_terminal, GatePolicy, Step, TransitionKind, TransitionModel};
use crate::taxonomy::{ActionTaxonomy, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    FinalDiagnosis,
    TurnCap,
}

/// One doctor action. Applied actions have dense turn indices from 1; a
/// refused (goal_unmet) action carries the index it would have taken and
/// has no observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    /// Canonical `<Phase>: Category. utterance` text.
    pub action: String,
    pub transition: TransitionKind,
    pub observation: Option<Observation>,
    pub goal_unmet: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmet: Vec<String>,
    /// The doctor's replies never parsed; the fallback action was used.
    #[serde(default)]
    pub doctor_fallback: bool,
    /// The runner substituted the fallback after repeated refusals.
    #[serde(default)]
    pub forced: bool,
}

/// A `{case_id}.jsonl` file is a header line, one line per turn, then a
/// summary or failure line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptLine {
    Header {
        case_id: String,
        config_fingerprint: String,
        max_turns: u32,
        gate: GatePolicy,
        started_at: String,
    },
    Turn(TurnRecord),
    Summary {
        report: DiagnosticReport,
        /// Sections the report composer never produced.
        report_missing: Vec<ReportSection>,
        termination: TerminationCause,
        turn_count: u32,
        final_phase: Phase,
        terminal_reward: Option<f64>,
        usage: Usage,
        finished_at: String,
    },
    Failure {
        error: String,
        turns_completed: u32,
        finished_at: String,
    },
}

pub fn write_line(mut w: impl Write, line: &TranscriptLine) -> std::io::Result<()> {
    let mut text = serde_json::to_string(line).map_err(std::io::Error::other)?;
    text.push('\n');
    w.write_all(text.as_bytes())?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub config_fingerprint: String,
    pub max_turns: u32,
    pub gate: GatePolicy,
    pub started_at: String,
    pub turns: Vec<TurnRecord>,
    pub report: DiagnosticReport,
    pub report_missing: Vec<ReportSection>,
    pub termination: TerminationCause,
    pub turn_count: u32,
    pub final_phase: Phase,
    pub terminal_reward: Option<f64>,
    pub usage: Usage,
    pub finished_at: String,
}

impl Transcript {
    pub fn applied_turns(&self) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(|t| !t.goal_unmet)
    }

    pub fn goal_unmet_count(&self) -> usize {
        self.turns.iter().filter(|t| t.goal_unmet).count()
    }

    pub fn to_lines(&self) -> Vec<TranscriptLine> {
        let mut lines = vec![TranscriptLine::Header {
            case_id: self.case_id.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            max_turns: self.max_turns,
            gate: self.gate,
            started_at: self.started_at.clone(),
        }];
        lines.extend(self.turns.iter().cloned().map(TranscriptLine::Turn));
        lines.push(TranscriptLine::Summary {
            report: self.report.clone(),
            report_missing: self.report_missing.clone(),
            termination: self.termination,
            turn_count: self.turn_count,
            final_phase: self.final_phase,
            terminal_reward: self.terminal_reward,
            usage: self.usage,
            finished_at: self.finished_at.clone(),
        });
        lines
    }

    /// Structural invariants: applied turns dense from 1, turn count equal
    /// to the last applied index.
    pub fn check(&self) -> Result<(), String> {
        let mut expected = 1;
        for t in &self.turns {
            if t.turn != expected {
                return Err(format!("turn {} where {} was expected", t.turn, expected));
            }
            if t.goal_unmet == t.observation.is_some() {
                return Err(format!("turn {}: observation present iff applied", t.turn));
            }
            if !t.goal_unmet {
                expected += 1;
            }
        }
        if self.turn_count != expected - 1 {
            return Err(format!(
                "turn count {} but {} applied turns",
                self.turn_count,
                expected - 1
            ));
        }
        Ok(())
    }
}

/// A transcript whose case did not finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFailure {
    pub case_id: String,
    pub config_fingerprint: String,
    pub turns: Vec<TurnRecord>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum LoadedTranscript {
    Complete(Transcript),
    Failed(TranscriptFailure),
}

impl LoadedTranscript {
    pub fn case_id(&self) -> &str {
        match self {
            LoadedTranscript::Complete(t) => &t.case_id,
            LoadedTranscript::Failed(f) => &f.case_id,
        }
    }

    pub fn fingerprint(&self) -> &str {
        match self {
            LoadedTranscript::Complete(t) => &t.config_fingerprint,
            LoadedTranscript::Failed(f) => &f.config_fingerprint,
        }
    }
}

pub fn read_transcript(path: &Path) -> Result<LoadedTranscript, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let bad = |line: usize, message: String| HarnessError::Transcript {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = None;
    let mut turns = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine =
            serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
        match (parsed, &header) {
            (
                TranscriptLine::Header {
                    case_id,
                    config_fingerprint,
                    max_turns,
                    gate,
                    started_at,
                },
                None,
            ) => header = Some((case_id, config_fingerprint, max_turns, gate, started_at)),
            (_, None) | (TranscriptLine::Header { .. }, Some(_)) => {
                return Err(bad(n, "the header must be the first line and appear once".into()))
            }
            (TranscriptLine::Turn(t), Some(_)) => turns.push(t),
            (
                TranscriptLine::Summary {
                    report,
                    report_missing,
                    termination,
                    turn_count,
                    final_phase,
                    terminal_reward,
                    usage,
                    finished_at,
                },
                Some(_),
            ) => {
                let (case_id, config_fingerprint, max_turns, gate, started_at) =
                    header.take().expect("header checked");
                let t = Transcript {
                    case_id,
                    config_fingerprint,
                    max_turns,
                    gate,
                    started_at,
                    turns,
                    report,
                    report_missing,
                    termination,
                    turn_count,
                    final_phase,
                    terminal_reward,
                    usage,
                    finished_at,
                };
                t.check().map_err(|m| bad(n, m))?;
                return Ok(LoadedTranscript::Complete(t));
            }
            (TranscriptLine::Failure { error, .. }, Some(_)) => {
                let (case_id, config_fingerprint, ..) = header.take().expect("header checked");
                return Ok(LoadedTranscript::Failed(TranscriptFailure {
                    case_id,
                    config_fingerprint,
                    turns,
                    error,
                }));
            }
        }
    }
    match header {
        None => Err(bad(0, "empty transcript".into())),
        Some((case_id, config_fingerprint, ..)) => Ok(LoadedTranscript::Failed(TranscriptFailure {
            case_id,
            config_fingerprint,
            turns,
            error: "transcript has no summary line; the run was interrupted".into(),
        })),
    }
}

/// Every `*.jsonl` file in `dir`, sorted by file name.
pub fn load_transcripts(dir: &Path) -> Result<Vec<(PathBuf, LoadedTranscript)>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "jsonl") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(HarnessError::EmptyTranscriptDir(dir.to_path_buf()));
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_transcript(&p).map(|t| (p, t)))
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("replay diverges at turn {turn}: {message}")]
pub struct ReplayMismatch {
    pub turn: u32,
    pub message: String,
}

/// Re-applies the recorded actions from the initial state and checks the
/// recorded transitions, refusals, turn count, final phase and termination
/// cause.
pub fn replay_transcript(t: &Transcript, taxonomy: &ActionTaxonomy) -> Result<(), ReplayMismatch> {
    let fail = |turn: u32, message: String| ReplayMismatch { turn, message };
    let model = TransitionModel::new(taxonomy, t.gate);
    let mut state = initial_state(t.max_turns).map_err(|e| fail(0, e.to_string()))?;
    for rec in &t.turns {
        let action = taxonomy
            .parse_action(&rec.action)
            .map_err(|e| fail(rec.turn, e.to_string()))?;
        let step = model
            .apply(&state, &action)
            .map_err(|e| fail(rec.turn, e.to_string()))?;
        match step {
            Step::GoalUnmet(g) => {
                if !rec.goal_unmet {
                    return Err(fail(rec.turn, "recorded as applied but the gate refuses it".into()));
                }
                if g.unmet != rec.unmet {
                    return Err(fail(
                        rec.turn,
                        format!("unmet categories {:?}, recorded {:?}", g.unmet, rec.unmet),
                    ));
                }
            }
            Step::Advanced { state: next, transition } => {
                if rec.goal_unmet {
                    return Err(fail(rec.turn, "recorded as refused but the gate allows it".into()));
                }
                if transition != rec.transition {
                    return Err(fail(
                        rec.turn,
                        format!("transition {transition:?}, recorded {:?}", rec.transition),
                    ));
                }
                if next.turn != rec.turn {
                    return Err(fail(rec.turn, format!("state turn {}", next.turn)));
                }
                state = next;
            }
        }
    }
    let end = state.turn;
    if !is_terminal(&state) {
        return Err(fail(end, "replayed state is not terminal".into()));
    }
    if state.turn != t.turn_count {
        return Err(fail(end, format!("turn count {}, recorded {}", state.turn, t.turn_count)));
    }
    if state.phase != t.final_phase {
        return Err(fail(end, format!("final phase {}, recorded {}", state.phase, t.final_phase)));
    }
    let cause = if state.terminated {
        TerminationCause::FinalDiagnosis
    } else {
        TerminationCause::TurnCap
    };
    if cause != t.termination {
        return Err(fail(end, format!("termination {cause:?}, recorded {:?}", t.termination)));
    }
    Ok(())
}
