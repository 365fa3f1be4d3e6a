use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AgentError, Observation, ObservationKind};
use crate::fsm::ConsultationState;
use crate::taxonomy::{Action, Phase};

pub const EMPTY_MEMORY_TEXT: &str = "No information has been gathered yet.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Patient,
    Examiner,
    Doctor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub turn: u32,
    pub phase: Phase,
    pub category: String,
    pub question: String,
    pub answer: String,
    pub source: Source,
}

/// Everything the doctor has learned in one consultation, in turn order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(
        &mut self,
        turn: u32,
        action: &Action,
        observation: &Observation,
    ) -> Result<(), AgentError> {
        if let Some(last) = self.entries.last() {
            if turn <= last.turn {
                return Err(AgentError::MemoryOrder {
                    last: last.turn,
                    new: turn,
                });
            }
        }
        let source = match (observation.kind, action.phase) {
            (ObservationKind::Subjective, Phase::Inquiry) => Source::Patient,
            (ObservationKind::Objective, Phase::Examination) => Source::Examiner,
            (ObservationKind::Reflective, Phase::Diagnosis) => Source::Doctor,
            (kind, phase) => return Err(AgentError::ObservationMismatch { kind, phase }),
        };
        self.entries.push(MemoryEntry {
            turn,
            phase: action.phase,
            category: action.category.clone(),
            question: action.utterance.clone(),
            answer: observation.text.clone(),
            source,
        });
        Ok(())
    }

    /// Deterministic rendering, grouped by phase in phase order.
    pub fn context(&self) -> String {
        if self.entries.is_empty() {
            return EMPTY_MEMORY_TEXT.to_string();
        }
        let mut out = String::new();
        for phase in Phase::ALL {
            let mut entries = self.entries.iter().filter(|e| e.phase == phase).peekable();
            if entries.peek().is_none() {
                continue;
            }
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{phase}]");
            for e in entries {
                let _ = writeln!(out, "- {} (turn {})", e.category, e.turn);
                let _ = writeln!(out, "  Q: {}", e.question);
                let _ = writeln!(out, "  A: {}", e.answer);
            }
        }
        out
    }
}

/// Appends the observation for `action` at the state's current turn, i.e.
/// the state returned by applying that action.
pub fn memory_append(
    memory: &mut MemoryBank,
    state: &ConsultationState,
    action: &Action,
    observation: &Observation,
) -> Result<(), AgentError> {
    memory.append(state.turn, action, observation)
}

pub fn memory_context(memory: &MemoryBank) -> String {
    memory.context()
}
