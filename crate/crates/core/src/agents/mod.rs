//! The three agent roles and final report composition.
//!
//! * [`DoctorAgent`] picks the next action from the taxonomy through a chat
//!   backend, with re-prompting and a deterministic fallback.
//! * [`PatientAgent`] answers inquiry actions from the case's self-report,
//!   scoped to the asked category, optionally interjecting a disruption.
//! * [`examiner_respond`] relays examination results from the case record.
//!
//! Observations land in the per-run [`MemoryBank`], which is rendered back
//! into every doctor prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::taxonomy::Phase;

mod doctor;
mod examiner;
mod memory;
mod patient;
mod report;

pub use doctor::{fallback_action, DoctorAgent, DoctorDecision, ACTION_GRAMMAR};
pub use examiner::{examiner_respond, ordered_test_name, NOT_AVAILABLE_TEXT};
pub use memory::{memory_append, memory_context, MemoryBank, MemoryEntry, Source, EMPTY_MEMORY_TEXT};
pub use patient::{
    patient_respond, redact_ground_truth, PatientAgent, PatientMode, PatientPolicy,
    DEFAULT_DISRUPTIONS_JSON, NO_COMPLAINT_TEXT,
};
pub use report::{
    compose_final_report, parse_report, ComposedReport, DiagnosticReport, ReportComposer,
    ReportSection,
};

/// Number of backend calls an agent makes for one structured reply before
/// giving up (first try plus re-prompts).
pub const MAX_PARSE_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// From the patient.
    Subjective,
    /// From the examiner.
    Objective,
    /// The doctor's own diagnosis-phase statement.
    Reflective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub text: String,
}

impl Observation {
    pub fn subjective(text: impl Into<String>) -> Self {
        Self {
            kind: ObservationKind::Subjective,
            text: text.into(),
        }
    }

    pub fn objective(text: impl Into<String>) -> Self {
        Self {
            kind: ObservationKind::Objective,
            text: text.into(),
        }
    }

    pub fn reflective(text: impl Into<String>) -> Self {
        Self {
            kind: ObservationKind::Reflective,
            text: text.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("the patient only answers inquiry actions, got a {0} action")]
    NonInquiryAction(Phase),
    #[error("the examiner only handles examination actions, got a {0} action")]
    NonExaminationAction(Phase),
    #[error("memory entries must have strictly increasing turns: {new} after {last}")]
    MemoryOrder { last: u32, new: u32 },
    #[error("{kind:?} observation cannot answer a {phase} action")]
    ObservationMismatch { kind: ObservationKind, phase: Phase },
    #[error("invalid patient policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
