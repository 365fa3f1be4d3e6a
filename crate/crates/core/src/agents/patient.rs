use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentError, Observation};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelSettings};
use crate::case::{fold, CaseRecord};
use crate::prompt::PromptSet;
use crate::taxonomy::{Action, Phase};

pub const NO_COMPLAINT_TEXT: &str = "I haven't noticed anything like that.";
pub const DEFAULT_DISRUPTIONS_JSON: &str = include_str!("../../data/disruptions.json");
const WITHHELD: &str = "[withheld]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPolicy {
    pub disruption_enabled: bool,
    pub disruption_rate: f64,
    pub seed: u64,
}

impl Default for PatientPolicy {
    fn default() -> Self {
        Self {
            disruption_enabled: false,
            disruption_rate: 0.0,
            seed: 0,
        }
    }
}

impl PatientPolicy {
    pub fn with_rate(rate: f64, seed: u64) -> Self {
        Self {
            disruption_enabled: rate > 0.0,
            disruption_rate: rate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.disruption_rate) {
            return Err(AgentError::InvalidPolicy(format!(
                "disruption rate must be in [0, 1], got {}",
                self.disruption_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientMode {
    /// Answers are the case's self-report text for the asked category.
    #[default]
    Record,
    /// The self-report text is paraphrased by a chat backend.
    Paraphrase,
}

/// Answers inquiry actions from a single case record.
#[derive(Debug, Clone)]
pub struct PatientAgent {
    pub policy: PatientPolicy,
    pub mode: PatientMode,
    pub disruptions: Vec<String>,
}

impl PatientAgent {
    pub fn new(policy: PatientPolicy) -> Result<Self, AgentError> {
        policy.validate()?;
        let disruptions: Vec<String> =
            serde_json::from_str(DEFAULT_DISRUPTIONS_JSON).expect("bundled disruptions are valid");
        Ok(Self {
            policy,
            mode: PatientMode::Record,
            disruptions,
        })
    }

    pub fn with_disruptions(mut self, disruptions: Vec<String>) -> Self {
        self.disruptions = disruptions;
        self
    }

    /// The disruption sentence to append to this answer, if the seeded draw
    /// fires. The draw depends only on (seed, case, action).
    fn disruption(&self, record: &CaseRecord, action: &Action) -> Option<&str> {
        if !self.policy.disruption_enabled || self.disruptions.is_empty() {
            return None;
        }
        let mut h = Sha256::new();
        h.update(self.policy.seed.to_le_bytes());
        h.update(record.case_id.as_bytes());
        h.update([0]);
        h.update(action.render().as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let draw: f64 = rng.gen();
        if draw < self.policy.disruption_rate {
            let i = rng.gen_range(0..self.disruptions.len());
            Some(&self.disruptions[i])
        } else {
            None
        }
    }

    fn disclosed_facts<'r>(record: &'r CaseRecord, action: &Action) -> Option<&'r str> {
        let wanted = fold(&action.category);
        record
            .self_report
            .iter()
            .find(|(k, _)| fold(k) == wanted)
            .map(|(_, v)| v.trim())
            .filter(|v| !v.is_empty())
    }

    fn finish(&self, record: &CaseRecord, action: &Action, base: String) -> Observation {
        let mut text = base;
        if let Some(d) = self.disruption(record, action) {
            text.push(' ');
            text.push_str(d);
        }
        Observation::subjective(redact_ground_truth(&text, record))
    }

    /// Record-bound answer; never calls a backend.
    pub fn respond(&self, record: &CaseRecord, action: &Action) -> Result<Observation, AgentError> {
        if action.phase != Phase::Inquiry {
            return Err(AgentError::NonInquiryAction(action.phase));
        }
        let base = Self::disclosed_facts(record, action)
            .unwrap_or(NO_COMPLAINT_TEXT)
            .to_string();
        Ok(self.finish(record, action, base))
    }

    /// Answer according to `self.mode`; `backend` is used only in
    /// paraphrase mode.
    pub fn respond_with(
        &self,
        record: &CaseRecord,
        action: &Action,
        prompts: &PromptSet,
        settings: &ModelSettings,
        backend: &dyn ChatBackend,
    ) -> Result<Observation, AgentError> {
        if self.mode == PatientMode::Record {
            return self.respond(record, action);
        }
        if action.phase != Phase::Inquiry {
            return Err(AgentError::NonInquiryAction(action.phase));
        }
        let facts = Self::disclosed_facts(record, action).unwrap_or(NO_COMPLAINT_TEXT);
        let prompt = prompts
            .patient
            .render(&[
                ("profile", &record.profile),
                ("facts", facts),
                ("question", &action.utterance),
            ])
            .expect("patient template slots are validated at load");
        let reply = backend.complete(&ChatRequest::new(settings, vec![ChatMessage::user(prompt)]))?;
        Ok(self.finish(record, action, reply.content.trim().to_string()))
    }
}

pub fn patient_respond(
    record: &CaseRecord,
    action: &Action,
    policy: &PatientPolicy,
) -> Result<Observation, AgentError> {
    PatientAgent::new(policy.clone())?.respond(record, action)
}

/// Replaces every case-insensitive occurrence of the diagnosis text and of
/// each diagnosis entity with a placeholder.
pub fn redact_ground_truth(text: &str, record: &CaseRecord) -> String {
    let gt = &record.ground_truth;
    let mut terms: Vec<&str> = std::iter::once(gt.diagnosis_text.as_str())
        .chain(gt.diagnosis_entities.iter().map(String::as_str))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    terms.sort_by_key(|t| std::cmp::Reverse(t.len()));
    let mut out = text.to_string();
    // Replacement can join fragments into a new match; iterate to a fixed point.
    for _ in 0..8 {
        let before = out.clone();
        for term in &terms {
            let re = RegexBuilder::new(&regex::escape(term))
                .case_insensitive(true)
                .build()
                .expect("escaped literal is a valid pattern");
            out = re.replace_all(&out, WITHHELD).into_owned();
        }
        if out == before {
            break;
        }
    }
    out
}
