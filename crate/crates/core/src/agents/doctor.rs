use std::fmt::Write as _;

use super::{MemoryBank, MAX_PARSE_ATTEMPTS};
use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, ModelSettings};
use crate::fsm::{subgoal_status, unmet_categories, ConsultationState, GoalUnmet};
use crate::prompt::PromptSet;
use crate::taxonomy::{parse_action, Action, ActionTaxonomy, Phase, FINAL_DIAGNOSIS};

pub const ACTION_GRAMMAR: &str = "<Phase>: Category. Your question, test order or statement\n\
Example: <Inquiry>: Chief Complaint. Do you feel headache?";

const SYSTEM_PROMPT: &str = "You are an experienced physician conducting a consultation.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoctorDecision {
    pub action: Action,
    /// Backend calls spent on this decision.
    pub attempts: u32,
    /// True when every attempt failed to parse and the fallback was used.
    pub fallback: bool,
}

/// Chooses doctor actions through a chat backend.
#[derive(Debug, Clone)]
pub struct DoctorAgent<'a> {
    pub taxonomy: &'a ActionTaxonomy,
    pub prompts: &'a PromptSet,
    pub settings: &'a ModelSettings,
}

impl<'a> DoctorAgent<'a> {
    pub fn new(taxonomy: &'a ActionTaxonomy, prompts: &'a PromptSet, settings: &'a ModelSettings) -> Self {
        Self {
            taxonomy,
            prompts,
            settings,
        }
    }

    pub fn build_prompt(
        &self,
        state: &ConsultationState,
        memory: &MemoryBank,
        goal_unmet: Option<&GoalUnmet>,
    ) -> String {
        let status = subgoal_status(state, state.phase, self.taxonomy);
        let unmet = unmet_categories(state, state.phase, self.taxonomy);
        let subgoal = if status.met {
            format!(
                "all {} required {} actions done; you may move on when ready",
                status.mandatory_total, state.phase
            )
        } else {
            format!(
                "{} of {} required {} actions done; still required: {}",
                status.mandatory_visited,
                status.mandatory_total,
                state.phase,
                unmet.join(", ")
            )
        };

        let mut lists = String::new();
        for phase in Phase::ALL {
            let marker = if phase == state.phase { " (current phase)" } else { "" };
            let _ = writeln!(lists, "{phase}{marker}:");
            for cat in self.taxonomy.categories_for(phase) {
                let mut tags = Vec::new();
                if cat.mandatory {
                    tags.push("required");
                }
                if state.visited(phase, &cat.name) {
                    tags.push("done");
                }
                let tags = if tags.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", tags.join(", "))
                };
                let _ = writeln!(lists, "  - {}{}: {}", cat.name, tags, cat.hint);
            }
        }

        let memory_text = memory.context();
        let goal_text = goal_unmet.map(|g| g.message()).unwrap_or_default();
        self.prompts
            .doctor
            .render(&[
                ("memory", memory_text.trim_end()),
                ("phase", state.phase.name()),
                ("subgoal", &subgoal),
                ("action_lists", lists.trim_end()),
                ("grammar", ACTION_GRAMMAR),
                ("goal_unmet", &goal_text),
            ])
            .expect("doctor template slots are validated at load")
    }

    /// Asks the backend for the next action, re-prompting on unparseable
    /// replies and falling back to [`fallback_action`] when every attempt
    /// fails. Only backend failures are errors.
    pub fn select_action(
        &self,
        state: &ConsultationState,
        memory: &MemoryBank,
        goal_unmet: Option<&GoalUnmet>,
        backend: &dyn ChatBackend,
    ) -> Result<DoctorDecision, BackendError> {
        let mut messages = vec![
            ChatMessage::system(SYSTEM_PROMPT),
            ChatMessage::user(self.build_prompt(state, memory, goal_unmet)),
        ];
        for attempt in 1..=MAX_PARSE_ATTEMPTS {
            let reply = backend.complete(&ChatRequest::new(self.settings, messages.clone()))?;
            match parse_reply(&reply.content, self.taxonomy) {
                Ok(action) => {
                    return Ok(DoctorDecision {
                        action,
                        attempts: attempt,
                        fallback: false,
                    })
                }
                Err(err) => {
                    messages.push(ChatMessage::assistant(reply.content));
                    let retry = self
                        .prompts
                        .doctor_retry
                        .render(&[("error", &err), ("grammar", ACTION_GRAMMAR)])
                        .expect("retry template slots are validated at load");
                    messages.push(ChatMessage::user(retry));
                }
            }
        }
        Ok(DoctorDecision {
            action: fallback_action(state, self.taxonomy),
            attempts: MAX_PARSE_ATTEMPTS,
            fallback: true,
        })
    }
}

/// Models often wrap the action in prose; parse from the first line that
/// opens with `<`.
fn parse_reply(reply: &str, taxonomy: &ActionTaxonomy) -> Result<Action, String> {
    let start = reply
        .lines()
        .scan(0usize, |offset, line| {
            let here = *offset;
            *offset += line.len() + 1;
            Some((here, line))
        })
        .find(|(_, line)| line.trim_start().starts_with('<'))
        .map(|(offset, _)| offset)
        .unwrap_or(0);
    parse_action(&reply[start..], taxonomy).map_err(|e| e.to_string())
}

/// First mandatory category of the current phase not yet covered, asked
/// with its hint; otherwise the first category of the next phase. In the
/// diagnosis phase with nothing left, the final diagnosis.
pub fn fallback_action(state: &ConsultationState, taxonomy: &ActionTaxonomy) -> Action {
    let pick = taxonomy
        .mandatory(state.phase)
        .find(|c| !state.visited(state.phase, &c.name))
        .or_else(|| {
            state
                .phase
                .next()
                .map(|p| &taxonomy.categories_for(p)[0])
        })
        .or_else(|| taxonomy.category(Phase::Diagnosis, FINAL_DIAGNOSIS))
        .unwrap_or(&taxonomy.categories_for(Phase::Diagnosis)[0]);
    let utterance = if pick.hint.is_empty() {
        format!("{}?", pick.name)
    } else {
        pick.hint.clone()
    };
    Action {
        phase: pick.phase,
        category: pick.name.clone(),
        utterance,
    }
}
