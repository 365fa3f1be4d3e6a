//! Consultation state machine.
//!
//! The state tracks the current phase, the number of applied doctor actions,
//! and which categories have been covered in each phase. Moving forward to a
//! later phase is gated on the current phase's mandatory categories having
//! been covered; moving back to an earlier phase is always allowed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Action, ActionTaxonomy, Phase, FINAL_DIAGNOSIS};

pub const DEFAULT_MAX_TURNS: u32 = 20;
/// Smallest cap that leaves room for one action per phase.
pub const MIN_MAX_TURNS: u32 = 3;
/// Turns at the end of the budget in which progression bypasses the gate.
pub const DEFAULT_FORCED_RESERVE: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsultationState {
    pub phase: Phase,
    pub turn: u32,
    pub coverage: BTreeMap<Phase, BTreeSet<String>>,
    pub terminated: bool,
    pub max_turns: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Stay,
    Progressive,
    Retrospective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoalStatus {
    pub phase: Phase,
    pub mandatory_total: usize,
    pub mandatory_visited: usize,
    pub met: bool,
}

/// Progression refused because the current phase's sub-goal is not met.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalUnmet {
    pub phase: Phase,
    pub unmet: Vec<String>,
}

impl GoalUnmet {
    /// Feedback text handed back to the doctor.
    pub fn message(&self) -> String {
        format!(
            "You tried to leave the {} phase before covering its required actions. Still required: {}.",
            self.phase,
            self.unmet.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Advanced {
        state: ConsultationState,
        transition: TransitionKind,
    },
    GoalUnmet(GoalUnmet),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsmError {
    #[error("max_turns must be at least {MIN_MAX_TURNS}, got {0}")]
    InvalidMaxTurns(u32),
    #[error("the consultation has already ended")]
    ActionAfterTermination,
    #[error("action category {category:?} is not defined under {phase}")]
    UnknownCategory { phase: Phase, category: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub enabled: bool,
    pub forced_reserve: u32,
}

impl Default for GatePolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            forced_reserve: DEFAULT_FORCED_RESERVE,
        }
    }
}

impl GatePolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

pub fn initial_state(max_turns: u32) -> Result<ConsultationState, FsmError> {
    if max_turns < MIN_MAX_TURNS {
        return Err(FsmError::InvalidMaxTurns(max_turns));
    }
    Ok(ConsultationState {
        phase: Phase::Inquiry,
        turn: 0,
        coverage: BTreeMap::new(),
        terminated: false,
        max_turns,
    })
}

impl ConsultationState {
    pub fn visited(&self, phase: Phase, category: &str) -> bool {
        self.coverage
            .get(&phase)
            .is_some_and(|s| s.contains(category))
    }

    pub fn is_terminal(&self) -> bool {
        is_terminal(self)
    }
}

pub fn classify_transition(state: &ConsultationState, action: &Action) -> TransitionKind {
    use std::cmp::Ordering::*;
    match action.phase.cmp(&state.phase) {
        Equal => TransitionKind::Stay,
        Greater => TransitionKind::Progressive,
        Less => TransitionKind::Retrospective,
    }
}

pub fn subgoal_status(
    state: &ConsultationState,
    phase: Phase,
    taxonomy: &ActionTaxonomy,
) -> SubGoalStatus {
    let mut total = 0;
    let mut visited = 0;
    for cat in taxonomy.mandatory(phase) {
        total += 1;
        if state.visited(phase, &cat.name) {
            visited += 1;
        }
    }
    SubGoalStatus {
        phase,
        mandatory_total: total,
        mandatory_visited: visited,
        met: visited == total,
    }
}

/// Mandatory categories of `phase` not yet covered, in taxonomy order.
pub fn unmet_categories(
    state: &ConsultationState,
    phase: Phase,
    taxonomy: &ActionTaxonomy,
) -> Vec<String> {
    taxonomy
        .mandatory(phase)
        .filter(|c| !state.visited(phase, &c.name))
        .map(|c| c.name.clone())
        .collect()
}

pub fn is_terminal(state: &ConsultationState) -> bool {
    state.terminated || state.turn >= state.max_turns
}

/// Applies `action` with the default gate.
pub fn apply_action(
    state: &ConsultationState,
    action: &Action,
    taxonomy: &ActionTaxonomy,
) -> Result<Step, FsmError> {
    TransitionModel::new(taxonomy, GatePolicy::default()).apply(state, action)
}

/// Deterministic transition function over a fixed taxonomy and gate.
#[derive(Debug, Clone, Copy)]
pub struct TransitionModel<'a> {
    pub taxonomy: &'a ActionTaxonomy,
    pub gate: GatePolicy,
}

impl<'a> TransitionModel<'a> {
    pub fn new(taxonomy: &'a ActionTaxonomy, gate: GatePolicy) -> Self {
        Self { taxonomy, gate }
    }

    fn gate_bypassed(&self, state: &ConsultationState) -> bool {
        !self.gate.enabled
            || state.turn >= state.max_turns.saturating_sub(self.gate.forced_reserve)
    }

    /// Computes the successor of `state`. A [`Step::GoalUnmet`] leaves the
    /// caller's state untouched.
    pub fn apply(&self, state: &ConsultationState, action: &Action) -> Result<Step, FsmError> {
        if is_terminal(state) {
            return Err(FsmError::ActionAfterTermination);
        }
        let category = self
            .taxonomy
            .category(action.phase, &action.category)
            .ok_or_else(|| FsmError::UnknownCategory {
                phase: action.phase,
                category: action.category.clone(),
            })?;

        let transition = classify_transition(state, action);
        if transition == TransitionKind::Progressive && !self.gate_bypassed(state) {
            let unmet = unmet_categories(state, state.phase, self.taxonomy);
            if !unmet.is_empty() {
                return Ok(Step::GoalUnmet(GoalUnmet {
                    phase: state.phase,
                    unmet,
                }));
            }
        }

        let mut next = state.clone();
        next.turn += 1;
        next.phase = action.phase;
        next.coverage
            .entry(action.phase)
            .or_default()
            .insert(category.name.clone());
        if action.phase == Phase::Diagnosis && category.name == FINAL_DIAGNOSIS {
            next.terminated = true;
        }
        Ok(Step::Advanced {
            state: next,
            transition,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn act(t: &ActionTaxonomy, phase: Phase, cat: &str) -> Action {
        t.action(phase, cat, "x").unwrap()
    }

    fn advance(model: &TransitionModel, s: &ConsultationState, a: &Action) -> ConsultationState {
        match model.apply(s, a).unwrap() {
            Step::Advanced { state, .. } => state,
            Step::GoalUnmet(g) => panic!("unexpected gate: {g:?}"),
        }
    }

    #[test]
    fn initial_state_bounds() {
        let s = initial_state(20).unwrap();
        assert_eq!(s.phase, Phase::Inquiry);
        assert_eq!(s.turn, 0);
        assert!(s.coverage.is_empty());
        assert!(!s.terminated);
        assert_eq!(initial_state(2), Err(FsmError::InvalidMaxTurns(2)));
        assert!(initial_state(3).is_ok());
    }

    #[test]
    fn classification() {
        let t = ActionTaxonomy::bundled();
        let mut s = initial_state(20).unwrap();
        assert_eq!(
            classify_transition(&s, &act(&t, Phase::Inquiry, "Chief Complaint")),
            TransitionKind::Stay
        );
        assert_eq!(
            classify_transition(&s, &act(&t, Phase::Examination, "ECG")),
            TransitionKind::Progressive
        );
        s.phase = Phase::Diagnosis;
        let lab = t
            .parse_action("<Examination>: Laboratory Tests. Order a complete blood count.")
            .unwrap();
        assert_eq!(classify_transition(&s, &lab), TransitionKind::Retrospective);
    }

    #[test]
    fn first_action_updates_state() {
        let t = ActionTaxonomy::bundled();
        let s = initial_state(20).unwrap();
        let a = t
            .parse_action("<Inquiry>: Chief Complaint. Do you feel headache?")
            .unwrap();
        let next = apply_action(&s, &a, &t).unwrap();
        let Step::Advanced { state, transition } = next else {
            panic!()
        };
        assert_eq!(transition, TransitionKind::Stay);
        assert_eq!(state.phase, Phase::Inquiry);
        assert_eq!(state.turn, 1);
        assert_eq!(
            state.coverage,
            BTreeMap::from([(Phase::Inquiry, BTreeSet::from(["Chief Complaint".into()]))])
        );
    }

    #[test]
    fn early_progression_is_gated() {
        let t = ActionTaxonomy::bundled();
        let model = TransitionModel::new(&t, GatePolicy::default());
        let s = advance(&model, &initial_state(20).unwrap(), &act(&t, Phase::Inquiry, "Chief Complaint"));
        let step = model.apply(&s, &act(&t, Phase::Examination, "ECG")).unwrap();
        assert_eq!(
            step,
            Step::GoalUnmet(GoalUnmet {
                phase: Phase::Inquiry,
                unmet: vec!["History of Present Illness".into()],
            })
        );
    }

    #[test]
    fn gate_off_allows_progression() {
        let t = ActionTaxonomy::bundled();
        let model = TransitionModel::new(&t, GatePolicy::disabled());
        let s = initial_state(20).unwrap();
        let s = advance(&model, &s, &act(&t, Phase::Diagnosis, FINAL_DIAGNOSIS));
        assert!(s.terminated);
        assert_eq!(s.turn, 1);
    }

    #[test]
    fn forced_progression_inside_reserve() {
        let t = ActionTaxonomy::bundled();
        let model = TransitionModel::new(&t, GatePolicy::default());
        let mut s = initial_state(5).unwrap();
        s = advance(&model, &s, &act(&t, Phase::Inquiry, "Chief Complaint"));
        s = advance(&model, &s, &act(&t, Phase::Inquiry, "Past Medical History"));
        // turn 2 < 5 - 2: still gated
        assert!(matches!(
            model.apply(&s, &act(&t, Phase::Examination, "ECG")).unwrap(),
            Step::GoalUnmet(_)
        ));
        s = advance(&model, &s, &act(&t, Phase::Inquiry, "Past Medical History"));
        // turn 3 >= 5 - 2: bypass
        let s = advance(&model, &s, &act(&t, Phase::Examination, "ECG"));
        assert_eq!(s.phase, Phase::Examination);
    }

    #[test]
    fn final_diagnosis_terminates() {
        let t = ActionTaxonomy::bundled();
        let mut s = initial_state(20).unwrap();
        s.phase = Phase::Diagnosis;
        let next = apply_action(&s, &act(&t, Phase::Diagnosis, FINAL_DIAGNOSIS), &t).unwrap();
        let Step::Advanced { state, .. } = next else {
            panic!()
        };
        assert!(state.terminated);
        assert!(is_terminal(&state));
        assert_eq!(
            apply_action(&state, &act(&t, Phase::Diagnosis, "Treatment Plan"), &t),
            Err(FsmError::ActionAfterTermination)
        );
    }

    #[test]
    fn terminal_on_cap() {
        let mut s = initial_state(3).unwrap();
        assert!(!is_terminal(&s));
        s.turn = 3;
        assert!(is_terminal(&s));
        let mut s2 = initial_state(3).unwrap();
        s2.terminated = true;
        s2.phase = Phase::Diagnosis;
        assert!(is_terminal(&s2));
    }

    #[test]
    fn subgoal_counts() {
        let t = ActionTaxonomy::bundled();
        let model = TransitionModel::new(&t, GatePolicy::default());
        let s = initial_state(20).unwrap();
        assert_eq!(
            subgoal_status(&s, Phase::Inquiry, &t),
            SubGoalStatus {
                phase: Phase::Inquiry,
                mandatory_total: 2,
                mandatory_visited: 0,
                met: false
            }
        );
        let s = advance(&model, &s, &act(&t, Phase::Inquiry, "Chief Complaint"));
        let s = advance(&model, &s, &act(&t, Phase::Inquiry, "History of Present Illness"));
        assert!(subgoal_status(&s, Phase::Inquiry, &t).met);
        let s = advance(&model, &s, &act(&t, Phase::Inquiry, "Past Medical History"));
        let st = subgoal_status(&s, Phase::Inquiry, &t);
        assert!(st.met);
        assert_eq!(st.mandatory_visited, 2);
    }

    #[test]
    fn unknown_category_is_rejected() {
        let t = ActionTaxonomy::bundled();
        let a = Action {
            phase: Phase::Inquiry,
            category: "ECG".into(),
            utterance: "x".into(),
        };
        assert!(matches!(
            apply_action(&initial_state(20).unwrap(), &a, &t),
            Err(FsmError::UnknownCategory { .. })
        ));
    }

    proptest! {
        #[test]
        fn goal_unmet_leaves_state_unchanged(picks in proptest::collection::vec(0usize..14, 1..30)) {
            let t = ActionTaxonomy::bundled();
            let all: Vec<_> = t.iter().cloned().collect();
            let model = TransitionModel::new(&t, GatePolicy::default());
            let mut s = initial_state(20).unwrap();
            for p in picks {
                if is_terminal(&s) { break; }
                let c = &all[p % all.len()];
                let a = t.action(c.phase, &c.name, "q").unwrap();
                let before = s.clone();
                match model.apply(&s, &a).unwrap() {
                    Step::Advanced { state, .. } => {
                        prop_assert_eq!(state.phase, a.phase);
                        prop_assert_eq!(state.turn, before.turn + 1);
                        s = state;
                    }
                    Step::GoalUnmet(_) => prop_assert_eq!(&s, &before),
                }
            }
        }
    }
}
