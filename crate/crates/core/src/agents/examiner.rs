use super::{AgentError, Observation};
use crate::case::CaseRecord;
use crate::taxonomy::{Action, Phase};

pub const NOT_AVAILABLE_TEXT: &str = "Result not available: this test was not performed for this patient.";

const LEAD_INS: [&str; 3] = ["order", "perform", "request"];
const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Test name implied by the utterance: its first sentence with any
/// imperative lead-in and article removed.
pub fn ordered_test_name(utterance: &str) -> String {
    let first = utterance
        .split(['.', '?', '!', '\n'])
        .map(str::trim)
        .find(|s| !s.is_empty())
        .unwrap_or("");
    let all: Vec<&str> = first.split_whitespace().collect();
    let mut words = all.as_slice();
    for strip in [&["please"][..], &LEAD_INS, &ARTICLES] {
        if let Some((w, rest)) = words.split_first() {
            if strip.iter().any(|s| w.eq_ignore_ascii_case(s)) {
                words = rest;
            }
        }
    }
    words.join(" ")
}

/// Relays the recorded result for the ordered test. The utterance is tried
/// first, then the action's category name.
pub fn examiner_respond(record: &CaseRecord, action: &Action) -> Result<Observation, AgentError> {
    if action.phase != Phase::Examination {
        return Err(AgentError::NonExaminationAction(action.phase));
    }
    let found = record
        .lookup_exam(&ordered_test_name(&action.utterance))
        .or_else(|| record.lookup_exam(&action.category));
    Ok(match found {
        Some(exam) => Observation::objective(exam.result_text.clone()),
        None => Observation::objective(NOT_AVAILABLE_TEXT),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ObservationKind;
    use crate::case::fixtures::sample_case;
    use crate::taxonomy::ActionTaxonomy;

    fn exam(cat: &str, utterance: &str) -> Action {
        ActionTaxonomy::bundled()
            .action(Phase::Examination, cat, utterance)
            .unwrap()
    }

    #[test]
    fn strips_lead_ins() {
        assert_eq!(ordered_test_name("Order a Blood Panel. Fasting."), "Blood Panel");
        assert_eq!(ordered_test_name("please perform the ECG"), "ECG");
        assert_eq!(ordered_test_name("Request an ultrasound of the abdomen."), "ultrasound of the abdomen");
        assert_eq!(ordered_test_name("Chest X-ray"), "Chest X-ray");
    }

    #[test]
    fn category_name_fallback_finds_ecg() {
        let c = sample_case("c1");
        let obs = examiner_respond(&c, &exam("ECG", "Perform a 12-lead tracing.")).unwrap();
        assert_eq!(obs.kind, ObservationKind::Objective);
        assert_eq!(obs.text, "Sinus tachycardia, 104 bpm.");
    }

    #[test]
    fn utterance_match_wins() {
        let c = sample_case("c1");
        let obs = examiner_respond(&c, &exam("Laboratory Tests", "Order a blood panel.")).unwrap();
        assert_eq!(obs.text, "WBC 14.2 x10^9/L with neutrophilia.");
    }

    #[test]
    fn absent_test_is_not_available() {
        let c = sample_case("c1");
        let obs = examiner_respond(&c, &exam("Imaging Examination", "Order an MRI of the brain.")).unwrap();
        assert_eq!(obs, Observation::objective(NOT_AVAILABLE_TEXT));
    }

    #[test]
    fn inquiry_action_is_rejected() {
        let c = sample_case("c1");
        let a = ActionTaxonomy::bundled()
            .action(Phase::Inquiry, "Chief Complaint", "Hi")
            .unwrap();
        assert_eq!(
            examiner_respond(&c, &a),
            Err(AgentError::NonExaminationAction(Phase::Inquiry))
        );
    }

    #[test]
    fn deterministic() {
        let c = sample_case("c1");
        let a = exam("ECG", "Perform an ECG.");
        assert_eq!(examiner_respond(&c, &a), examiner_respond(&c, &a));
    }
}
