use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agents::{DiagnosticReport, ReportSection, MAX_PARSE_ATTEMPTS};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelSettings};
use crate::case::CaseRecord;
use crate::prompt::PromptSet;

pub const SCORE_GRAMMAR: &str = "Symptoms: <0-100>\n\
Medical Examinations: <0-100>\n\
Diagnostic Results: <0-100>\n\
Diagnostic Rationales: <0-100>\n\
Treatment Plan: <0-100>";

/// Rubric scores, each in `0..=100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiveScores {
    pub symptoms: u8,
    pub medical_examinations: u8,
    pub diagnostic_results: u8,
    pub diagnostic_rationales: u8,
    pub treatment_plan: u8,
}

impl FiveScores {
    pub fn uniform(v: u8) -> Self {
        Self {
            symptoms: v,
            medical_examinations: v,
            diagnostic_results: v,
            diagnostic_rationales: v,
            treatment_plan: v,
        }
    }

    pub fn get(&self, s: ReportSection) -> u8 {
        match s {
            ReportSection::Symptoms => self.symptoms,
            ReportSection::MedicalExaminations => self.medical_examinations,
            ReportSection::DiagnosticResults => self.diagnostic_results,
            ReportSection::DiagnosticRationales => self.diagnostic_rationales,
            ReportSection::TreatmentPlan => self.treatment_plan,
        }
    }

    fn slot(&mut self, s: ReportSection) -> &mut u8 {
        match s {
            ReportSection::Symptoms => &mut self.symptoms,
            ReportSection::MedicalExaminations => &mut self.medical_examinations,
            ReportSection::DiagnosticResults => &mut self.diagnostic_results,
            ReportSection::DiagnosticRationales => &mut self.diagnostic_rationales,
            ReportSection::TreatmentPlan => &mut self.treatment_plan,
        }
    }
}

/// Parses exactly five nonblank `Aspect: integer` lines, one per aspect in
/// any order, each integer in `0..=100`.
pub fn parse_scores(reply: &str) -> Result<FiveScores, String> {
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != 5 {
        return Err(format!("expected 5 lines, got {}", lines.len()));
    }
    let mut scores = FiveScores::uniform(0);
    let mut seen = Vec::new();
    for line in lines {
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| format!("line {line:?} is not `Aspect: score`"))?;
        let section = ReportSection::ALL
            .into_iter()
            .find(|s| s.heading().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| format!("unknown aspect {:?}", name.trim()))?;
        if seen.contains(&section) {
            return Err(format!("aspect {:?} given twice", section.heading()));
        }
        seen.push(section);
        let v: u32 = value
            .trim()
            .parse()
            .map_err(|_| format!("score {:?} for {} is not an integer", value.trim(), section.heading()))?;
        if v > 100 {
            return Err(format!("score {v} for {} is outside 0-100", section.heading()));
        }
        *scores.slot(section) = v as u8;
    }
    Ok(scores)
}

fn render_record(record: &CaseRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Patient: {}", record.profile);
    let _ = writeln!(out, "Self-report:");
    for (k, v) in &record.self_report {
        let _ = writeln!(out, "  {k}: {v}");
    }
    let _ = writeln!(out, "Examinations:");
    for e in &record.examinations {
        let _ = writeln!(out, "  {}: {}", e.test_name, e.result_text);
    }
    let gt = &record.ground_truth;
    let _ = writeln!(out, "Diagnosis: {}", gt.diagnosis_text);
    let _ = writeln!(out, "Diagnosis entities: {}", gt.diagnosis_entities.join("; "));
    let _ = writeln!(out, "Diagnostic rationale: {}", gt.rationale_text);
    let _ = write!(out, "Treatment: {}", gt.treatment_text);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub scores: FiveScores,
    pub attempts: u32,
}

/// Grades `report` against the full record through the evaluator backend.
pub fn score_report(
    report: &DiagnosticReport,
    record: &CaseRecord,
    prompts: &PromptSet,
    settings: &ModelSettings,
    backend: &dyn ChatBackend,
) -> Result<ScoreOutcome, EvalError> {
    let prompt = prompts
        .evaluator
        .render(&[
            ("record", &render_record(record)),
            ("report", &report.to_text()),
            ("grammar", SCORE_GRAMMAR),
        ])
        .expect("evaluator template slots are validated at load");
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut reason = String::new();
    for attempt in 1..=MAX_PARSE_ATTEMPTS {
        let reply = backend.complete(&ChatRequest::new(settings, messages.clone()))?;
        match parse_scores(&reply.content) {
            Ok(scores) => return Ok(ScoreOutcome { scores, attempts: attempt }),
            Err(e) => {
                messages.push(ChatMessage::assistant(reply.content));
                let retry = prompts
                    .evaluator_retry
                    .render(&[("error", &e), ("grammar", SCORE_GRAMMAR)])
                    .expect("evaluator retry template slots are validated at load");
                messages.push(ChatMessage::user(retry));
                reason = e;
            }
        }
    }
    Err(EvalError::EvaluatorParseFailure {
        attempts: MAX_PARSE_ATTEMPTS,
        reason,
    })
}
