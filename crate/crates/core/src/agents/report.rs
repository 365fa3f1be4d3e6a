use serde::{Deserialize, Serialize};

use super::{MemoryBank, MAX_PARSE_ATTEMPTS};
use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, ModelSettings};
use crate::prompt::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSection {
    Symptoms,
    MedicalExaminations,
    DiagnosticResults,
    DiagnosticRationales,
    TreatmentPlan,
}

impl ReportSection {
    pub const ALL: [ReportSection; 5] = [
        ReportSection::Symptoms,
        ReportSection::MedicalExaminations,
        ReportSection::DiagnosticResults,
        ReportSection::DiagnosticRationales,
        ReportSection::TreatmentPlan,
    ];

    pub fn heading(self) -> &'static str {
        match self {
            ReportSection::Symptoms => "Symptoms",
            ReportSection::MedicalExaminations => "Medical Examinations",
            ReportSection::DiagnosticResults => "Diagnostic Results",
            ReportSection::DiagnosticRationales => "Diagnostic Rationales",
            ReportSection::TreatmentPlan => "Treatment Plan",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub symptoms: String,
    pub medical_examinations: String,
    pub diagnostic_results: String,
    pub diagnostic_rationales: String,
    pub treatment_plan: String,
}

impl DiagnosticReport {
    pub fn section(&self, s: ReportSection) -> &str {
        match s {
            ReportSection::Symptoms => &self.symptoms,
            ReportSection::MedicalExaminations => &self.medical_examinations,
            ReportSection::DiagnosticResults => &self.diagnostic_results,
            ReportSection::DiagnosticRationales => &self.diagnostic_rationales,
            ReportSection::TreatmentPlan => &self.treatment_plan,
        }
    }

    pub fn section_mut(&mut self, s: ReportSection) -> &mut String {
        match s {
            ReportSection::Symptoms => &mut self.symptoms,
            ReportSection::MedicalExaminations => &mut self.medical_examinations,
            ReportSection::DiagnosticResults => &mut self.diagnostic_results,
            ReportSection::DiagnosticRationales => &mut self.diagnostic_rationales,
            ReportSection::TreatmentPlan => &mut self.treatment_plan,
        }
    }

    /// The report under its five headings, in the same layout the parser reads.
    pub fn to_text(&self) -> String {
        ReportSection::ALL
            .iter()
            .map(|s| format!("{}: {}", s.heading(), self.section(*s)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedReport {
    pub report: DiagnosticReport,
    /// Sections never produced by the backend; left empty in `report`.
    pub missing: Vec<ReportSection>,
    pub attempts: u32,
}

/// If `line` opens a section, returns it with the text after the colon.
fn heading_of(line: &str) -> Option<(ReportSection, &str)> {
    let stripped = line.trim().trim_start_matches(['#', '*', '-', ' ']);
    for s in ReportSection::ALL {
        let h = s.heading();
        if stripped.len() < h.len() || !stripped.is_char_boundary(h.len()) {
            continue;
        }
        let (head, tail) = stripped.split_at(h.len());
        if !head.eq_ignore_ascii_case(h) {
            continue;
        }
        if let Some(rest) = tail.trim_start_matches('*').trim_start().strip_prefix(':') {
            return Some((s, rest.trim_start_matches('*')));
        }
    }
    None
}

/// Splits a reply into sections by heading. Headings match
/// case-insensitively and may carry markdown emphasis. Returns the parsed
/// sections; a repeated heading keeps the first occurrence.
pub fn parse_report(text: &str) -> Vec<(ReportSection, String)> {
    let mut out: Vec<(ReportSection, Vec<&str>)> = Vec::new();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((section, rest)) = heading_of(line) {
            if out.iter().any(|(s, _)| *s == section) {
                current = None;
            } else {
                out.push((section, vec![rest]));
                current = Some(out.len() - 1);
            }
        } else if let Some(i) = current {
            out[i].1.push(line);
        }
    }
    out.into_iter()
        .map(|(s, lines)| (s, lines.join("\n").trim().to_string()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReportComposer<'a> {
    pub prompts: &'a PromptSet,
    pub settings: &'a ModelSettings,
}

impl<'a> ReportComposer<'a> {
    pub fn new(prompts: &'a PromptSet, settings: &'a ModelSettings) -> Self {
        Self { prompts, settings }
    }

    fn headings() -> String {
        ReportSection::ALL
            .iter()
            .map(|s| format!("{}:", s.heading()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Sections found in any attempt are kept; later attempts fill gaps.
    pub fn compose(
        &self,
        memory: &MemoryBank,
        backend: &dyn ChatBackend,
    ) -> Result<ComposedReport, BackendError> {
        let headings = Self::headings();
        let context = memory.context();
        let prompt = self
            .prompts
            .report
            .render(&[("memory", context.trim_end()), ("headings", &headings)])
            .expect("report template slots are validated at load");
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut report = DiagnosticReport::default();
        let mut found = Vec::new();
        let mut attempts = 0;
        for attempt in 1..=MAX_PARSE_ATTEMPTS {
            attempts = attempt;
            let reply = backend.complete(&ChatRequest::new(self.settings, messages.clone()))?;
            for (section, text) in parse_report(&reply.content) {
                if !found.contains(&section) {
                    found.push(section);
                    *report.section_mut(section) = text;
                }
            }
            let missing: Vec<_> = ReportSection::ALL
                .into_iter()
                .filter(|s| !found.contains(s))
                .collect();
            if missing.is_empty() {
                break;
            }
            messages.push(ChatMessage::assistant(reply.content));
            let names = missing
                .iter()
                .map(|s| s.heading())
                .collect::<Vec<_>>()
                .join(", ");
            let retry = self
                .prompts
                .report_retry
                .render(&[("missing", &names), ("headings", &headings)])
                .expect("report retry template slots are validated at load");
            messages.push(ChatMessage::user(retry));
        }
        let missing = ReportSection::ALL
            .into_iter()
            .filter(|s| !found.contains(s))
            .collect();
        Ok(ComposedReport {
            report,
            missing,
            attempts,
        })
    }
}

pub fn compose_final_report(
    memory: &MemoryBank,
    prompts: &PromptSet,
    settings: &ModelSettings,
    backend: &dyn ChatBackend,
) -> Result<ComposedReport, BackendError> {
    ReportComposer::new(prompts, settings).compose(memory, backend)
}
