//! Case records: the per-patient data the patient and examiner agents draw
//! from, plus the ground truth used by evaluation.
//!
//! A corpus is a JSON Lines file with one [`CaseRecord`] per line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Self-report key that every case must carry.
pub const CHIEF_COMPLAINT: &str = "Chief Complaint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub profile: String,
    /// Inquiry category name -> what the patient discloses when asked about it.
    pub self_report: BTreeMap<String, String>,
    #[serde(default)]
    pub examinations: Vec<ExamResult>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Imaging,
    Ecg,
    Laboratory,
    Physical,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamResult {
    pub test_name: String,
    pub modality: Modality,
    /// Pre-transcribed textual finding.
    pub result_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub diagnosis_text: String,
    pub diagnosis_entities: Vec<String>,
    pub rationale_text: String,
    pub treatment_text: String,
}

/// One broken invariant of a case record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted path of the offending field, e.g. `ground_truth.diagnosis_entities`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    NotFound(String),
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case record on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate case_id {case_id:?} on line {line}")]
    DuplicateId { case_id: String, line: usize },
    #[error("case {case_id:?} (line {line}) is invalid: {}", join_violations(.violations))]
    Invalid {
        case_id: String,
        line: usize,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Case-folded, trimmed form used for every name comparison in this module.
pub(crate) fn fold(name: &str) -> String {
    name.trim().to_lowercase()
}

impl CaseRecord {
    /// Returns every broken invariant; empty means the record is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation {
                field: field.to_string(),
                message,
            })
        };

        if self.case_id.trim().is_empty() {
            push("case_id", "must not be empty".into());
        }
        match self.self_report.get(CHIEF_COMPLAINT) {
            None => push(
                "self_report.Chief Complaint",
                "missing required entry".into(),
            ),
            Some(text) if text.trim().is_empty() => push(
                "self_report.Chief Complaint",
                "must not be empty".into(),
            ),
            Some(_) => {}
        }

        let mut seen = HashSet::new();
        for (i, exam) in self.examinations.iter().enumerate() {
            if exam.test_name.trim().is_empty() {
                push(
                    &format!("examinations[{i}].test_name"),
                    "must not be empty".into(),
                );
            } else if !seen.insert(fold(&exam.test_name)) {
                push(
                    &format!("examinations[{i}].test_name"),
                    format!("duplicate examination name {:?}", exam.test_name),
                );
            }
            if exam.result_text.trim().is_empty() {
                push(
                    &format!("examinations[{i}].result_text"),
                    "must not be empty".into(),
                );
            }
        }

        let gt = &self.ground_truth;
        if gt.diagnosis_entities.is_empty() {
            push(
                "ground_truth.diagnosis_entities",
                "must list at least one entity".into(),
            );
        }
        for (i, e) in gt.diagnosis_entities.iter().enumerate() {
            if e.trim().is_empty() {
                push(
                    &format!("ground_truth.diagnosis_entities[{i}]"),
                    "must not be empty".into(),
                );
            }
        }
        out
    }

    /// Finds the examination whose name matches `test_name` after
    /// case-folding and trimming. `None` means the test is not available
    /// for this patient.
    pub fn lookup_exam(&self, test_name: &str) -> Option<&ExamResult> {
        let wanted = fold(test_name);
        if wanted.is_empty() {
            return None;
        }
        self.examinations
            .iter()
            .find(|e| fold(&e.test_name) == wanted)
    }
}

/// Free-function form of [`CaseRecord::validate`].
pub fn validate_case(record: &CaseRecord) -> Vec<Violation> {
    record.validate()
}

/// Free-function form of [`CaseRecord::lookup_exam`].
pub fn lookup_exam<'a>(record: &'a CaseRecord, test_name: &str) -> Option<&'a ExamResult> {
    record.lookup_exam(test_name)
}

/// Loads and validates a JSON Lines corpus. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::NotFound(path.display().to_string()),
        _ => CorpusError::Io(e),
    })?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CaseRecord>, CorpusError> {
    let mut cases = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CaseRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let violations = record.validate();
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                case_id: record.case_id,
                line: line_no,
                violations,
            });
        }
        if !ids.insert(record.case_id.clone()) {
            return Err(CorpusError::DuplicateId {
                case_id: record.case_id,
                line: line_no,
            });
        }
        cases.push(record);
    }
    Ok(cases)
}

/// Writes a corpus in the same JSON Lines format `load_corpus` reads.
pub fn write_corpus(mut writer: impl Write, cases: &[CaseRecord]) -> std::io::Result<()> {
    for case in cases {
        serde_json::to_writer(&mut writer, case)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
