use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvalError;
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, ModelSettings};
use crate::prompt::PromptSet;

/// Bundled desk-scale subset of ICD-10.
pub const DEFAULT_ICD_JSON: &str = include_str!("../../data/icd10_subset.json");

#[derive(Debug, Error)]
pub enum IcdError {
    #[error("failed to read ICD index: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ICD index: {0}")]
    Malformed(String),
    #[error("{0:?} is not an ICD-10 code (letter, two digits, optional dot suffix)")]
    BadCode(String),
    #[error("term {term:?} maps to both {first} and {second}")]
    ConflictingTerm {
        term: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdEntry {
    pub code: String,
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Deserialize)]
struct IcdFile {
    codes: Vec<IcdEntry>,
}

fn code_shape() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z][0-9]{2}(\.[0-9A-Z]{1,4})?$").expect("valid regex"))
}

/// Case-folds, trims and collapses internal whitespace.
fn fold_term(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Surface term -> ICD-10 code lookup. Synonyms map to the same code as
/// their canonical term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcdIndex {
    terms: HashMap<String, String>,
    canonical: BTreeMap<String, String>,
    /// All terms, longest first, for scanning free text.
    by_length: Vec<String>,
}

impl IcdIndex {
    pub fn from_entries(entries: Vec<IcdEntry>) -> Result<Self, IcdError> {
        let mut terms: HashMap<String, String> = HashMap::new();
        let mut canonical = BTreeMap::new();
        for entry in entries {
            let code = entry.code.trim().to_string();
            if !code_shape().is_match(&code) {
                return Err(IcdError::BadCode(code));
            }
            canonical
                .entry(code.clone())
                .or_insert_with(|| fold_term(&entry.canonical));
            for term in std::iter::once(&entry.canonical).chain(&entry.synonyms) {
                let term = fold_term(term);
                if term.is_empty() {
                    continue;
                }
                match terms.get(&term) {
                    Some(existing) if *existing != code => {
                        return Err(IcdError::ConflictingTerm {
                            term,
                            first: existing.clone(),
                            second: code,
                        })
                    }
                    _ => {
                        terms.insert(term, code.clone());
                    }
                }
            }
        }
        let mut by_length: Vec<String> = terms.keys().cloned().collect();
        by_length.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Self {
            terms,
            canonical,
            by_length,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, IcdError> {
        let file: IcdFile =
            serde_json::from_str(text).map_err(|e| IcdError::Malformed(e.to_string()))?;
        Self::from_entries(file.codes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IcdError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_ICD_JSON).expect("bundled ICD index is valid")
    }

    pub fn lookup(&self, term: &str) -> Option<&str> {
        self.terms.get(&fold_term(term)).map(String::as_str)
    }

    pub fn canonical_term(&self, code: &str) -> Option<&str> {
        self.canonical.get(code).map(String::as_str)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.canonical.keys().map(String::as_str)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.terms.iter().map(|(t, c)| (t.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    /// Index terms occurring in `segment` at word boundaries, longest match
    /// first, non-overlapping, in order of position.
    fn scan(&self, segment: &str) -> Vec<String> {
        let mut claimed: Vec<(usize, usize, &str)> = Vec::new();
        for term in &self.by_length {
            for (start, _) in segment.match_indices(term.as_str()) {
                let end = start + term.len();
                let before_ok = segment[..start]
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric());
                let after_ok = segment[end..]
                    .chars()
                    .next()
                    .is_none_or(|c| !c.is_alphanumeric());
                let free = claimed.iter().all(|(s, e, _)| end <= *s || start >= *e);
                if before_ok && after_ok && free {
                    claimed.push((start, end, term.as_str()));
                }
            }
        }
        claimed.sort_by_key(|(s, _, _)| *s);
        claimed.into_iter().map(|(_, _, t)| t.to_string()).collect()
    }
}

impl Default for IcdIndex {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    Rule,
    Model,
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items
        .into_iter()
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

/// Rule-based extraction: the text is split into segments at numbered-list
/// markers, semicolons, line breaks and sentence-ending periods, and each
/// segment is scanned for index terms. Commas act as word boundaries, so
/// comma-separated lists split naturally while comma-bearing synonyms such
/// as "appendicitis, acute" still match.
pub fn extract_entities_rule(text: &str, index: &IcdIndex) -> Vec<String> {
    static LIST_MARKER: OnceLock<Regex> = OnceLock::new();
    static BOUNDARY: OnceLock<Regex> = OnceLock::new();
    let list_marker = LIST_MARKER
        .get_or_init(|| Regex::new(r"(^|\s)\(?\d{1,2}[.)]\s").expect("valid regex"));
    let boundary =
        BOUNDARY.get_or_init(|| Regex::new(r"[;\n]|\.(\s|$)").expect("valid regex"));

    let folded = fold_term_keep_lines(text);
    let unlisted = list_marker.replace_all(&folded, "; ");
    dedup(
        boundary
            .split(&unlisted)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .flat_map(|seg| index.scan(seg)),
    )
}

fn fold_term_keep_lines(text: &str) -> String {
    text.lines()
        .map(fold_term)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Model-based extraction: the backend lists one entity per line.
pub fn extract_entities_model(
    text: &str,
    prompts: &PromptSet,
    settings: &ModelSettings,
    backend: &dyn ChatBackend,
) -> Result<Vec<String>, EvalError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    static BULLET: OnceLock<Regex> = OnceLock::new();
    let bullet = BULLET.get_or_init(|| Regex::new(r"^\s*([-*•]|\(?\d{1,2}[.)])\s*").expect("valid regex"));
    let prompt = prompts
        .extract
        .render(&[("text", text)])
        .expect("extract template slots are validated at load");
    let reply = backend.complete(&ChatRequest::new(settings, vec![ChatMessage::user(prompt)]))?;
    Ok(dedup(
        reply
            .content
            .lines()
            .map(|l| fold_term(&bullet.replace(l, ""))),
    ))
}

pub fn extract_entities(
    text: &str,
    mode: ExtractionMode,
    index: &IcdIndex,
    model: Option<(&PromptSet, &ModelSettings, &dyn ChatBackend)>,
) -> Result<Vec<String>, EvalError> {
    match (mode, model) {
        (ExtractionMode::Rule, _) => Ok(extract_entities_rule(text, index)),
        (ExtractionMode::Model, Some((prompts, settings, backend))) => {
            extract_entities_model(text, prompts, settings, backend)
        }
        (ExtractionMode::Model, None) => Err(EvalError::Backend(
            crate::backend::BackendError::Config("model extraction needs a backend".into()),
        )),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalized {
    pub codes: BTreeSet<String>,
    pub unmatched: Vec<String>,
}

pub fn normalize_to_icd<S: AsRef<str>>(entities: &[S], index: &IcdIndex) -> Normalized {
    let mut out = Normalized::default();
    for e in entities {
        match index.lookup(e.as_ref()) {
            Some(code) => {
                out.codes.insert(code.to_string());
            }
            None => out.unmatched.push(fold_term(e.as_ref())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FixtureEntry, ScriptedBackend};
    use proptest::prelude::*;

    fn small() -> IcdIndex {
        IcdIndex::from_entries(vec![
            IcdEntry {
                code: "K35".into(),
                canonical: "acute appendicitis".into(),
                synonyms: vec!["appendicitis, acute".into()],
            },
            IcdEntry {
                code: "E11.9".into(),
                canonical: "type 2 diabetes mellitus".into(),
                synonyms: vec![],
            },
        ])
        .unwrap()
    }

    #[test]
    fn bundled_index_is_desk_scale() {
        let idx = IcdIndex::bundled();
        assert!(idx.len() >= 100, "{}", idx.len());
        for code in idx.codes() {
            assert!(code_shape().is_match(code));
        }
    }

    #[test]
    fn rejects_bad_codes_and_conflicts() {
        let bad = IcdIndex::from_entries(vec![IcdEntry {
            code: "K3".into(),
            canonical: "x".into(),
            synonyms: vec![],
        }]);
        assert!(matches!(bad, Err(IcdError::BadCode(_))));
        let conflict = IcdIndex::from_entries(vec![
            IcdEntry { code: "A00".into(), canonical: "x".into(), synonyms: vec![] },
            IcdEntry { code: "B00".into(), canonical: "y".into(), synonyms: vec!["X".into()] },
        ]);
        assert!(matches!(conflict, Err(IcdError::ConflictingTerm { .. })));
    }

    #[test]
    fn rule_extraction_numbered_list() {
        let got = extract_entities_rule("1. Acute appendicitis; 2. Type 2 diabetes mellitus", &small());
        assert_eq!(got, ["acute appendicitis", "type 2 diabetes mellitus"]);
    }

    #[test]
    fn rule_extraction_empty_and_dedup() {
        assert!(extract_entities_rule("", &small()).is_empty());
        let got = extract_entities_rule(
            "Acute appendicitis. Confirmed acute appendicitis on imaging.",
            &small(),
        );
        assert_eq!(got, ["acute appendicitis"]);
    }

    #[test]
    fn rule_extraction_handles_commas_and_boundaries() {
        let idx = small();
        assert_eq!(
            extract_entities_rule("Appendicitis, acute, with type 2 diabetes mellitus.", &idx),
            ["appendicitis, acute", "type 2 diabetes mellitus"]
        );
        assert!(extract_entities_rule("subacute appendicitisx", &idx).is_empty());
    }

    #[test]
    fn rule_extraction_prefers_longest_term() {
        let idx = IcdIndex::bundled();
        let got = extract_entities_rule("Final: unstable angina, essential hypertension", &idx);
        assert_eq!(got, ["unstable angina", "essential hypertension"]);
    }

    #[test]
    fn model_extraction_parses_lines() {
        let b = ScriptedBackend::new(vec![FixtureEntry::any(
            "- Acute Appendicitis\n2. type 2 diabetes mellitus\n\n- acute appendicitis",
        )]);
        let got = extract_entities(
            "whatever",
            ExtractionMode::Model,
            &small(),
            Some((&PromptSet::bundled(), &ModelSettings::default(), &b)),
        )
        .unwrap();
        assert_eq!(got, ["acute appendicitis", "type 2 diabetes mellitus"]);
    }

    #[test]
    fn normalization_examples() {
        let idx = small();
        let n = normalize_to_icd(&["acute appendicitis"], &idx);
        assert_eq!(n.codes, BTreeSet::from(["K35".to_string()]));
        let n = normalize_to_icd(&["appendicitis, acute", " Acute  Appendicitis "], &idx);
        assert_eq!(n.codes, BTreeSet::from(["K35".to_string()]));
        assert!(n.unmatched.is_empty());
        let n = normalize_to_icd(&["florbnitz disease"], &idx);
        assert!(n.codes.is_empty());
        assert_eq!(n.unmatched, ["florbnitz disease"]);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent_on_codes(picks in proptest::collection::vec(0usize..400, 0..12)) {
            let idx = IcdIndex::bundled();
            let terms: Vec<&str> = {
                let mut t: Vec<&str> = idx.terms().map(|(t, _)| t).collect();
                t.sort();
                t
            };
            let chosen: Vec<&str> = picks.iter().map(|i| terms[i % terms.len()]).collect();
            let first = normalize_to_icd(&chosen, &idx);
            let canon: Vec<&str> = first.codes.iter().map(|c| idx.canonical_term(c).unwrap()).collect();
            let second = normalize_to_icd(&canon, &idx);
            prop_assert_eq!(first.codes, second.codes);
        }
    }
}
