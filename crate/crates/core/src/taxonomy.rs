//! The hierarchical action set: consultation phases, the clinical action
//! categories available in each phase, and the textual action grammar
//!
//! ```text
//! <Phase>: Category. utterance
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The bundled default taxonomy.
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

/// Category whose application ends the consultation.
pub const FINAL_DIAGNOSIS: &str = "Final Diagnosis";

/// Consultation phase, ordered `Inquiry < Examination < Diagnosis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Inquiry,
    Examination,
    Diagnosis,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Inquiry, Phase::Examination, Phase::Diagnosis];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Inquiry => "Inquiry",
            Phase::Examination => "Examination",
            Phase::Diagnosis => "Diagnosis",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Option<Phase> {
        Phase::ALL.get(self.index() + 1).copied()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = ActionParseError;

    /// Case-insensitive, surrounding whitespace ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Phase::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| ActionParseError::UnknownPhase(t.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCategory {
    pub name: String,
    pub phase: Phase,
    pub mandatory: bool,
    /// Guidance shown to the doctor; also the fallback utterance.
    pub hint: String,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("failed to read taxonomy: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed taxonomy document: {0}")]
    Malformed(String),
    #[error("unknown phase {0:?} in taxonomy")]
    UnknownPhase(String),
    #[error("phase {0} listed more than once")]
    DuplicatePhase(Phase),
    #[error("phase {0} has no categories")]
    EmptyPhase(Phase),
    #[error("phase {0} has no mandatory category")]
    NoMandatory(Phase),
    #[error("category {name:?} listed more than once under {phase}")]
    DuplicateCategory { phase: Phase, name: String },
    #[error("category name under {phase} must be nonempty and must not contain '.': {name:?}")]
    BadCategoryName { phase: Phase, name: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionParseError {
    #[error("malformed action {0:?}: expected `<Phase>: Category. utterance`")]
    MalformedAction(String),
    #[error("unknown phase {0:?}")]
    UnknownPhase(String),
    #[error("unknown category {name:?} for phase {phase}")]
    UnknownCategory { phase: Phase, name: String },
}

#[derive(Deserialize)]
struct TaxonomyFile {
    phases: Vec<PhaseEntry>,
}

#[derive(Deserialize)]
struct PhaseEntry {
    name: String,
    #[serde(default)]
    categories: Vec<CategoryEntry>,
}

#[derive(Deserialize)]
struct CategoryEntry {
    name: String,
    #[serde(default)]
    mandatory: bool,
    #[serde(default)]
    hint: String,
}

/// Per-phase ordered category lists. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTaxonomy {
    by_phase: [Vec<ActionCategory>; 3],
}

impl ActionTaxonomy {
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Malformed(e.to_string()))?;
        let mut by_phase: [Option<Vec<ActionCategory>>; 3] = [None, None, None];
        for entry in file.phases {
            let phase: Phase = entry
                .name
                .parse()
                .map_err(|_| TaxonomyError::UnknownPhase(entry.name.clone()))?;
            let slot = &mut by_phase[phase.index()];
            if slot.is_some() {
                return Err(TaxonomyError::DuplicatePhase(phase));
            }
            let mut cats: Vec<ActionCategory> = Vec::with_capacity(entry.categories.len());
            for c in entry.categories {
                let name = c.name.trim().to_string();
                if name.is_empty() || name.contains('.') {
                    return Err(TaxonomyError::BadCategoryName { phase, name });
                }
                if cats.iter().any(|x| x.name.eq_ignore_ascii_case(&name)) {
                    return Err(TaxonomyError::DuplicateCategory { phase, name });
                }
                cats.push(ActionCategory {
                    name,
                    phase,
                    mandatory: c.mandatory,
                    hint: c.hint.trim().to_string(),
                });
            }
            *slot = Some(cats);
        }
        let mut out: [Vec<ActionCategory>; 3] = Default::default();
        for phase in Phase::ALL {
            let cats = by_phase[phase.index()].take().unwrap_or_default();
            if cats.is_empty() {
                return Err(TaxonomyError::EmptyPhase(phase));
            }
            if !cats.iter().any(|c| c.mandatory) {
                return Err(TaxonomyError::NoMandatory(phase));
            }
            out[phase.index()] = cats;
        }
        Ok(Self { by_phase: out })
    }

    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_TAXONOMY_JSON).expect("bundled taxonomy is valid")
    }

    /// Categories of `phase` in file order. Never empty.
    pub fn categories_for(&self, phase: Phase) -> &[ActionCategory] {
        &self.by_phase[phase.index()]
    }

    pub fn category(&self, phase: Phase, name: &str) -> Option<&ActionCategory> {
        let name = name.trim();
        self.categories_for(phase)
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn mandatory(&self, phase: Phase) -> impl Iterator<Item = &ActionCategory> {
        self.categories_for(phase).iter().filter(|c| c.mandatory)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionCategory> {
        self.by_phase.iter().flatten()
    }

    /// Builds a validated action, resolving the category to its canonical
    /// spelling.
    pub fn action(
        &self,
        phase: Phase,
        category: &str,
        utterance: &str,
    ) -> Result<Action, ActionParseError> {
        let cat = self
            .category(phase, category)
            .ok_or_else(|| ActionParseError::UnknownCategory {
                phase,
                name: category.trim().to_string(),
            })?;
        let utterance = utterance.trim();
        if utterance.is_empty() {
            return Err(ActionParseError::MalformedAction(format!(
                "<{phase}>: {}.",
                cat.name
            )));
        }
        Ok(Action {
            phase,
            category: cat.name.clone(),
            utterance: utterance.to_string(),
        })
    }

    pub fn parse_action(&self, text: &str) -> Result<Action, ActionParseError> {
        parse_action(text, self)
    }
}

impl Default for ActionTaxonomy {
    fn default() -> Self {
        Self::bundled()
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<ActionTaxonomy, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    ActionTaxonomy::from_json(&text)
}

pub fn categories_for(taxonomy: &ActionTaxonomy, phase: Phase) -> &[ActionCategory] {
    taxonomy.categories_for(phase)
}

/// A doctor move: one element of the action set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub phase: Phase,
    pub category: String,
    pub utterance: String,
}

impl Action {
    pub fn render(&self) -> String {
        render_action(self)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>: {}. {}", self.phase, self.category, self.utterance)
    }
}

/// Parses `<Phase>: Category. utterance`.
///
/// Phase and category match case-insensitively; the returned action carries
/// the taxonomy's spelling. The utterance is everything after the period
/// that terminates the category, trimmed.
pub fn parse_action(text: &str, taxonomy: &ActionTaxonomy) -> Result<Action, ActionParseError> {
    let malformed = || ActionParseError::MalformedAction(text.to_string());
    let trimmed = text.trim();
    let rest = trimmed.strip_prefix('<').ok_or_else(malformed)?;
    let close = rest.find('>').ok_or_else(malformed)?;
    let phase_name = &rest[..close];
    let rest = rest[close + 1..]
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(malformed)?
        .trim_start();
    let phase: Phase = phase_name.parse()?;

    let dot = rest.find('.').ok_or_else(malformed)?;
    let category_name = rest[..dot].trim();
    if category_name.is_empty() {
        return Err(malformed());
    }
    let category = taxonomy.category(phase, category_name).ok_or_else(|| {
        ActionParseError::UnknownCategory {
            phase,
            name: category_name.to_string(),
        }
    })?;
    let utterance = rest[dot + 1..].trim();
    if utterance.is_empty() {
        return Err(malformed());
    }
    Ok(Action {
        phase,
        category: category.name.clone(),
        utterance: utterance.to_string(),
    })
}

pub fn render_action(action: &Action) -> String {
    action.to_string()
}
