//! Plain-text prompt templates with `{name}` placeholders.
//!
//! `{{` and `}}` produce literal braces. Every template declares the set of
//! placeholders it may use; unknown names are rejected when the template is
//! loaded, not when it is rendered.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template}: missing value for {{{name}}}")]
    MissingValue { template: String, name: String },
    #[error("failed to read template {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str, allowed: &[&str]) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut buf = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    buf.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    buf.push('}');
                }
                '{' => {
                    let mut slot = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, ch)) if ch.is_ascii_alphanumeric() || ch == '_' => slot.push(ch),
                            _ => {
                                return Err(PromptError::Unterminated {
                                    template: name.into(),
                                    offset: i,
                                })
                            }
                        }
                    }
                    if !allowed.contains(&slot.as_str()) {
                        return Err(PromptError::UnknownPlaceholder {
                            template: name.into(),
                            name: slot,
                        });
                    }
                    if !buf.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut buf)));
                    }
                    pieces.push(Piece::Slot(slot));
                }
                _ => buf.push(c),
            }
        }
        if !buf.is_empty() {
            pieces.push(Piece::Text(buf));
        }
        Ok(Self {
            name: name.into(),
            pieces,
        })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == s)
                        .ok_or_else(|| PromptError::MissingValue {
                            template: self.name.clone(),
                            name: s.clone(),
                        })?;
                    out.push_str(v.1);
                }
            }
        }
        Ok(out)
    }
}

macro_rules! prompt_set {
    ($( $field:ident => $file:literal [$($slot:literal),*] ),* $(,)?) => {
        /// All templates used by the agents and the evaluator.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct PromptSet {
            $( pub $field: PromptTemplate, )*
        }

        impl PromptSet {
            pub fn bundled() -> Self {
                Self {
                    $( $field: PromptTemplate::parse(
                        $file,
                        include_str!(concat!("../data/prompts/", $file)),
                        &[$($slot),*],
                    ).expect("bundled template is valid"), )*
                }
            }

            /// Bundled templates, overridden by any same-named file in `dir`.
            pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
                let dir = dir.as_ref();
                let mut set = Self::bundled();
                $(
                    let path = dir.join($file);
                    if path.exists() {
                        let text = std::fs::read_to_string(&path)
                            .map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
                        set.$field = PromptTemplate::parse($file, &text, &[$($slot),*])?;
                    }
                )*
                Ok(set)
            }
        }
    };
}

prompt_set! {
    doctor => "doctor.txt" ["memory", "phase", "subgoal", "action_lists", "grammar", "goal_unmet"],
    doctor_retry => "doctor_retry.txt" ["error", "grammar"],
    report => "report.txt" ["memory", "headings"],
    report_retry => "report_retry.txt" ["missing", "headings"],
    evaluator => "evaluator.txt" ["record", "report", "grammar"],
    evaluator_retry => "evaluator_retry.txt" ["error", "grammar"],
    patient => "patient.txt" ["profile", "facts", "question"],
    extract => "extract.txt" ["text"],
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}
