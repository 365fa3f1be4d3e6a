use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage, UsageCounter};

/// One scripted reply. `matcher = None` matches any request; otherwise the
/// literal must occur in the request's last user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub matcher: Option<String>,
    pub reply: String,
}

impl FixtureEntry {
    pub fn any(reply: impl Into<String>) -> Self {
        Self {
            matcher: None,
            reply: reply.into(),
        }
    }

    pub fn matching(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Some(matcher.into()),
            reply: reply.into(),
        }
    }

    fn matches(&self, last_user: &str) -> bool {
        match &self.matcher {
            None => true,
            Some(m) => last_user.contains(m.as_str()),
        }
    }
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Vec<FixtureEntry>, BackendError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
}

/// Replays fixture entries in order. Each request consumes the earliest
/// remaining entry whose matcher occurs in the last user message.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Mutex<Vec<FixtureEntry>>,
    usage: UsageCounter,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        Self {
            entries: Mutex::new(entries),
            usage: UsageCounter::default(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.entries.lock().expect("fixture lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let last_user = request.last_user_message().unwrap_or("");
        let reply = {
            let mut entries = self.entries.lock().expect("fixture lock");
            if entries.is_empty() {
                return Err(BackendError::FixtureExhausted);
            }
            let idx = entries
                .iter()
                .position(|e| e.matches(last_user))
                .ok_or_else(|| {
                    BackendError::FixtureMismatch(last_user.chars().take(80).collect())
                })?;
            entries.remove(idx).reply
        };
        let response = ChatResponse {
            content: reply,
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_ms: 0,
        };
        self.usage.record(&response);
        Ok(response)
    }

    fn usage_totals(&self) -> Usage {
        self.usage.snapshot()
    }
}
