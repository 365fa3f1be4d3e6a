use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agents::{PatientMode, PatientPolicy};
use crate::backend::{
    load_fixture, BackendError, ChatBackend, FixtureEntry, HttpBackend, ModelSettings, ScriptedBackend,
};
use crate::case::CaseRecord;
use crate::fsm::{GatePolicy, DEFAULT_FORCED_RESERVE, DEFAULT_MAX_TURNS, MIN_MAX_TURNS};
use crate::prompt::PromptSet;
use crate::taxonomy::{load_taxonomy, ActionTaxonomy, DEFAULT_TAXONOMY_JSON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Http,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub mode: BackendMode,
    /// HTTP mode; falls back to `CONSULT_BASE_URL`.
    pub base_url: Option<String>,
    /// Scripted mode: a fixture file shared by every case (each case gets
    /// its own copy), or a directory of `{case_id}.json` files.
    pub fixtures: Option<PathBuf>,
    pub model: ModelSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            mode: BackendMode::Scripted,
            base_url: None,
            fixtures: None,
            model: ModelSettings::default(),
        }
    }
}

/// Hands each consultation (or evaluated case) its chat backend.
pub trait BackendProvider: Send + Sync {
    fn backend_for(&self, case: &CaseRecord) -> Result<Arc<dyn ChatBackend>, BackendError>;
}

/// One provider shared by every case.
pub struct SharedBackend(pub Arc<dyn ChatBackend>);

impl BackendProvider for SharedBackend {
    fn backend_for(&self, _case: &CaseRecord) -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(self.0.clone())
    }
}

/// Fresh scripted backend per case.
pub enum ScriptedFixtures {
    Shared(Vec<FixtureEntry>),
    PerCase(PathBuf),
}

impl ScriptedFixtures {
    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        if path.is_dir() {
            Ok(Self::PerCase(path.to_path_buf()))
        } else {
            Ok(Self::Shared(load_fixture(path)?))
        }
    }
}

impl BackendProvider for ScriptedFixtures {
    fn backend_for(&self, case: &CaseRecord) -> Result<Arc<dyn ChatBackend>, BackendError> {
        let entries = match self {
            Self::Shared(entries) => entries.clone(),
            Self::PerCase(dir) => {
                let path = dir.join(format!("{}.json", file_stem(&case.case_id)));
                if !path.exists() {
                    return Err(BackendError::Config(format!(
                        "no fixture for case {} at {}",
                        case.case_id,
                        path.display()
                    )));
                }
                load_fixture(path)?
            }
        };
        Ok(Arc::new(ScriptedBackend::new(entries)))
    }
}

impl BackendSettings {
    pub fn provider(&self) -> Result<Box<dyn BackendProvider>, BackendError> {
        match self.mode {
            BackendMode::Http => {
                let backend = match &self.base_url {
                    Some(url) => HttpBackend::new(
                        url,
                        std::env::var(crate::backend::API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                    )?,
                    None => HttpBackend::from_env()?,
                };
                Ok(Box::new(SharedBackend(Arc::new(backend))))
            }
            BackendMode::Scripted => {
                let path = self.fixtures.as_ref().ok_or_else(|| {
                    BackendError::Config("scripted backend needs a fixture file or directory".into())
                })?;
                Ok(Box::new(ScriptedFixtures::from_path(path)?))
            }
        }
    }
}

/// File name used for a case's transcript and per-case fixture.
pub fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// `None` uses the bundled taxonomy.
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    #[serde(default)]
    pub patient: PatientPolicy,
    #[serde(default)]
    pub patient_mode: PatientMode,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub out_dir: PathBuf,
    #[serde(default = "default_true")]
    pub gating: bool,
    #[serde(default = "default_reserve")]
    pub forced_reserve: u32,
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

fn default_concurrency() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_reserve() -> u32 {
    DEFAULT_FORCED_RESERVE
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            taxonomy: None,
            prompts: None,
            backend: BackendSettings::default(),
            max_turns: DEFAULT_MAX_TURNS,
            patient: PatientPolicy::default(),
            patient_mode: PatientMode::Record,
            concurrency: 1,
            out_dir: out_dir.into(),
            gating: true,
            forced_reserve: DEFAULT_FORCED_RESERVE,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.concurrency < 1 {
            return Err(HarnessError::Config("concurrency must be at least 1".into()));
        }
        if self.max_turns < MIN_MAX_TURNS {
            return Err(HarnessError::Config(format!(
                "max_turns must be at least {MIN_MAX_TURNS}"
            )));
        }
        self.patient
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn gate(&self) -> GatePolicy {
        GatePolicy {
            enabled: self.gating,
            forced_reserve: self.forced_reserve,
        }
    }

    fn taxonomy_text(&self) -> Result<String, HarnessError> {
        match &self.taxonomy {
            None => Ok(DEFAULT_TAXONOMY_JSON.to_string()),
            Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e)),
        }
    }

    pub fn load_taxonomy(&self) -> Result<ActionTaxonomy, HarnessError> {
        match &self.taxonomy {
            None => Ok(ActionTaxonomy::bundled()),
            Some(p) => Ok(load_taxonomy(p)?),
        }
    }

    pub fn load_prompts(&self) -> Result<PromptSet, HarnessError> {
        match &self.prompts {
            None => Ok(PromptSet::bundled()),
            Some(dir) => Ok(PromptSet::from_dir(dir)?),
        }
    }

    /// Hash of every setting that can change a transcript's content. The
    /// output directory and concurrency are excluded; the taxonomy is hashed
    /// by content.
    pub fn fingerprint(&self) -> Result<String, HarnessError> {
        #[derive(Serialize)]
        struct View<'a> {
            corpus: &'a Path,
            taxonomy_sha256: String,
            prompts: &'a Option<PathBuf>,
            backend_mode: BackendMode,
            model: &'a ModelSettings,
            max_turns: u32,
            patient: &'a PatientPolicy,
            patient_mode: PatientMode,
            gating: bool,
            forced_reserve: u32,
        }
        let view = View {
            corpus: &self.corpus,
            taxonomy_sha256: format!("{:x}", Sha256::digest(self.taxonomy_text()?.as_bytes())),
            prompts: &self.prompts,
            backend_mode: self.backend.mode,
            model: &self.backend.model,
            max_turns: self.max_turns,
            patient: &self.patient,
            patient_mode: self.patient_mode,
            gating: self.gating,
            forced_reserve: self.forced_reserve,
        };
        let bytes = serde_json::to_vec(&view).expect("config view serializes");
        Ok(format!("{:x}", Sha256::digest(&bytes))[..16].to_string())
    }
}
