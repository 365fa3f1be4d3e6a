#![allow(dead_code)]

use std::path::{Path, PathBuf};

use consult_core::harness::{BackendMode, RunConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus() -> PathBuf {
    fixtures().join("corpus.jsonl")
}

/// Scripted run over the synthetic corpus with the per-case doctor scripts.
pub fn scripted_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::new(corpus(), out);
    c.backend.mode = BackendMode::Scripted;
    c.backend.fixtures = Some(fixtures().join("doctor"));
    c.concurrency = 2;
    c
}

/// Transcript bytes with the timestamp fields blanked.
pub fn without_timestamps(text: &str) -> String {
    text.lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("json line");
            for key in ["started_at", "finished_at"] {
                if let Some(slot) = v.get_mut(key) {
                    *slot = serde_json::Value::Null;
                }
            }
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn read_stripped(path: &Path) -> String {
    without_timestamps(&std::fs::read_to_string(path).expect("readable transcript"))
}
