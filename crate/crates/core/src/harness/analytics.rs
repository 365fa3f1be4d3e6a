use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::MetricsDocument;
use super::transcript::{load_transcripts, LoadedTranscript, TerminationCause};
use super::HarnessError;
use crate::agents::ReportSection;
use crate::eval::{score_histogram, turn_histogram, ScoreBucket, TurnHistogram};

pub const TURN_UNIT_NOTE: &str =
    "a turn is one applied doctor action; refused (goal_unmet) attempts are not counted";

const BAR_WIDTH: usize = 40;

pub type ScoreHistograms = BTreeMap<ReportSection, Vec<ScoreBucket>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub turn_unit: String,
    /// Finished transcripts; failed runs are counted separately.
    pub transcripts: usize,
    pub failed: usize,
    pub turns: TurnHistogram,
    pub goal_unmet_total: usize,
    pub transcripts_with_goal_unmet: usize,
    pub termination: BTreeMap<String, usize>,
    pub score_histograms: Option<ScoreHistograms>,
    pub notes: Vec<String>,
}

pub fn stats(dir: &Path, metrics: Option<&Path>) -> Result<StatsDocument, HarnessError> {
    let loaded = load_transcripts(dir)?;
    let mut finished = Vec::new();
    let mut failed = 0;
    for (_, t) in loaded {
        match t {
            LoadedTranscript::Complete(t) => finished.push(t),
            LoadedTranscript::Failed(_) => failed += 1,
        }
    }
    let mut termination = BTreeMap::new();
    for t in &finished {
        let key = match t.termination {
            TerminationCause::FinalDiagnosis => "final_diagnosis",
            TerminationCause::TurnCap => "turn_cap",
        };
        *termination.entry(key.to_string()).or_insert(0) += 1;
    }
    let mut notes = Vec::new();
    if failed > 0 {
        notes.push(format!("{failed} failed run(s) excluded from the turn histogram"));
    }
    let score_histograms = match metrics {
        None => {
            notes.push("no metrics document given; score histograms omitted".into());
            None
        }
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let doc: MetricsDocument = serde_json::from_str(&text).map_err(|e| HarnessError::Transcript {
                path: path.to_path_buf(),
                line: e.line(),
                message: format!("not a metrics document: {e}"),
            })?;
            Some(
                ReportSection::ALL
                    .into_iter()
                    .map(|s| {
                        let values = doc.per_case.iter().filter_map(|m| m.scores).map(|x| x.get(s));
                        (s, score_histogram(values))
                    })
                    .collect(),
            )
        }
    };
    Ok(StatsDocument {
        turn_unit: TURN_UNIT_NOTE.into(),
        transcripts: finished.len(),
        failed,
        turns: turn_histogram(finished.iter().map(|t| t.turn_count)),
        goal_unmet_total: finished.iter().map(|t| t.goal_unmet_count()).sum(),
        transcripts_with_goal_unmet: finished.iter().filter(|t| t.goal_unmet_count() > 0).count(),
        termination,
        score_histograms,
        notes,
    })
}

fn bars(out: &mut String, rows: &[(String, usize)]) {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let max = rows.iter().map(|(_, c)| *c).max().unwrap_or(0).max(1);
    let count_w = max.to_string().len();
    for (label, count) in rows {
        let len = (count * BAR_WIDTH).div_ceil(max);
        let _ = writeln!(
            out,
            "{label:>label_w$} | {:<BAR_WIDTH$} {count:>count_w$}",
            "#".repeat(len)
        );
    }
}

/// Plain-text rendering with aligned bars.
pub fn render_stats_text(doc: &StatsDocument) -> String {
    let mut out = String::new();
    let h = &doc.turns;
    let mode = h.mode.map_or("-".to_string(), |m| m.to_string());
    let mean = h.mean.map_or("-".to_string(), |m| format!("{m:.2}"));
    let var = h.variance.map_or("-".to_string(), |v| format!("{v:.2}"));
    let _ = writeln!(
        out,
        "Interaction turns (n={}, mode {mode}, mean {mean}, variance {var})",
        h.total
    );
    let _ = writeln!(out, "  {}", doc.turn_unit);
    let rows: Vec<(String, usize)> = h.counts.iter().map(|(t, c)| (t.to_string(), *c)).collect();
    bars(&mut out, &rows);
    let _ = writeln!(
        out,
        "goal_unmet refusals: {} in {} transcript(s)",
        doc.goal_unmet_total, doc.transcripts_with_goal_unmet
    );
    for (cause, n) in &doc.termination {
        let _ = writeln!(out, "termination {cause}: {n}");
    }
    if let Some(hists) = &doc.score_histograms {
        for (section, buckets) in hists {
            let _ = writeln!(out, "\n{} scores", section.heading());
            let rows: Vec<(String, usize)> = buckets
                .iter()
                .map(|b| (format!("{}-{}", b.low, b.high), b.count))
                .collect();
            bars(&mut out, &rows);
        }
    }
    for note in &doc.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_aligned() {
        let mut out = String::new();
        bars(&mut out, &[("8".into(), 2), ("10".into(), 1)]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0].find('|'), lines[1].find('|'));
        assert_eq!(lines[0].len(), lines[1].len());
        assert!(lines[0].contains(&"#".repeat(BAR_WIDTH)));
        assert!(lines[1].contains(&"#".repeat(BAR_WIDTH / 2)));
    }
}
