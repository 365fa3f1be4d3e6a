use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, FiveScores};
use crate::agents::ReportSection;

pub const CI95_Z: f64 = 1.96;

/// Mean with standard error of the mean (sample sd / sqrt(n)) and the
/// normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectStats {
    pub mean: f64,
    pub stderr: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n: usize,
}

impl AspectStats {
    pub fn from_values(values: &[f64]) -> Result<Self, EvalError> {
        let n = values.len();
        if n == 0 {
            return Err(EvalError::EmptyInput);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Ok(Self {
            mean,
            stderr,
            ci95_low: mean - CI95_Z * stderr,
            ci95_high: mean + CI95_Z * stderr,
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAggregate {
    /// Always "stderr": the ± column is the standard error of the mean.
    pub dispersion: String,
    pub aspects: BTreeMap<ReportSection, AspectStats>,
}

impl ScoreAggregate {
    pub fn get(&self, s: ReportSection) -> &AspectStats {
        &self.aspects[&s]
    }
}

pub fn aggregate_scores(scores: &[FiveScores]) -> Result<ScoreAggregate, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut aspects = BTreeMap::new();
    for s in ReportSection::ALL {
        let values: Vec<f64> = scores.iter().map(|x| f64::from(x.get(s))).collect();
        aspects.insert(s, AspectStats::from_values(&values)?);
    }
    Ok(ScoreAggregate {
        dispersion: "stderr".into(),
        aspects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnHistogram {
    pub counts: BTreeMap<u32, usize>,
    pub total: usize,
    /// Most frequent turn count; ties go to the smaller count.
    pub mode: Option<u32>,
    pub mean: Option<f64>,
    /// Population variance.
    pub variance: Option<f64>,
}

pub fn turn_histogram(turns: impl IntoIterator<Item = u32>) -> TurnHistogram {
    let mut counts = BTreeMap::new();
    let mut all = Vec::new();
    for t in turns {
        *counts.entry(t).or_insert(0usize) += 1;
        all.push(f64::from(t));
    }
    let total = all.len();
    let mode = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(t, _)| *t);
    let (mean, variance) = if total == 0 {
        (None, None)
    } else {
        let m = all.iter().sum::<f64>() / total as f64;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / total as f64;
        (Some(m), Some(v))
    };
    TurnHistogram {
        counts,
        total,
        mode,
        mean,
        variance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBucket {
    pub low: u8,
    pub high: u8,
    pub count: usize,
}

/// Ten buckets of width 10; the last one, 90-100, also holds 100.
pub fn score_histogram(values: impl IntoIterator<Item = u8>) -> Vec<ScoreBucket> {
    let mut buckets: Vec<ScoreBucket> = (0..10u8)
        .map(|i| ScoreBucket {
            low: i * 10,
            high: if i == 9 { 100 } else { i * 10 + 9 },
            count: 0,
        })
        .collect();
    for v in values {
        let i = usize::from(v.min(100) / 10).min(9);
        buckets[i].count += 1;
    }
    buckets
}
