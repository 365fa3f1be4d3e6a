use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::ReportSection;
use crate::eval::FiveScores;

/// Weights for the terminal reward; the default is 1/6 for each of the
/// five aspects and for F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub score_weights: BTreeMap<ReportSection, f64>,
    pub f1_weight: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::uniform(1.0 / 6.0)
    }
}

impl RewardWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            score_weights: ReportSection::ALL.into_iter().map(|s| (s, w)).collect(),
            f1_weight: w,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        let complete = ReportSection::ALL
            .iter()
            .all(|s| self.score_weights.get(s).copied().is_some_and(ok));
        if complete && ok(self.f1_weight) {
            Ok(())
        } else {
            Err(HarnessError::InvalidWeights)
        }
    }

    fn weight(&self, s: ReportSection) -> f64 {
        self.score_weights.get(&s).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReward {
    pub value: f64,
    pub weights: RewardWeights,
}

/// `Σ wᵢ·(aspectᵢ/100) + w_f1·f1`, with `f1` as a fraction.
pub fn terminal_reward(scores: &FiveScores, f1: f64, weights: &RewardWeights) -> TerminalReward {
    let value = ReportSection::ALL
        .into_iter()
        .map(|s| weights.weight(s) * f64::from(scores.get(s)) / 100.0)
        .sum::<f64>()
        + weights.f1_weight * f1;
    TerminalReward {
        value,
        weights: weights.clone(),
    }
}
