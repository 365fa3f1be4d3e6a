use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub case_id: String,
    pub predicted_codes: BTreeSet<String>,
    pub truth_codes: BTreeSet<String>,
    pub intersection_size: usize,
}

impl MatchResult {
    pub fn new(
        case_id: impl Into<String>,
        predicted_codes: BTreeSet<String>,
        truth_codes: BTreeSet<String>,
    ) -> Self {
        let intersection_size = predicted_codes.intersection(&truth_codes).count();
        Self {
            case_id: case_id.into(),
            predicted_codes,
            truth_codes,
            intersection_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub precision: f64,
    pub recall: f64,
}

/// Set-level precision and recall. Precision of an empty prediction is 0.
pub fn set_overlap_metrics(
    predicted: &BTreeSet<String>,
    truth: &BTreeSet<String>,
) -> Result<Overlap, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth(None));
    }
    let hit = predicted.intersection(truth).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        hit / predicted.len() as f64
    };
    Ok(Overlap {
        precision,
        recall: hit / truth.len() as f64,
    })
}

/// Harmonic mean; works on any common scale (fractions or percentages).
pub fn f1(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusMatchMetrics {
    /// Pooled counts over all cases; F1 is the harmonic mean of pooled P and R.
    pub micro: Prf,
    /// Unweighted means of per-case values.
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub n: usize,
}

/// Nonnegative fraction kept in lowest terms; `None` on overflow.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: u128,
    den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    const ZERO: Ratio = Ratio { num: 0, den: 1 };

    fn new(num: usize, den: usize) -> Ratio {
        let (num, den) = (num as u128, den as u128);
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    fn add(self, o: Ratio) -> Option<Ratio> {
        let g = gcd(self.den, o.den);
        let den = (self.den / g).checked_mul(o.den)?;
        let num = self
            .num
            .checked_mul(o.den / g)?
            .checked_add(o.num.checked_mul(self.den / g)?)?;
        let r = gcd(num, den).max(1);
        Some(Ratio { num: num / r, den: den / r })
    }

    fn div(self, n: usize) -> Option<Ratio> {
        let n = n as u128;
        let g = gcd(self.num, n).max(1);
        Some(Ratio {
            num: self.num / g,
            den: self.den.checked_mul(n / g)?,
        })
    }

    /// Correctly rounded when both terms are exactly representable.
    fn to_f64(self) -> Option<f64> {
        const EXACT: u128 = 1 << f64::MANTISSA_DIGITS;
        (self.num <= EXACT && self.den <= EXACT).then(|| self.num as f64 / self.den as f64)
    }
}

/// Macro means as exact fractions, rounded once.
fn exact_macro(results: &[MatchResult]) -> Option<(f64, f64, f64)> {
    let (mut sp, mut sr, mut sf) = (Ratio::ZERO, Ratio::ZERO, Ratio::ZERO);
    for r in results {
        let (p, t) = (r.predicted_codes.len(), r.truth_codes.len());
        if p > 0 {
            sp = sp.add(Ratio::new(r.intersection_size, p))?;
        }
        sr = sr.add(Ratio::new(r.intersection_size, t))?;
        sf = sf.add(Ratio::new(2 * r.intersection_size, p + t))?;
    }
    let n = results.len();
    Some((sp.div(n)?.to_f64()?, sr.div(n)?.to_f64()?, sf.div(n)?.to_f64()?))
}

/// Micro and macro precision, recall and F1. Every value is the exact
/// fraction rounded once, falling back to floating summation only when the exact
/// fractions outgrow 128 bits.
pub fn corpus_metrics(results: &[MatchResult]) -> Result<CorpusMatchMetrics, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut hit, mut pred, mut truth) = (0usize, 0usize, 0usize);
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for r in results {
        let o = set_overlap_metrics(&r.predicted_codes, &r.truth_codes)
            .map_err(|_| EvalError::EmptyTruth(Some(r.case_id.clone())))?;
        hit += r.intersection_size;
        pred += r.predicted_codes.len();
        truth += r.truth_codes.len();
        sp += o.precision;
        sr += o.recall;
        sf += f1(o.precision, o.recall);
    }
    let micro_p = if pred == 0 { 0.0 } else { hit as f64 / pred as f64 };
    let micro_r = hit as f64 / truth as f64;
    // 2h / (|P| + |T|) equals the harmonic mean of pooled P and R
    let micro_f1 = if hit == 0 {
        0.0
    } else {
        Ratio::new(2 * hit, pred + truth).to_f64().unwrap_or_else(|| f1(micro_p, micro_r))
    };
    let n = results.len() as f64;
    let (macro_p, macro_r, macro_f1) = exact_macro(results).unwrap_or((sp / n, sr / n, sf / n));
    Ok(CorpusMatchMetrics {
        micro: Prf {
            precision: micro_p,
            recall: micro_r,
            f1: micro_f1,
        },
        macro_: Prf {
            precision: macro_p,
            recall: macro_r,
            f1: macro_f1,
        },
        n: results.len(),
    })
}
