//! Classification statistics: confusion matrices, per-class binarized
//! metrics, Cohen's kappa, and the exact binomial accuracy test with
//! Clopper-Pearson confidence intervals.
//!
//! Metrics with a zero denominator carry an explicit `None` marker,
//! never a silent 0. The confusion matrix is oriented rows = predicted,
//! columns = true.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::N_STATES;

/// 10x10 confusion counts; `counts[p][t]` is the number of rows
/// predicted as state `p+1` whose true state is `t+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_STATES]; N_STATES],
    pub n: u64,
}

/// Binarized one-vs-rest metrics for a single class. `None` marks an
/// undefined value (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub prevalence: f64,
    pub detection_prevalence: f64,
    pub balanced_accuracy: Option<f64>,
}

/// One-sided tail direction for the binomial test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// P(X >= successes): is the observed rate above the benchmark?
    Greater,
    /// P(X <= successes).
    Less,
}

/// Result of the exact binomial accuracy test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialResult {
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    /// The benchmark rate p0 the test was run against.
    pub benchmark: f64,
}

impl ConfusionMatrix {
    pub fn row_sum(&self, p: usize) -> u64 {
        self.counts[p].iter().sum()
    }

    pub fn col_sum(&self, t: usize) -> u64 {
        (0..N_STATES).map(|p| self.counts[p][t]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_STATES).map(|i| self.counts[i][i]).sum()
    }
}

/// Builds the confusion matrix from aligned truth/prediction slices.
pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::validation("truth and prediction lengths differ"));
    }
    let mut counts = [[0u64; N_STATES]; N_STATES];
    for (&t, &p) in truth.iter().zip(pred) {
        if !(1..=N_STATES as u8).contains(&t) || !(1..=N_STATES as u8).contains(&p) {
            return Err(Error::validation(format!(
                "state label out of range: true {t}, predicted {p}"
            )));
        }
        counts[p as usize - 1][t as usize - 1] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        n: truth.len() as u64,
    })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// One-vs-rest metrics for class `cls` (1-based). `beta` weights recall
/// in the F-score (beta = 1 gives the harmonic mean).
pub fn class_metrics(m: &ConfusionMatrix, cls: u8, beta: f64) -> Result<ClassMetrics> {
    if !(1..=N_STATES as u8).contains(&cls) {
        return Err(Error::validation(format!("class {cls} out of range")));
    }
    let c = cls as usize - 1;
    let a = m.counts[c][c];
    let b = m.row_sum(c) - a;
    let cc = m.col_sum(c) - a;
    let d = m.n - a - b - cc;

    let sensitivity = ratio(a, a + cc);
    let specificity = ratio(d, b + d);
    let precision = ratio(a, a + b);
    let recall = sensitivity;
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => {
            let den = beta * beta * p + r;
            if den == 0.0 {
                None
            } else {
                Some((1.0 + beta * beta) * p * r / den)
            }
        }
        _ => None,
    };
    let balanced_accuracy = match (sensitivity, specificity) {
        (Some(se), Some(sp)) => Some((se + sp) / 2.0),
        _ => None,
    };
    Ok(ClassMetrics {
        sensitivity,
        specificity,
        precision,
        recall,
        f1,
        prevalence: if m.n == 0 { 0.0 } else { (a + cc) as f64 / m.n as f64 },
        detection_prevalence: if m.n == 0 { 0.0 } else { (a + b) as f64 / m.n as f64 },
        balanced_accuracy,
    })
}

/// Fraction of rows on the diagonal.
pub fn overall_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    if m.n == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    Ok(m.trace() as f64 / m.n as f64)
}

/// Cohen's kappa with the multi-class marginal-product chance agreement
/// p_e = sum_k rowshare_k * colshare_k. Returns `None` when p_e = 1
/// (kappa undefined).
pub fn kappa(m: &ConfusionMatrix) -> Result<Option<f64>> {
    if m.n == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    let n = m.n as f64;
    let p_o = m.trace() as f64 / n;
    let p_e: f64 = (0..N_STATES)
        .map(|k| (m.row_sum(k) as f64 / n) * (m.col_sum(k) as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Ok(None);
    }
    Ok(Some((p_o - p_e) / (1.0 - p_e)))
}

/// Inverse of the regularized incomplete beta function in x, by
/// bisection. Monotone and bracketed, so convergence is unconditional.
fn beta_inv(a: f64, b: f64, p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact one-sided binomial test of `successes` out of `n` against rate
/// `p0`, with a two-sided Clopper-Pearson interval for the success rate
/// at `ci_level` (default 0.99 in callers).
///
/// The tail is evaluated through the regularized incomplete beta
/// identity P(X >= s) = I_{p0}(s, n-s+1), which is stable for n from
/// tens to millions.
pub fn binomial_test(
    successes: u64,
    n: u64,
    p0: f64,
    alternative: Alternative,
    ci_level: f64,
) -> Result<BinomialResult> {
    if n == 0 {
        return Err(Error::validation("binomial test needs n >= 1"));
    }
    if successes > n {
        return Err(Error::validation("successes exceed trials"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::validation(format!("benchmark rate {p0} outside (0, 1)")));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::validation("confidence level outside (0, 1)"));
    }
    let s = successes as f64;
    let nf = n as f64;
    let p_value = match alternative {
        Alternative::Greater => {
            if successes == 0 {
                1.0
            } else {
                beta_reg(s, nf - s + 1.0, p0)
            }
        }
        Alternative::Less => {
            if successes == n {
                1.0
            } else {
                beta_reg(nf - s, s + 1.0, 1.0 - p0)
            }
        }
    };
    let alpha = 1.0 - ci_level;
    let accuracy = s / nf;
    let ci_lo = if successes == 0 {
        0.0
    } else {
        beta_inv(s, nf - s + 1.0, alpha / 2.0)
    };
    let ci_hi = if successes == n {
        1.0
    } else {
        beta_inv(s + 1.0, nf - s, 1.0 - alpha / 2.0)
    };
    Ok(BinomialResult {
        accuracy,
        ci_lo: ci_lo.min(accuracy),
        ci_hi: ci_hi.max(accuracy),
        p_value,
        benchmark: p0,
    })
}
