//! State-transition matrices: empirical transition probabilities, mean
//! returns per transition, and per-transition prediction accuracy.
//!
//! A transition pair is a stock observed in two consecutive calendar
//! months with a state label in both; stocks with a gap contribute no
//! pair for the missing month. Cells with zero support are undefined
//! and carry NaN.

use crate::error::{Error, Result};
use crate::learners::PredictionSet;
use crate::panel::Panel;
use crate::N_STATES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Probability,
    MeanReturn,
    Accuracy,
}

/// 10x10 grid over (state at t, state at t+1) with per-cell pair counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub kind: MatrixKind,
    /// values[s-1][s'-1]; NaN marks zero-support (undefined) cells.
    pub values: [[f64; N_STATES]; N_STATES],
    pub support: [[u64; N_STATES]; N_STATES],
}

impl TransitionMatrix {
    pub fn is_defined(&self, from: usize, to: usize) -> bool {
        self.support[from][to] > 0
    }

    /// Pair count of row `from` (0-based), i.e. month-t rows in that
    /// state with a month-t+1 observation.
    pub fn row_support(&self, from: usize) -> u64 {
        self.support[from].iter().sum()
    }
}

/// Labeled consecutive pairs as (state_t, state_t1, row index at t+1).
fn labeled_pairs(panel: &Panel) -> Vec<(usize, usize, usize)> {
    panel
        .consecutive_pairs()
        .into_iter()
        .filter_map(|(i, j)| {
            let s = panel.rows()[i].state?;
            let s1 = panel.rows()[j].state?;
            Some((s as usize - 1, s1 as usize - 1, j))
        })
        .collect()
}

/// Empirical transition probabilities: values[s][s'] is the share of
/// state-s months followed by state s'. Rows with support sum to 1.
pub fn transition_matrix(panel: &Panel) -> Result<TransitionMatrix> {
    let pairs = labeled_pairs(panel);
    if pairs.is_empty() {
        return Err(Error::validation(
            "no labeled consecutive-month pairs in panel",
        ));
    }
    let mut support = [[0u64; N_STATES]; N_STATES];
    for &(s, s1, _) in &pairs {
        support[s][s1] += 1;
    }
    let mut values = [[f64::NAN; N_STATES]; N_STATES];
    for s in 0..N_STATES {
        let total: u64 = support[s].iter().sum();
        if total == 0 {
            continue;
        }
        for s1 in 0..N_STATES {
            values[s][s1] = support[s][s1] as f64 / total as f64;
        }
    }
    Ok(TransitionMatrix {
        kind: MatrixKind::Probability,
        values,
        support,
    })
}

/// Mean month-t+1 return per transition cell; zero-support cells NaN.
pub fn transition_mean_returns(panel: &Panel) -> Result<TransitionMatrix> {
    let pairs = labeled_pairs(panel);
    if pairs.is_empty() {
        return Err(Error::validation(
            "no labeled consecutive-month pairs in panel",
        ));
    }
    let mut support = [[0u64; N_STATES]; N_STATES];
    let mut sums = [[0.0f64; N_STATES]; N_STATES];
    for &(s, s1, j) in &pairs {
        support[s][s1] += 1;
        sums[s][s1] += panel.rows()[j].ret;
    }
    let mut values = [[f64::NAN; N_STATES]; N_STATES];
    for s in 0..N_STATES {
        for s1 in 0..N_STATES {
            if support[s][s1] > 0 {
                values[s][s1] = sums[s][s1] / support[s][s1] as f64;
            }
        }
    }
    Ok(TransitionMatrix {
        kind: MatrixKind::MeanReturn,
        values,
        support,
    })
}

/// Fraction of (s -> s') pairs whose month-t+1 prediction argmax equals
/// the realized s'. Pairs without a prediction for the t+1 row are
/// skipped out of the cell's support.
pub fn per_transition_accuracy(
    panel: &Panel,
    preds: &PredictionSet,
) -> Result<TransitionMatrix> {
    let pairs = labeled_pairs(panel);
    if pairs.is_empty() {
        return Err(Error::validation(
            "no labeled consecutive-month pairs in panel",
        ));
    }
    let mut support = [[0u64; N_STATES]; N_STATES];
    let mut hits = [[0u64; N_STATES]; N_STATES];
    for &(s, s1, j) in &pairs {
        let row = &panel.rows()[j];
        let Some(pred) = preds.get(&row.stock_id, row.month) else {
            continue;
        };
        support[s][s1] += 1;
        if pred.argmax_state as usize - 1 == s1 {
            hits[s][s1] += 1;
        }
    }
    let mut values = [[f64::NAN; N_STATES]; N_STATES];
    for s in 0..N_STATES {
        for s1 in 0..N_STATES {
            if support[s][s1] > 0 {
                values[s][s1] = hits[s][s1] as f64 / support[s][s1] as f64;
            }
        }
    }
    Ok(TransitionMatrix {
        kind: MatrixKind::Accuracy,
        values,
        support,
    })
}

/// Support-weighted average of the defined accuracy cells — equals the
/// plain prediction accuracy over the covered pairs.
pub fn overall_accuracy(acc: &TransitionMatrix) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0u64;
    for s in 0..N_STATES {
        for s1 in 0..N_STATES {
            if acc.support[s][s1] > 0 {
                num += acc.values[s][s1] * acc.support[s][s1] as f64;
                den += acc.support[s][s1];
            }
        }
    }
    if den == 0 {
        None
    } else {
        Some(num / den as f64)
    }
}
