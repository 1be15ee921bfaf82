//! Random forest of depth-limited Gini trees over bootstrap samples,
//! predicting by averaging leaf class-frequency vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_class_tree, ClassTree};
use super::{Dataset, TrainReport, TreeSpec};
use crate::error::Result;
use crate::N_STATES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<ClassTree>,
}

impl ForestModel {
    /// Class probabilities for one feature row: mean of the per-tree
    /// leaf frequency vectors, renormalized to sum to 1.
    pub fn predict_row(&self, row: &[f64]) -> [f64; N_STATES] {
        let mut probs = [0.0f64; N_STATES];
        for tree in &self.trees {
            let leaf = tree.leaf_for(row);
            for (p, &l) in probs.iter_mut().zip(leaf) {
                *p += l;
            }
        }
        let sum: f64 = probs.iter().sum();
        if sum > 0.0 {
            for p in &mut probs {
                *p /= sum;
            }
        } else {
            probs = [1.0 / N_STATES as f64; N_STATES];
        }
        probs
    }
}

pub(crate) fn train_forest(spec: &TreeSpec, data: &Dataset) -> Result<(ForestModel, TrainReport)> {
    spec.validate()?;
    let n_rows = data.n_rows;
    let mut seed_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xa076_1d64_78bd_642f);
    let mut trees = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_rng.gen::<u64>());
        // Bootstrap: n draws with replacement (scaled by the row rate).
        let draws = ((spec.row_sample_rate * n_rows as f64).round() as usize).clamp(1, n_rows);
        let rows: Vec<u32> = (0..draws)
            .map(|_| rng.gen_range(0..n_rows) as u32)
            .collect();
        trees.push(fit_class_tree(
            &data.x,
            data.n_features,
            &data.y,
            &rows,
            spec.max_depth,
            spec.col_sample_rate,
            &mut rng,
        ));
    }
    let model = ForestModel {
        n_features: data.n_features,
        trees,
    };
    // Forest trees are independent, so the loss trace is the full
    // ensemble's training cross-entropy as a single entry.
    let mut total = 0.0;
    for row in 0..n_rows {
        let probs = model.predict_row(data.row(row));
        let prob = probs[data.y[row] as usize].max(super::PROB_CLIP);
        total -= prob.log2();
    }
    let loss = total / n_rows as f64;
    let rounds_run = spec.n_trees;
    Ok((
        model,
        TrainReport {
            loss_by_round: vec![loss],
            stopped_early: false,
            rounds_run,
        },
    ))
}
