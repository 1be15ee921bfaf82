//! Gradient-boosted trees with a softmax objective, one regression tree
//! per class per round, and optional per-tree dropout.
//!
//! Each round fits the ten class trees to the current gradient
//! (softmax probability minus one-hot truth) and hessian (p(1-p)),
//! using exact greedy splits. With dropout, every prior tree is dropped
//! independently with the configured probability before gradients are
//! computed; within each class's additive score, a new tree joining k
//! dropped ones enters at learning_rate/(k+1) and the dropped trees are
//! rescaled by k/(k+1), keeping the expected total contribution level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_reg_tree, RegTree, SortedFeatures};
use super::{early_stop, Dataset, TrainReport, TreeKind, TreeSpec, PROB_CLIP};
use crate::error::{Error, Result};
use crate::N_STATES;

/// One boosting round: a tree and weight per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub trees: Vec<RegTree>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub n_features: usize,
    pub rounds: Vec<BoostRound>,
}

impl GbmModel {
    /// Class probabilities for one feature row: softmax over the summed
    /// weighted tree scores.
    pub fn predict_row(&self, row: &[f64]) -> [f64; N_STATES] {
        let mut logits = [0.0f64; N_STATES];
        for round in &self.rounds {
            for (k, tree) in round.trees.iter().enumerate() {
                logits[k] += round.weights[k] * tree.leaf_for(row);
            }
        }
        softmax(&logits)
    }
}

fn softmax(logits: &[f64; N_STATES]) -> [f64; N_STATES] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0f64; N_STATES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Adds `weight` times one tree's score into column `cls` of the
/// n x 10 score matrix `f`.
fn accumulate_tree(tree: &RegTree, weight: f64, cls: usize, x: &[f64], n_features: usize, f: &mut [f64]) {
    let n_rows = f.len() / N_STATES;
    for row in 0..n_rows {
        let feats = &x[row * n_features..(row + 1) * n_features];
        f[row * N_STATES + cls] += weight * tree.leaf_for(feats);
    }
}

/// Row-wise softmax of an n x 10 score matrix into `p`.
fn softmax_rows(f: &[f64], p: &mut [f64]) {
    for (frow, prow) in f.chunks_exact(N_STATES).zip(p.chunks_exact_mut(N_STATES)) {
        let mut logits = [0.0f64; N_STATES];
        logits.copy_from_slice(frow);
        prow.copy_from_slice(&softmax(&logits));
    }
}

/// Mean cross-entropy in bits of the probabilities in `p` against labels.
fn mean_ce_bits(p: &[f64], y: &[u8]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for (row, &cls) in y.iter().enumerate() {
        let prob = p[row * N_STATES + cls as usize].max(PROB_CLIP);
        total -= prob.log2();
    }
    total / n as f64
}

pub(crate) fn train_boosted(spec: &TreeSpec, data: &Dataset) -> Result<(GbmModel, TrainReport)> {
    spec.validate()?;
    let n_rows = data.n_rows;
    let n_features = data.n_features;
    let x = &data.x;
    let y = &data.y;
    let sorted = SortedFeatures::build(x, n_rows, n_features);

    let mut row_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut col_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1405_7b7e_f767_814f);

    // Running scores, one 10-vector per row, all zero at round 0
    // (uniform probabilities).
    let mut f = vec![0.0f64; n_rows * N_STATES];
    let mut p = vec![0.0f64; n_rows * N_STATES];
    let mut g = vec![0.0f64; n_rows];
    let mut h = vec![0.0f64; n_rows];
    let mut node_of = vec![0i32; n_rows];
    let mut row_pool: Vec<u32> = (0..n_rows as u32).collect();

    let sampled_rows = if spec.row_sample_rate < 1.0 {
        ((spec.row_sample_rate * n_rows as f64).floor() as usize).clamp(1, n_rows)
    } else {
        n_rows
    };

    let mut rounds: Vec<BoostRound> = Vec::with_capacity(spec.n_trees);
    let mut loss_by_round: Vec<f64> = Vec::with_capacity(spec.n_trees);
    let mut stopped_early = false;

    for round_idx in 0..spec.n_trees {
        // Dropout: each prior tree is withheld independently from this
        // round's gradients. Plain boosting never drops.
        let mut dropped: Vec<Vec<usize>> = vec![Vec::new(); N_STATES]; // per class: round indices
        if spec.kind == TreeKind::Dart && !rounds.is_empty() {
            for r in 0..rounds.len() {
                for set in dropped.iter_mut() {
                    if drop_rng.gen::<f64>() < spec.dropout_rate {
                        set.push(r);
                    }
                }
            }
        }
        let any_dropped = dropped.iter().any(|d| !d.is_empty());

        // Scores the gradients see: full scores minus dropped trees.
        let mut dropped_scores: Option<Vec<f64>> = None;
        if !any_dropped {
            softmax_rows(&f, &mut p);
        } else {
            let mut sum = vec![0.0f64; n_rows * N_STATES];
            for (cls, set) in dropped.iter().enumerate() {
                for &r in set {
                    accumulate_tree(
                        &rounds[r].trees[cls],
                        rounds[r].weights[cls],
                        cls,
                        x,
                        n_features,
                        &mut sum,
                    );
                }
            }
            let mut f_work = f.clone();
            for (fw, s) in f_work.iter_mut().zip(&sum) {
                *fw -= s;
            }
            softmax_rows(&f_work, &mut p);
            dropped_scores = Some(sum);
        }

        // Row subsample for this round's trees.
        if sampled_rows == n_rows {
            for v in node_of.iter_mut() {
                *v = 0;
            }
        } else {
            for v in node_of.iter_mut() {
                *v = -1;
            }
            for i in 0..sampled_rows {
                let j = row_rng.gen_range(i..n_rows);
                row_pool.swap(i, j);
            }
            for &r in &row_pool[..sampled_rows] {
                node_of[r as usize] = 0;
            }
        }

        let mut trees: Vec<RegTree> = Vec::with_capacity(N_STATES);
        for cls in 0..N_STATES {
            for row in 0..n_rows {
                let prob = p[row * N_STATES + cls];
                let target = if y[row] as usize == cls { 1.0 } else { 0.0 };
                g[row] = prob - target;
                h[row] = prob * (1.0 - prob);
            }
            let features: Vec<usize> = if spec.col_sample_rate < 1.0 {
                super::tree::sample_features(n_features, spec.col_sample_rate, &mut col_rng)
            } else {
                (0..n_features).collect()
            };
            let mut assign = node_of.clone();
            trees.push(fit_reg_tree(
                x,
                n_features,
                &sorted,
                &g,
                &h,
                &mut assign,
                &features,
                spec.max_depth,
            ));
        }

        // Fold the new round into the running scores. Per class, the new
        // tree joining k dropped ones enters at lr/(k+1) while those k
        // shrink from w to w*k/(k+1); the dropped-score sum already in
        // hand shrinks by exactly 1/(k+1).
        let mut weights = vec![spec.learning_rate; N_STATES];
        if any_dropped {
            let sum = dropped_scores.as_ref().unwrap();
            for (cls, set) in dropped.iter().enumerate() {
                let k = set.len();
                if k == 0 {
                    continue;
                }
                weights[cls] = spec.learning_rate / (k as f64 + 1.0);
                let shrink = -1.0 / (k as f64 + 1.0);
                for row in 0..n_rows {
                    f[row * N_STATES + cls] += shrink * sum[row * N_STATES + cls];
                }
                for &r in set {
                    rounds[r].weights[cls] *= k as f64 / (k as f64 + 1.0);
                }
            }
        }
        for (cls, tree) in trees.iter().enumerate() {
            accumulate_tree(tree, weights[cls], cls, x, n_features, &mut f);
        }
        rounds.push(BoostRound { trees, weights });

        softmax_rows(&f, &mut p);
        let loss = mean_ce_bits(&p, y);
        if !loss.is_finite() {
            return Err(Error::compute(format!(
                "non-finite training loss at round {}",
                round_idx + 1
            )));
        }
        loss_by_round.push(loss);

        if let Some(stop) = early_stop(&loss_by_round, 1e-5, 3) {
            if stop == loss_by_round.len() {
                stopped_early = true;
                break;
            }
        }
    }

    let rounds_run = rounds.len();
    Ok((
        GbmModel {
            n_features,
            rounds,
        },
        TrainReport {
            loss_by_round,
            stopped_early,
            rounds_run,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::TreeSpec;

    /// 200 rows, one binary feature that pins the class to 1 or 10.
    fn two_class_dataset() -> Dataset {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let y: Vec<u8> = (0..n).map(|i| if i % 2 == 0 { 9u8 } else { 0u8 }).collect();
        Dataset {
            x,
            y,
            n_rows: n,
            n_features: 1,
        }
    }

    #[test]
    fn one_round_depth_one_separates_two_classes() {
        let data = two_class_dataset();
        let mut spec = TreeSpec::gbm(1, 7);
        spec.n_trees = 1;
        let (model, report) = train_boosted(&spec, &data).unwrap();
        assert_eq!(report.rounds_run, 1);
        let p_hi = model.predict_row(&[1.0]);
        let p_lo = model.predict_row(&[0.0]);
        assert!(p_hi[9] > p_hi[0]);
        assert!(p_lo[0] > p_lo[9]);
        // Argmax training accuracy is perfect on this toy problem.
        assert_eq!(
            p_hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            p_hi[9]
        );
    }

    #[test]
    fn loss_decreases_monotonically_on_separable_data() {
        let data = two_class_dataset();
        let mut spec = TreeSpec::gbm(2, 7);
        spec.n_trees = 20;
        let (_, report) = train_boosted(&spec, &data).unwrap();
        assert!(report.loss_by_round.len() >= 2);
        for w in report.loss_by_round.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose: {:?}", w);
        }
        // Round zero starts from uniform probabilities, so the first
        // recorded loss is already below log2(10).
        assert!(report.loss_by_round[0] < (10.0f64).log2());
    }

    #[test]
    fn same_seed_reproduces_training_exactly() {
        let data = two_class_dataset();
        let mut spec = TreeSpec::dart(2, 11);
        spec.n_trees = 8;
        let (m1, r1) = train_boosted(&spec, &data).unwrap();
        let (m2, r2) = train_boosted(&spec, &data).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.loss_by_round, r2.loss_by_round);
    }

    #[test]
    fn dart_rescaling_keeps_probabilities_sane() {
        let data = two_class_dataset();
        let mut spec = TreeSpec::dart(2, 3);
        spec.n_trees = 12;
        spec.dropout_rate = 0.5;
        let (model, _) = train_boosted(&spec, &data).unwrap();
        for row in [[0.0], [1.0]] {
            let p = model.predict_row(&row);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
        // Weights only ever shrink from the learning rate.
        assert!(model
            .rounds
            .iter()
            .flat_map(|r| &r.weights)
            .all(|&w| w > 0.0 && w <= spec.learning_rate + 1e-15));
    }

    #[test]
    fn subsampling_rates_are_honored() {
        let data = two_class_dataset();
        let mut spec = TreeSpec::gbm(2, 5);
        spec.n_trees = 4;
        spec.row_sample_rate = 0.5;
        spec.col_sample_rate = 1.0;
        let (model, report) = train_boosted(&spec, &data).unwrap();
        assert_eq!(report.rounds_run, model.rounds.len());
        let p = model.predict_row(&[1.0]);
        assert!(p[9] > 0.1);
    }
}
