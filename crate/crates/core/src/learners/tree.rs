//! Decision-tree machinery shared by the boosted and forest ensembles.
//!
//! Boosted trees regress on per-class gradient/hessian statistics with
//! exact greedy splits found by a single pass over globally pre-sorted
//! feature orders per level. Forest trees classify bootstrap samples
//! with Gini splits and carry class-frequency leaves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::N_STATES;

/// Hessian-sum guard in Newton leaf values and split gains.
const HESS_GUARD: f64 = 1e-6;
/// Cap on leaf values; prevents runaway steps on vanishing hessians.
const MAX_LEAF: f64 = 10.0;
/// Minimal gain for a split to be kept.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
        /// Training-loss reduction realized by this split.
        gain: f64,
    },
    Leaf(L),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    /// Nodes in creation order; the root is index 0.
    pub nodes: Vec<Node<L>>,
}

/// Regression tree: leaves hold an additive score.
pub type RegTree = Tree<f64>;
/// Classification tree: leaves hold a class-frequency vector.
pub type ClassTree = Tree<Vec<f64>>;

impl<L> Tree<L> {
    pub fn leaf_for(&self, row: &[f64]) -> &L {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(l) => return l,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Number of split levels on the deepest path.
    pub fn depth(&self) -> usize {
        fn walk<L>(nodes: &[Node<L>], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// (feature, gain) for every split node.
    pub fn split_gains(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf(_) => None,
        })
    }
}

/// Per-feature row orders, ascending by value (ties by row index),
/// computed once per training set and shared by every boosted tree.
pub(crate) struct SortedFeatures {
    pub order: Vec<Vec<u32>>,
}

impl SortedFeatures {
    pub fn build(x: &[f64], n_rows: usize, n_features: usize) -> SortedFeatures {
        let mut order = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut idx: Vec<u32> = (0..n_rows as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                let va = x[a as usize * n_features + f];
                let vb = x[b as usize * n_features + f];
                va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
            });
            order.push(idx);
        }
        SortedFeatures { order }
    }
}

#[derive(Clone, Copy, Default)]
struct Stat {
    g: f64,
    h: f64,
    count: u32,
}

impl Stat {
    fn score(&self) -> f64 {
        self.g * self.g / (self.h + HESS_GUARD)
    }

    fn leaf_value(&self) -> f64 {
        (-self.g / (self.h + HESS_GUARD)).clamp(-MAX_LEAF, MAX_LEAF)
    }
}

#[derive(Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: Stat,
}

#[derive(Clone, Copy)]
struct ScanState {
    running: Stat,
    last_value: f64,
}

/// Grows one regression tree by exact greedy splits on second-order
/// statistics: gain = 1/2 [GL^2/(HL+c) + GR^2/(HR+c) - G^2/(H+c)], leaf
/// value -G/(H+c). `node_of` must mark in-sample rows with 0 and all
/// others with -1; the buffer is consumed by the fit.
pub(crate) fn fit_reg_tree(
    x: &[f64],
    n_features: usize,
    sorted: &SortedFeatures,
    g: &[f64],
    h: &[f64],
    node_of: &mut [i32],
    features: &[usize],
    max_depth: usize,
) -> RegTree {
    let n_rows = node_of.len();
    let mut root = Stat::default();
    for (row, &nid) in node_of.iter().enumerate() {
        if nid == 0 {
            root.g += g[row];
            root.h += h[row];
            root.count += 1;
        }
    }
    let mut nodes: Vec<Node<f64>> = vec![Node::Leaf(0.0)];
    let mut active: Vec<(usize, Stat)> = vec![(0, root)];

    for _depth in 0..max_depth {
        if active.is_empty() {
            break;
        }
        // Dense slots for this level's active nodes.
        let mut slot_of = vec![-1i32; nodes.len()];
        for (slot, &(nid, _)) in active.iter().enumerate() {
            slot_of[nid] = slot as i32;
        }
        let mut best: Vec<Option<BestSplit>> = vec![None; active.len()];
        let mut scan: Vec<ScanState> = vec![
            ScanState {
                running: Stat::default(),
                last_value: 0.0,
            };
            active.len()
        ];
        for &f in features {
            for s in &mut scan {
                s.running = Stat::default();
            }
            for &row_u in &sorted.order[f] {
                let row = row_u as usize;
                let nid = node_of[row];
                if nid < 0 {
                    continue;
                }
                let slot_i = slot_of[nid as usize];
                if slot_i < 0 {
                    continue;
                }
                let slot = slot_i as usize;
                let v = x[row * n_features + f];
                let st = &mut scan[slot];
                if st.running.count > 0 && v > st.last_value {
                    let total = active[slot].1;
                    let left = st.running;
                    let right = Stat {
                        g: total.g - left.g,
                        h: total.h - left.h,
                        count: total.count - left.count,
                    };
                    if right.count > 0 {
                        let gain = 0.5 * (left.score() + right.score() - total.score());
                        if gain > best[slot].map_or(MIN_GAIN, |b| b.gain) {
                            let mid = 0.5 * (st.last_value + v);
                            let threshold = if st.last_value < mid && mid <= v { mid } else { v };
                            best[slot] = Some(BestSplit {
                                gain,
                                feature: f,
                                threshold,
                                left,
                            });
                        }
                    }
                }
                st.running.g += g[row];
                st.running.h += h[row];
                st.running.count += 1;
                st.last_value = v;
            }
        }
        // Materialize the level: split or finalize each active node.
        let mut next_active: Vec<(usize, Stat)> = Vec::new();
        let mut routing: Vec<Option<(usize, f64, u32, u32)>> = vec![None; active.len()];
        let mut any_split = false;
        for (slot, &(nid, total)) in active.iter().enumerate() {
            match best[slot] {
                Some(b) => {
                    let left_id = nodes.len() as u32;
                    let right_id = left_id + 1;
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[nid] = Node::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left: left_id,
                        right: right_id,
                        gain: b.gain,
                    };
                    let right = Stat {
                        g: total.g - b.left.g,
                        h: total.h - b.left.h,
                        count: total.count - b.left.count,
                    };
                    next_active.push((left_id as usize, b.left));
                    next_active.push((right_id as usize, right));
                    routing[slot] = Some((b.feature, b.threshold, left_id, right_id));
                    any_split = true;
                }
                None => {
                    nodes[nid] = Node::Leaf(total.leaf_value());
                }
            }
        }
        if any_split {
            for row in 0..n_rows {
                let nid = node_of[row];
                if nid < 0 {
                    continue;
                }
                let slot_i = slot_of[nid as usize];
                if slot_i < 0 {
                    continue;
                }
                match routing[slot_i as usize] {
                    Some((f, thr, left_id, right_id)) => {
                        node_of[row] = if x[row * n_features + f] < thr {
                            left_id as i32
                        } else {
                            right_id as i32
                        };
                    }
                    None => node_of[row] = -1,
                }
            }
        }
        active = next_active;
        if !any_split {
            break;
        }
    }
    for (nid, stat) in active {
        nodes[nid] = Node::Leaf(stat.leaf_value());
    }
    RegTree { nodes }
}

/// Gini impurity times count: n - sum c_k^2 / n.
fn weighted_gini(counts: &[u32; N_STATES], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n as f64 - sum_sq / n as f64
}

/// Grows one classification tree on (possibly repeated) bootstrap rows
/// with exact greedy Gini splits over a fresh feature subset per split.
/// Leaves hold class frequencies. The rng drives per-node feature
/// sampling in pre-order, so fits are seed-deterministic.
pub(crate) fn fit_class_tree(
    x: &[f64],
    n_features: usize,
    y: &[u8],
    rows: &[u32],
    max_depth: usize,
    col_sample_rate: f64,
    rng: &mut ChaCha8Rng,
) -> ClassTree {
    let mut nodes: Vec<Node<Vec<f64>>> = Vec::new();
    let mut rows = rows.to_vec();
    grow_class_node(
        x,
        n_features,
        y,
        &mut rows,
        0,
        max_depth,
        col_sample_rate,
        rng,
        &mut nodes,
    );
    ClassTree { nodes }
}

fn class_counts(y: &[u8], rows: &[u32]) -> ([u32; N_STATES], u32) {
    let mut counts = [0u32; N_STATES];
    for &r in rows {
        counts[y[r as usize] as usize] += 1;
    }
    (counts, rows.len() as u32)
}

fn leaf_probs(counts: &[u32; N_STATES], n: u32) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

pub(crate) fn sample_features(n_features: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = ((rate * n_features as f64).ceil() as usize).clamp(1, n_features);
    if m == n_features {
        return (0..n_features).collect();
    }
    // Partial Fisher-Yates, then sort for a deterministic scan order.
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n_features);
        pool.swap(i, j);
    }
    let mut chosen = pool[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

#[allow(clippy::too_many_arguments)]
fn grow_class_node(
    x: &[f64],
    n_features: usize,
    y: &[u8],
    rows: &mut Vec<u32>,
    depth: usize,
    max_depth: usize,
    col_sample_rate: f64,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node<Vec<f64>>>,
) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(Node::Leaf(Vec::new()));
    let (counts, n) = class_counts(y, rows);
    let parent_gini = weighted_gini(&counts, n);
    let pure = counts.iter().any(|&c| c == n);
    if depth >= max_depth || pure || n < 2 {
        nodes[id as usize] = Node::Leaf(leaf_probs(&counts, n));
        return id;
    }
    let features = sample_features(n_features, col_sample_rate, rng);
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut scratch: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
    for &f in &features {
        scratch.clear();
        scratch.extend(
            rows.iter()
                .map(|&r| (x[r as usize * n_features + f], y[r as usize])),
        );
        scratch.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut left = [0u32; N_STATES];
        let mut n_left = 0u32;
        for w in 0..scratch.len() - 1 {
            let (v, cls) = scratch[w];
            left[cls as usize] += 1;
            n_left += 1;
            let next_v = scratch[w + 1].0;
            if next_v > v {
                let mut right = counts;
                for (r, l) in right.iter_mut().zip(&left) {
                    *r -= l;
                }
                let n_right = n - n_left;
                let gain = parent_gini
                    - weighted_gini(&left, n_left)
                    - weighted_gini(&right, n_right);
                if gain > best.map_or(MIN_GAIN, |b| b.0) {
                    let mid = 0.5 * (v + next_v);
                    let threshold = if v < mid && mid <= next_v { mid } else { next_v };
                    best = Some((gain, f, threshold));
                }
            }
        }
    }
    let Some((gain, feature, threshold)) = best else {
        nodes[id as usize] = Node::Leaf(leaf_probs(&counts, n));
        return id;
    };
    let mut left_rows: Vec<u32> = Vec::new();
    let mut right_rows: Vec<u32> = Vec::new();
    for &r in rows.iter() {
        if x[r as usize * n_features + feature] < threshold {
            left_rows.push(r);
        } else {
            right_rows.push(r);
        }
    }
    rows.clear();
    rows.shrink_to_fit();
    let left = grow_class_node(
        x,
        n_features,
        y,
        &mut left_rows,
        depth + 1,
        max_depth,
        col_sample_rate,
        rng,
        nodes,
    );
    let right = grow_class_node(
        x,
        n_features,
        y,
        &mut right_rows,
        depth + 1,
        max_depth,
        col_sample_rate,
        rng,
        nodes,
    );
    nodes[id as usize] = Node::Split {
        feature,
        threshold,
        left,
        right,
        gain,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn reg_tree_single_split_separates_signs() {
        // Feature 0 is +/-1; gradients want +1 on the right, -1 on the left.
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let g: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -0.9 } else { 0.9 }).collect();
        let h = vec![0.09; n];
        let sorted = SortedFeatures::build(&x, n, 1);
        let mut node_of = vec![0i32; n];
        let tree = fit_reg_tree(&x, 1, &sorted, &g, &h, &mut node_of, &[0], 1);
        assert_eq!(tree.depth(), 1);
        let lo = tree.leaf_for(&[-1.0]);
        let hi = tree.leaf_for(&[1.0]);
        assert!(*hi > 0.0 && *lo < 0.0);
    }

    #[test]
    fn reg_tree_respects_depth_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let h = vec![0.1; n];
        let sorted = SortedFeatures::build(&x, n, 2);
        for depth in [1usize, 2, 3, 4] {
            let mut node_of = vec![0i32; n];
            let tree = fit_reg_tree(&x, 2, &sorted, &g, &h, &mut node_of, &[0, 1], depth);
            assert!(tree.depth() <= depth);
        }
    }

    #[test]
    fn reg_tree_constant_feature_stays_leaf() {
        let n = 10;
        let x = vec![0.5; n];
        let g: Vec<f64> = (0..n).map(|i| i as f64 - 4.5).collect();
        let h = vec![1.0; n];
        let sorted = SortedFeatures::build(&x, n, 1);
        let mut node_of = vec![0i32; n];
        let tree = fit_reg_tree(&x, 1, &sorted, &g, &h, &mut node_of, &[0], 4);
        assert_eq!(tree.depth(), 0);
        // G sums to 0, so the root leaf is 0.
        assert!(tree.leaf_for(&[0.5]).abs() < 1e-12);
    }

    #[test]
    fn class_tree_pure_split_and_frequencies() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<u8> = (0..n).map(|i| if i < 15 { 0u8 } else { 9u8 }).collect();
        let rows: Vec<u32> = (0..n as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = fit_class_tree(&x, 1, &y, &rows, 4, 1.0, &mut rng);
        let left = tree.leaf_for(&[3.0]);
        let right = tree.leaf_for(&[20.0]);
        assert_eq!(left[0], 1.0);
        assert_eq!(right[9], 1.0);
    }
}
