//! Trainable 10-class probabilistic classifiers: a softmax MLP and tree
//! ensembles (gradient boosting, boosting with tree dropout, random
//! forest), all written against the same panel contract.
//!
//! Training panels must be labeled and normalized. All training is
//! deterministic given (spec, data, seed); reruns are bit-identical.

mod boost;
mod forest;
mod mlp;
mod tree;

pub use boost::{BoostRound, GbmModel};
pub use forest::ForestModel;
pub use mlp::Mlp;
pub use tree::{ClassTree, Node, RegTree, Tree};

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::N_STATES;

/// Probability floor inside log terms, preventing infinite loss.
pub const PROB_CLIP: f64 = 1e-12;

/// Softmax MLP hyperparameters. Hidden layers use tanh; the output
/// layer is a 10-unit softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden_sizes: Vec<usize>,
    pub l1_lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(hidden_sizes: Vec<usize>, seed: u64) -> Self {
        MlpSpec {
            hidden_sizes,
            l1_lambda: 0.0,
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 256,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::validation("hidden layer of size 0"));
        }
        if self.l1_lambda < 0.0 || !self.l1_lambda.is_finite() {
            return Err(Error::validation("l1_lambda must be nonnegative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeKind {
    Gbm,
    Dart,
    Rf,
}

/// Tree-ensemble hyperparameters shared by GBM, DART, and RF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub kind: TreeKind,
    pub max_depth: usize,
    pub n_trees: usize,
    /// Probability of dropping each prior round (DART only).
    pub dropout_rate: f64,
    pub row_sample_rate: f64,
    pub col_sample_rate: f64,
    /// Shrinkage applied to boosted trees; unused by RF.
    pub learning_rate: f64,
    pub seed: u64,
}

impl TreeSpec {
    pub fn gbm(max_depth: usize, seed: u64) -> Self {
        TreeSpec {
            kind: TreeKind::Gbm,
            max_depth,
            n_trees: 100,
            dropout_rate: 0.0,
            row_sample_rate: 1.0,
            col_sample_rate: 1.0,
            learning_rate: 0.1,
            seed,
        }
    }

    pub fn dart(max_depth: usize, seed: u64) -> Self {
        TreeSpec {
            kind: TreeKind::Dart,
            dropout_rate: 0.10,
            ..TreeSpec::gbm(max_depth, seed)
        }
    }

    pub fn rf(max_depth: usize, seed: u64) -> Self {
        TreeSpec {
            kind: TreeKind::Rf,
            max_depth,
            n_trees: 200,
            dropout_rate: 0.0,
            row_sample_rate: 1.0,
            col_sample_rate: 1.0,
            learning_rate: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.n_trees == 0 {
            return Err(Error::validation("max_depth and n_trees must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout_rate outside [0, 1]"));
        }
        for (name, r) in [
            ("row_sample_rate", self.row_sample_rate),
            ("col_sample_rate", self.col_sample_rate),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::validation(format!("{name} outside (0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Any trainable model specification, for grids and config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpSpec),
    Tree(TreeSpec),
}

/// A single row's predicted state distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probs: [f64; N_STATES],
    /// 1-based state of the maximal probability; ties break low.
    pub argmax_state: u8,
}

/// Index of the maximal probability, ties broken to the lowest state;
/// returned 1-based.
pub fn argmax_state(probs: &[f64; N_STATES]) -> u8 {
    let mut best = 0usize;
    for i in 1..N_STATES {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best as u8 + 1
}

/// Predictions keyed by (stock_id, month), iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    entries: BTreeMap<(String, u32), Prediction>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stock_id: String, month: u32, probs: [f64; N_STATES]) {
        let argmax = argmax_state(&probs);
        self.entries.insert(
            (stock_id, month),
            Prediction {
                probs,
                argmax_state: argmax,
            },
        );
    }

    pub fn get(&self, stock_id: &str, month: u32) -> Option<&Prediction> {
        self.entries.get(&(stock_id.to_string(), month))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, u32), &Prediction)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Months covered by at least one prediction, ascending.
    pub fn months(&self) -> Vec<u32> {
        let mut months: Vec<u32> = self.entries.keys().map(|k| k.1).collect();
        months.sort_unstable();
        months.dedup();
        months
    }
}

/// Training trace: per-round training cross-entropy in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_by_round: Vec<f64>,
    pub stopped_early: bool,
    pub rounds_run: usize,
}

/// Mean cross-entropy in bits of `preds` against the labeled rows of
/// `panel`: mean over rows of log2(1 / p[true state]), probabilities
/// clipped below at [`PROB_CLIP`]. Every labeled row must have a
/// prediction.
pub fn cross_entropy(panel: &Panel, preds: &PredictionSet) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for row in panel.rows() {
        let Some(state) = row.state else { continue };
        let p = preds.get(&row.stock_id, row.month).ok_or_else(|| {
            Error::validation(format!(
                "missing prediction for labeled row ({}, {})",
                row.stock_id, row.month
            ))
        })?;
        let prob = p.probs[state as usize - 1].max(PROB_CLIP);
        total += -prob.log2();
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("no labeled rows to score"));
    }
    Ok(total / n as f64)
}

/// Early-stopping rule: returns the first (1-based) round after which
/// the improvement over the previous round stayed below `min_delta` for
/// `patience` consecutive rounds, or `None` if never triggered.
pub fn early_stop(loss_by_round: &[f64], min_delta: f64, patience: usize) -> Option<usize> {
    if patience == 0 {
        return None;
    }
    let mut streak = 0usize;
    for i in 1..loss_by_round.len() {
        let improvement = loss_by_round[i - 1] - loss_by_round[i];
        if improvement < min_delta {
            streak += 1;
            if streak >= patience {
                return Some(i + 1);
            }
        } else {
            streak = 0;
        }
    }
    None
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Mlp(Mlp),
    Boosted(GbmModel),
    Forest(ForestModel),
}

/// Dense training view of a labeled panel: row-major features plus
/// 0-based class labels.
pub(crate) struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<u8>,
    pub n_rows: usize,
    pub n_features: usize,
}

impl Dataset {
    /// Builds the training view. Requires every row labeled, no missing
    /// feature values, and (when `require_all_classes`) every state
    /// present at least once.
    pub fn from_panel(panel: &Panel, require_all_classes: bool) -> Result<Dataset> {
        let n_features = panel.n_features();
        let n_rows = panel.len();
        if n_rows == 0 {
            return Err(Error::validation("empty training panel"));
        }
        let mut x = Vec::with_capacity(n_rows * n_features);
        let mut y = Vec::with_capacity(n_rows);
        let mut present = [false; N_STATES];
        for row in panel.rows() {
            let state = row.state.ok_or_else(|| {
                Error::validation(format!(
                    "unlabeled row ({}, {}); run state assignment first",
                    row.stock_id, row.month
                ))
            })?;
            if !(1..=N_STATES as u8).contains(&state) {
                return Err(Error::validation("state out of range"));
            }
            present[state as usize - 1] = true;
            y.push(state - 1);
            for &f in &row.features {
                if f.is_nan() {
                    return Err(Error::validation(
                        "missing feature value; normalize the panel before training",
                    ));
                }
                x.push(f);
            }
        }
        if require_all_classes {
            if let Some(missing) = present.iter().position(|&p| !p) {
                return Err(Error::validation(format!(
                    "state {} absent from the training set",
                    missing + 1
                )));
            }
        }
        Ok(Dataset {
            x,
            y,
            n_rows,
            n_features,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Feature matrix for prediction (labels not required).
pub(crate) fn feature_matrix(panel: &Panel) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(panel.len() * panel.n_features());
    for row in panel.rows() {
        for &f in &row.features {
            if f.is_nan() {
                return Err(Error::validation(
                    "missing feature value; normalize the panel before prediction",
                ));
            }
            x.push(f);
        }
    }
    Ok(x)
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Mlp(m) => m.n_features,
            Model::Boosted(m) => m.n_features,
            Model::Forest(m) => m.n_features,
        }
    }

    /// Scores every row of `panel`, which must carry the same feature
    /// count (and normalization convention) as the training panel.
    pub fn predict_proba(&self, panel: &Panel) -> Result<PredictionSet> {
        if panel.n_features() != self.n_features() {
            return Err(Error::validation(format!(
                "panel has {} features but the model was trained with {}",
                panel.n_features(),
                self.n_features()
            )));
        }
        let x = feature_matrix(panel)?;
        let nf = panel.n_features();
        let mut preds = PredictionSet::new();
        for (i, row) in panel.rows().iter().enumerate() {
            let probs = match self {
                Model::Mlp(m) => m.predict_row(&x[i * nf..(i + 1) * nf]),
                Model::Boosted(m) => m.predict_row(&x[i * nf..(i + 1) * nf]),
                Model::Forest(m) => m.predict_row(&x[i * nf..(i + 1) * nf]),
            };
            preds.insert(row.stock_id.clone(), row.month, probs);
        }
        Ok(preds)
    }
}

/// Trains the model described by `spec` on a labeled, normalized panel.
pub fn train(spec: &ModelSpec, panel: &Panel) -> Result<(Model, TrainReport)> {
    match spec {
        ModelSpec::Mlp(s) => {
            s.validate()?;
            let data = Dataset::from_panel(panel, false)?;
            let (model, report) = mlp::train_mlp(s, &data)?;
            Ok((Model::Mlp(model), report))
        }
        ModelSpec::Tree(s) => {
            s.validate()?;
            let data = Dataset::from_panel(panel, true)?;
            match s.kind {
                TreeKind::Gbm | TreeKind::Dart => {
                    let (model, report) = boost::train_boosted(s, &data)?;
                    Ok((Model::Boosted(model), report))
                }
                TreeKind::Rf => {
                    let (model, report) = forest::train_forest(s, &data)?;
                    Ok((Model::Forest(model), report))
                }
            }
        }
    }
}

/// Chronological k-fold cross-validation: months split into `folds`
/// contiguous blocks; each spec trains on the other blocks and is scored
/// by cross-entropy on the held-out block. Returns the winning spec's
/// index and every spec's mean validation loss; ties break to the first
/// spec in grid order.
pub fn cross_validate(
    grid: &[ModelSpec],
    panel: &Panel,
    folds: usize,
) -> Result<(usize, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::validation("empty model grid"));
    }
    if folds < 2 {
        return Err(Error::validation("need at least 2 folds"));
    }
    let months = panel.months();
    if months.len() < folds {
        return Err(Error::validation(format!(
            "{} distinct months cannot form {} folds",
            months.len(),
            folds
        )));
    }
    // Contiguous chronological blocks, sizes differing by at most one.
    let mut block_of_month: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, &m) in months.iter().enumerate() {
        block_of_month.insert(m, i * folds / months.len());
    }
    let mut fold_panels: Vec<(Panel, Panel)> = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut train_rows = Vec::new();
        let mut valid_rows = Vec::new();
        for row in panel.rows() {
            if block_of_month[&row.month] == fold {
                valid_rows.push(row.clone());
            } else {
                train_rows.push(row.clone());
            }
        }
        let train = Panel::new(train_rows, panel.feature_names().to_vec())?;
        let valid = Panel::new(valid_rows, panel.feature_names().to_vec())?;
        fold_panels.push((train, valid));
    }
    let mut mean_losses = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut total = 0.0;
        for (train_panel, valid_panel) in &fold_panels {
            let (model, _) = train(spec, train_panel)?;
            let preds = model.predict_proba(valid_panel)?;
            total += cross_entropy(valid_panel, &preds)?;
        }
        mean_losses.push(total / folds as f64);
    }
    let mut best = 0usize;
    for (i, &loss) in mean_losses.iter().enumerate() {
        if loss < mean_losses[best] {
            best = i;
        }
    }
    Ok((best, mean_losses))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: Model,
}

const MODEL_FORMAT: &str = "statefolio-model";
const MODEL_VERSION: u32 = 1;

/// Saves a model as self-describing versioned JSON. Floats serialize in
/// shortest round-trip form, so load followed by save is byte-identical.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::compute(format!("model serialization failed: {e}")))?;
    std::fs::write(path.as_ref(), json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("unreadable model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::validation(format!(
            "not a model file (format {:?})",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::validation(format!(
            "unsupported model version {}",
            file.version
        )));
    }
    Ok(file.model)
}

/// Writes predictions as CSV: stock_id, yyyymm, p1..p10, pred_state.
pub fn write_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write!(w, "stock_id,yyyymm")?;
    for s in 1..=N_STATES {
        write!(w, ",p{s}")?;
    }
    writeln!(w, ",pred_state")?;
    for ((id, month), p) in preds.iter() {
        write!(w, "{id},{month}")?;
        for v in p.probs {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", p.argmax_state)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a predictions CSV written by [`write_predictions`].
pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = {
        let mut cols = vec!["stock_id".to_string(), "yyyymm".to_string()];
        cols.extend((1..=N_STATES).map(|s| format!("p{s}")));
        cols.push("pred_state".to_string());
        cols
    };
    let actual: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    if actual != expected {
        return Err(Error::validation("unexpected prediction CSV header"));
    }
    let mut preds = PredictionSet::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or("").to_string();
        let month: u32 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::validation("bad month in prediction CSV"))?;
        let mut probs = [0.0f64; N_STATES];
        for (s, p) in probs.iter_mut().enumerate() {
            *p = record
                .get(2 + s)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::validation("bad probability in prediction CSV"))?;
        }
        preds.insert(id, month, probs);
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::StockMonth;

    fn labeled_panel(states: &[u8]) -> Panel {
        let rows: Vec<StockMonth> = states
            .iter()
            .enumerate()
            .map(|(i, &s)| StockMonth {
                stock_id: format!("s{i}"),
                month: 200001,
                ret: s as f64,
                mktcap_lag: None,
                features: vec![],
                state: Some(s),
            })
            .collect();
        Panel::new(rows, vec![]).unwrap()
    }

    fn uniform_probs() -> [f64; N_STATES] {
        [0.1; N_STATES]
    }

    #[test]
    fn cross_entropy_one_hot_correct_is_zero() {
        let panel = labeled_panel(&[3, 7]);
        let mut preds = PredictionSet::new();
        for row in panel.rows() {
            let mut probs = [0.0; N_STATES];
            probs[row.state.unwrap() as usize - 1] = 1.0;
            preds.insert(row.stock_id.clone(), row.month, probs);
        }
        assert_eq!(cross_entropy(&panel, &preds).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_log2_ten() {
        let panel = labeled_panel(&[1, 5, 10]);
        let mut preds = PredictionSet::new();
        for row in panel.rows() {
            preds.insert(row.stock_id.clone(), row.month, uniform_probs());
        }
        let ce = cross_entropy(&panel, &preds).unwrap();
        assert!((ce - 10.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_direct_summation_example() {
        // Two rows with p(true) = 0.5 and 0.25: (1 + 2) / 2 bits.
        let panel = labeled_panel(&[1, 2]);
        let mut preds = PredictionSet::new();
        let mut a = [0.5 / 9.0; N_STATES];
        a[0] = 0.5;
        preds.insert("s0".into(), 200001, a);
        let mut b = [0.75 / 9.0; N_STATES];
        b[1] = 0.25;
        preds.insert("s1".into(), 200001, b);
        let ce = cross_entropy(&panel, &preds).unwrap();
        assert!((ce - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_missing_prediction_errors() {
        let panel = labeled_panel(&[1, 2]);
        let mut preds = PredictionSet::new();
        preds.insert("s0".into(), 200001, uniform_probs());
        assert!(cross_entropy(&panel, &preds).is_err());
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let mut probs = [0.0; N_STATES];
        for p in probs.iter_mut().take(5) {
            *p = 0.2;
        }
        assert_eq!(argmax_state(&probs), 1);
    }

    #[test]
    fn early_stop_three_subthreshold_improvements() {
        let losses = [1.0, 0.9999995, 0.9999994, 0.9999993];
        assert_eq!(early_stop(&losses, 1e-5, 3), Some(4));
    }

    #[test]
    fn early_stop_never_when_strictly_improving() {
        let losses: Vec<f64> = (0..50).map(|i| 1.0 - 0.01 * i as f64).collect();
        assert_eq!(early_stop(&losses, 1e-5, 3), None);
    }

    #[test]
    fn early_stop_streak_reset() {
        // Improvements: 0.5, 1e-6, 1e-6, ~0.1 (reset), 1e-6, 1e-6 — the
        // streak never reaches 3, so no stop at round 4 or later.
        let losses = [1.0, 0.5, 0.499999, 0.499998, 0.4, 0.399999, 0.399998];
        assert_eq!(early_stop(&losses, 1e-5, 3), None);
        // Extending with one more flat round triggers at the 3rd
        // consecutive sub-threshold improvement.
        let losses = [1.0, 0.5, 0.499999, 0.499998, 0.4, 0.399999, 0.399998, 0.399997];
        assert_eq!(early_stop(&losses, 1e-5, 3), Some(8));
    }

    #[test]
    fn early_stop_counts_regressions_as_non_improvement() {
        let losses = [1.0, 1.1, 1.2, 1.3];
        assert_eq!(early_stop(&losses, 1e-5, 3), Some(4));
    }
}
