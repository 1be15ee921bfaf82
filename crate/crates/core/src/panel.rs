//! Monthly stock panel: data model, CSV ingestion, return-state labeling,
//! cross-sectional feature scaling, and train/test splitting.
//!
//! A panel is a collection of stock-month observations. Each observation
//! carries the return earned during its month, the prior-month market
//! capitalization, and a fixed-length feature vector (predictors known
//! before the month starts). Labeling buckets each month's cross-section
//! of returns into `k` states, state 1 holding the worst returns and
//! state `k` the best, with every bucket's lower bound inclusive.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One stock-month observation.
///
/// `features` uses NaN as the missing-value marker prior to scaling;
/// `normalize_features` replaces every NaN with 0 after z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct StockMonth {
    pub stock_id: String,
    /// Calendar month as a YYYYMM integer, e.g. 199112.
    pub month: u32,
    /// Decimal monthly return (0.01 = 1%). Always finite.
    pub ret: f64,
    /// Month t-1 market capitalization; `None` when unavailable.
    pub mktcap_lag: Option<f64>,
    pub features: Vec<f64>,
    /// Return-state label in 1..=k once assigned.
    pub state: Option<u8>,
}

/// An indexed, immutable collection of stock-months.
#[derive(Debug, Clone)]
pub struct Panel {
    rows: Vec<StockMonth>,
    feature_names: Vec<String>,
    month_index: BTreeMap<u32, Vec<usize>>,
}

/// Calendar-month parity, decided by the MM digits (January = odd).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Odd,
    Even,
}

/// Train/test sample split specification.
///
/// Time-series ranges are inclusive month ranges that must be disjoint
/// and must jointly cover every month present in the panel, so the split
/// is an exact partition.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    TimeSeries {
        train: (u32, u32),
        test: (u32, u32),
    },
    CrossSectionalOddEven {
        train_parity: Parity,
    },
}

/// Column-name mapping for panel CSV ingestion. Every column not named
/// here is treated as a feature, in header order. The state column is
/// optional in the file; when present it carries previously assigned
/// return-state labels so a labeled panel round-trips.
#[derive(Debug, Clone)]
pub struct Schema {
    pub stock_id: String,
    pub month: String,
    pub ret: String,
    pub mktcap_lag: String,
    pub state: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            stock_id: "stock_id".into(),
            month: "yyyymm".into(),
            ret: "ret".into(),
            mktcap_lag: "mktcap_lag".into(),
            state: "state".into(),
        }
    }
}

/// Validates a YYYYMM integer and returns it unchanged.
pub fn validate_month(m: u32) -> Result<u32> {
    let mm = m % 100;
    let yyyy = m / 100;
    if !(1..=12).contains(&mm) || yyyy < 1 || yyyy > 9999 {
        return Err(Error::validation(format!("malformed month {m}")));
    }
    Ok(m)
}

/// The calendar month following `m` (YYYYMM arithmetic).
pub fn next_month(m: u32) -> u32 {
    if m % 100 == 12 {
        (m / 100 + 1) * 100 + 1
    } else {
        m + 1
    }
}

/// The calendar month preceding `m` (YYYYMM arithmetic).
pub fn prev_month(m: u32) -> u32 {
    if m % 100 == 1 {
        (m / 100 - 1) * 100 + 12
    } else {
        m - 1
    }
}

pub fn month_parity(m: u32) -> Parity {
    if (m % 100) % 2 == 1 {
        Parity::Odd
    } else {
        Parity::Even
    }
}

impl Panel {
    /// Builds a panel from rows, validating the type invariants:
    /// finite returns, unique (stock_id, month) pairs, valid months,
    /// uniform feature length matching `feature_names`.
    pub fn new(rows: Vec<StockMonth>, feature_names: Vec<String>) -> Result<Panel> {
        let mut seen: HashSet<(&str, u32)> = HashSet::with_capacity(rows.len());
        for r in &rows {
            validate_month(r.month)?;
            if !r.ret.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite return for ({}, {})",
                    r.stock_id, r.month
                )));
            }
            if let Some(c) = r.mktcap_lag {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::validation(format!(
                        "non-positive market cap for ({}, {})",
                        r.stock_id, r.month
                    )));
                }
            }
            if r.features.len() != feature_names.len() {
                return Err(Error::validation(format!(
                    "row ({}, {}) has {} features, expected {}",
                    r.stock_id,
                    r.month,
                    r.features.len(),
                    feature_names.len()
                )));
            }
            if let Some(s) = r.state {
                if s < 1 {
                    return Err(Error::validation("state label below 1"));
                }
            }
            if !seen.insert((r.stock_id.as_str(), r.month)) {
                return Err(Error::validation(format!(
                    "duplicate (stock_id, month) = ({}, {})",
                    r.stock_id, r.month
                )));
            }
        }
        let mut month_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            month_index.entry(r.month).or_default().push(i);
        }
        Ok(Panel {
            rows,
            feature_names,
            month_index,
        })
    }

    pub fn rows(&self) -> &[StockMonth] {
        &self.rows
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Months present, ascending.
    pub fn months(&self) -> Vec<u32> {
        self.month_index.keys().copied().collect()
    }

    /// Row indices belonging to `month` (insertion order).
    pub fn rows_in_month(&self, month: u32) -> &[usize] {
        self.month_index.get(&month).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Indices of (row at month t, row at month t+1) pairs for the same
    /// stock over consecutive calendar months. Stocks with gaps simply
    /// contribute no pair for the gapped month.
    pub fn consecutive_pairs(&self) -> Vec<(usize, usize)> {
        let mut by_key: BTreeMap<(&str, u32), usize> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            by_key.insert((r.stock_id.as_str(), r.month), i);
        }
        let mut pairs = Vec::new();
        for (&(id, m), &i) in &by_key {
            if let Some(&j) = by_key.get(&(id, next_month(m))) {
                pairs.push((i, j));
            }
        }
        pairs
    }

    /// Share of labeled rows per state, over states 1..=k.
    pub fn state_distribution(&self, k: usize) -> Vec<f64> {
        let mut counts = vec![0usize; k];
        let mut n = 0usize;
        for r in &self.rows {
            if let Some(s) = r.state {
                if (s as usize) >= 1 && (s as usize) <= k {
                    counts[s as usize - 1] += 1;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return vec![0.0; k];
        }
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

/// Loads a panel CSV. Rows with a blank return are dropped; blank market
/// caps and features become missing-markers. Column names outside the
/// schema are features, in header order.
pub fn load_panel(path: impl AsRef<Path>, schema: &Schema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();

    let mut id_col = None;
    let mut month_col = None;
    let mut ret_col = None;
    let mut cap_col = None;
    let mut state_col = None;
    let mut feature_cols: Vec<usize> = Vec::new();
    let mut feature_names: Vec<String> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == schema.stock_id {
            id_col = Some(i);
        } else if h == schema.month {
            month_col = Some(i);
        } else if h == schema.ret {
            ret_col = Some(i);
        } else if h == schema.mktcap_lag {
            cap_col = Some(i);
        } else if h == schema.state {
            state_col = Some(i);
        } else {
            feature_cols.push(i);
            feature_names.push(h.to_string());
        }
    }
    let id_col = id_col.ok_or_else(|| Error::validation("missing stock id column"))?;
    let month_col = month_col.ok_or_else(|| Error::validation("missing month column"))?;
    let ret_col = ret_col.ok_or_else(|| Error::validation("missing return column"))?;
    let cap_col = cap_col.ok_or_else(|| Error::validation("missing market cap column"))?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let ret_field = record.get(ret_col).unwrap_or("").trim();
        if ret_field.is_empty() {
            continue; // rows with missing returns are never admitted
        }
        let ret: f64 = ret_field
            .parse()
            .map_err(|_| Error::validation(format!("bad return value {ret_field:?}")))?;
        let month: u32 = record
            .get(month_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::validation("bad month value"))?;
        let cap_field = record.get(cap_col).unwrap_or("").trim();
        let mktcap_lag = if cap_field.is_empty() {
            None
        } else {
            Some(cap_field.parse().map_err(|_| {
                Error::validation(format!("bad market cap value {cap_field:?}"))
            })?)
        };
        let state = match state_col {
            Some(c) => {
                let s = record.get(c).unwrap_or("").trim();
                if s.is_empty() {
                    None
                } else {
                    let v: u8 = s.parse().map_err(|_| {
                        Error::validation(format!("bad state value {s:?}"))
                    })?;
                    if !(1..=10).contains(&v) {
                        return Err(Error::validation(format!("state {v} outside 1..=10")));
                    }
                    Some(v)
                }
            }
            None => None,
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let f = record.get(c).unwrap_or("").trim();
            if f.is_empty() {
                features.push(f64::NAN);
            } else {
                features.push(f.parse().map_err(|_| {
                    Error::validation(format!("bad feature value {f:?}"))
                })?);
            }
        }
        rows.push(StockMonth {
            stock_id: record.get(id_col).unwrap_or("").to_string(),
            month,
            ret,
            mktcap_lag,
            features,
            state,
        });
    }
    Panel::new(rows, feature_names)
}

/// Writes a panel CSV in the canonical column order. Missing values are
/// empty cells; floats print in shortest round-trip form so a rewrite of
/// a loaded file is byte-identical.
pub fn write_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let any_state = panel.rows().iter().any(|r| r.state.is_some());
    write!(w, "stock_id,yyyymm,ret,mktcap_lag")?;
    if any_state {
        write!(w, ",state")?;
    }
    for name in panel.feature_names() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for r in panel.rows() {
        write!(w, "{},{},{}", r.stock_id, r.month, r.ret)?;
        match r.mktcap_lag {
            Some(c) => write!(w, ",{c}")?,
            None => write!(w, ",")?,
        }
        if any_state {
            match r.state {
                Some(s) => write!(w, ",{s}")?,
                None => write!(w, ",")?,
            }
        }
        for &f in &r.features {
            if f.is_nan() {
                write!(w, ",")?;
            } else {
                write!(w, ",{f}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Bucket thresholds for one month: `thresholds[j]` is the lower bound of
/// bucket j+2 (0-indexed j over 0..k-1), i.e. the floor((j+1)*n/k)-th order
/// statistic. Empirical quantiles use order statistics directly, no
/// interpolation.
fn bucket_thresholds(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..k).map(|j| sorted[j * n / k]).collect()
}

/// State of a value given thresholds: 1 plus the number of thresholds at
/// or below it. A value equal to a bucket's lower bound belongs to that
/// bucket, so equal returns always share a state.
fn bucket_of(v: f64, thresholds: &[f64]) -> u8 {
    let mut s = 1u8;
    for &t in thresholds {
        if v >= t {
            s += 1;
        }
    }
    s
}

/// Labels every row's return state within its month: state 1 = worst
/// decile, state `k` = best, each bucket's lower bound inclusive.
pub fn assign_return_states(panel: &Panel, k: usize) -> Result<Panel> {
    if k < 2 {
        return Err(Error::validation("class count must be at least 2"));
    }
    let mut out = panel.clone();
    for (&month, idxs) in &panel.month_index {
        if idxs.len() < k {
            return Err(Error::validation(format!(
                "month {month} has {} rows, fewer than {k} states",
                idxs.len()
            )));
        }
        let mut sorted: Vec<f64> = idxs.iter().map(|&i| panel.rows[i].ret).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let thresholds = bucket_thresholds(&sorted, k);
        for &i in idxs {
            out.rows[i].state = Some(bucket_of(panel.rows[i].ret, &thresholds));
        }
    }
    Ok(out)
}

fn mean_and_pop_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cross-sectionally z-scores every feature within each month over its
/// non-missing values (population std), then fills missing values with 0.
/// A month-constant feature, or one with fewer than 2 observed values in
/// a month, maps to all zeros for that month.
pub fn normalize_features(panel: &Panel) -> Result<Panel> {
    normalize_features_expanding(panel, &[])
}

/// Like [`normalize_features`], but columns listed in `expanding_cols`
/// are scaled against the expanding history instead: each month uses the
/// mean and population std of all observations in months <= t. Intended
/// for time-series (macro) predictors that are constant within a month.
pub fn normalize_features_expanding(panel: &Panel, expanding_cols: &[usize]) -> Result<Panel> {
    for &c in expanding_cols {
        if c >= panel.n_features() {
            return Err(Error::validation(format!(
                "expanding column {c} out of range ({} features)",
                panel.n_features()
            )));
        }
    }
    let mut out = panel.clone();
    let expanding: HashSet<usize> = expanding_cols.iter().copied().collect();
    for f in 0..panel.n_features() {
        if expanding.contains(&f) {
            // Expanding history: accumulate observed values month by month.
            let mut history: Vec<f64> = Vec::new();
            for (_, idxs) in &panel.month_index {
                for &i in idxs {
                    let v = panel.rows[i].features[f];
                    if !v.is_nan() {
                        history.push(v);
                    }
                }
                let (mean, sd) = if history.len() >= 2 {
                    mean_and_pop_std(&history)
                } else {
                    (0.0, 0.0)
                };
                for &i in idxs {
                    let v = panel.rows[i].features[f];
                    out.rows[i].features[f] = if v.is_nan() || sd == 0.0 {
                        0.0
                    } else {
                        (v - mean) / sd
                    };
                }
            }
        } else {
            for (_, idxs) in &panel.month_index {
                let observed: Vec<f64> = idxs
                    .iter()
                    .map(|&i| panel.rows[i].features[f])
                    .filter(|v| !v.is_nan())
                    .collect();
                let (mean, sd) = if observed.len() >= 2 {
                    mean_and_pop_std(&observed)
                } else {
                    (0.0, 0.0)
                };
                for &i in idxs {
                    let v = panel.rows[i].features[f];
                    out.rows[i].features[f] = if v.is_nan() || sd == 0.0 {
                        0.0
                    } else {
                        (v - mean) / sd
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Splits a panel into (train, test). The split is an exact partition:
/// for time-series specs every panel month must fall in exactly one of
/// the two ranges; for parity specs months route by calendar parity.
pub fn split_sample(panel: &Panel, spec: &SplitSpec) -> Result<(Panel, Panel)> {
    let train_rows: Vec<bool> = match spec {
        SplitSpec::TimeSeries { train, test } => {
            validate_month(train.0)?;
            validate_month(train.1)?;
            validate_month(test.0)?;
            validate_month(test.1)?;
            if train.0 > train.1 || test.0 > test.1 {
                return Err(Error::validation("split range endpoints out of order"));
            }
            if train.1 >= test.0 && test.1 >= train.0 {
                return Err(Error::validation("train and test ranges overlap"));
            }
            let mut mask = Vec::with_capacity(panel.rows.len());
            for r in &panel.rows {
                let in_train = r.month >= train.0 && r.month <= train.1;
                let in_test = r.month >= test.0 && r.month <= test.1;
                if !in_train && !in_test {
                    return Err(Error::validation(format!(
                        "month {} outside both split ranges",
                        r.month
                    )));
                }
                mask.push(in_train);
            }
            mask
        }
        SplitSpec::CrossSectionalOddEven { train_parity } => panel
            .rows
            .iter()
            .map(|r| month_parity(r.month) == *train_parity)
            .collect(),
    };
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for (r, &is_train) in panel.rows.iter().zip(&train_rows) {
        if is_train {
            train_set.push(r.clone());
        } else {
            test_set.push(r.clone());
        }
    }
    if train_set.is_empty() {
        return Err(Error::validation("empty train sample"));
    }
    if test_set.is_empty() {
        return Err(Error::validation("empty test sample"));
    }
    let train = Panel::new(train_set, panel.feature_names.clone())?;
    let test = Panel::new(test_set, panel.feature_names.clone())?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, month: u32, ret: f64) -> StockMonth {
        StockMonth {
            stock_id: id.to_string(),
            month,
            ret,
            mktcap_lag: None,
            features: vec![],
            state: None,
        }
    }

    fn month_panel(returns: &[f64]) -> Panel {
        let rows: Vec<StockMonth> = returns
            .iter()
            .enumerate()
            .map(|(i, &r)| row(&format!("s{i}"), 200001, r))
            .collect();
        Panel::new(rows, vec![]).unwrap()
    }

    #[test]
    fn duplicate_stock_month_rejected() {
        let rows = vec![row("A", 199201, 0.01), row("A", 199201, 0.02)];
        assert!(Panel::new(rows, vec![]).is_err());
    }

    #[test]
    fn malformed_month_rejected() {
        assert!(validate_month(199213).is_err());
        assert!(validate_month(199200).is_err());
        assert!(validate_month(199212).is_ok());
    }

    #[test]
    fn next_month_rolls_year() {
        assert_eq!(next_month(199112), 199201);
        assert_eq!(next_month(199201), 199202);
    }

    #[test]
    fn ten_distinct_returns_one_per_state() {
        let panel = month_panel(&[0.05, -0.02, 0.11, 0.07, -0.09, 0.02, 0.0, 0.19, -0.04, 0.09]);
        let labeled = assign_return_states(&panel, 10).unwrap();
        let mut counts = [0usize; 10];
        for r in labeled.rows() {
            counts[r.state.unwrap() as usize - 1] += 1;
        }
        assert_eq!(counts, [1; 10]);
    }

    #[test]
    fn value_at_tenth_percentile_gets_state_two() {
        // 20 values 1..=20: the 10th-percentile threshold is the 3rd
        // order statistic (index 2), value 3. The row holding exactly 3
        // sits at the lower bound of state 2, which is inclusive.
        let vals: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let panel = month_panel(&vals);
        let labeled = assign_return_states(&panel, 10).unwrap();
        let s = labeled
            .rows()
            .iter()
            .find(|r| r.ret == 3.0)
            .and_then(|r| r.state)
            .unwrap();
        assert_eq!(s, 2);
        let s1 = labeled
            .rows()
            .iter()
            .find(|r| r.ret == 2.0)
            .and_then(|r| r.state)
            .unwrap();
        assert_eq!(s1, 1);
    }

    #[test]
    fn labeling_monotone_within_month() {
        let vals: Vec<f64> = (0..57).map(|i| ((i * 31 + 7) % 23) as f64 / 10.0).collect();
        let panel = month_panel(&vals);
        let labeled = assign_return_states(&panel, 10).unwrap();
        for a in labeled.rows() {
            for b in labeled.rows() {
                if a.ret > b.ret {
                    assert!(a.state.unwrap() >= b.state.unwrap());
                }
                if a.ret == b.ret {
                    assert_eq!(a.state.unwrap(), b.state.unwrap());
                }
            }
        }
    }

    #[test]
    fn month_below_class_count_rejected() {
        let panel = month_panel(&[0.01, 0.02, 0.03]);
        assert!(assign_return_states(&panel, 10).is_err());
    }

    #[test]
    fn zscore_symmetric_triple() {
        let rows = vec![
            StockMonth { features: vec![1.0], ..row("a", 200001, 0.0) },
            StockMonth { features: vec![2.0], ..row("b", 200001, 0.0) },
            StockMonth { features: vec![3.0], ..row("c", 200001, 0.0) },
        ];
        let panel = Panel::new(rows, vec!["f_1".into()]).unwrap();
        let norm = normalize_features(&panel).unwrap();
        let got: Vec<f64> = norm.rows().iter().map(|r| r.features[0]).collect();
        assert!((got[0] + 1.2247448713915890).abs() < 1e-12);
        assert!(got[1].abs() < 1e-12);
        assert!((got[2] - 1.2247448713915890).abs() < 1e-12);
    }

    #[test]
    fn zscore_constant_month_is_zero() {
        let rows = vec![
            StockMonth { features: vec![5.0], ..row("a", 200001, 0.0) },
            StockMonth { features: vec![5.0], ..row("b", 200001, 0.0) },
            StockMonth { features: vec![5.0], ..row("c", 200001, 0.0) },
        ];
        let panel = Panel::new(rows, vec!["f_1".into()]).unwrap();
        let norm = normalize_features(&panel).unwrap();
        assert!(norm.rows().iter().all(|r| r.features[0] == 0.0));
    }

    #[test]
    fn zscore_with_missing_fills_zero() {
        let rows = vec![
            StockMonth { features: vec![1.0], ..row("a", 200001, 0.0) },
            StockMonth { features: vec![f64::NAN], ..row("b", 200001, 0.0) },
            StockMonth { features: vec![3.0], ..row("c", 200001, 0.0) },
        ];
        let panel = Panel::new(rows, vec!["f_1".into()]).unwrap();
        let norm = normalize_features(&panel).unwrap();
        let got: Vec<f64> = norm.rows().iter().map(|r| r.features[0]).collect();
        assert!((got[0] + 1.0).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
        assert!((got[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expanding_normalization_uses_history_only() {
        let rows = vec![
            StockMonth { features: vec![1.0], ..row("a", 200001, 0.0) },
            StockMonth { features: vec![3.0], ..row("b", 200001, 0.0) },
            StockMonth { features: vec![5.0], ..row("a", 200002, 0.0) },
            StockMonth { features: vec![5.0], ..row("b", 200002, 0.0) },
        ];
        let panel = Panel::new(rows, vec!["macro".into()]).unwrap();
        let norm = normalize_features_expanding(&panel, &[0]).unwrap();
        // Month 200001: history {1,3}, mean 2, sd 1 -> {-1, +1}.
        assert!((norm.rows()[0].features[0] + 1.0).abs() < 1e-12);
        assert!((norm.rows()[1].features[0] - 1.0).abs() < 1e-12);
        // Month 200002: history {1,3,5,5}, mean 3.5, popsd sqrt(2.75).
        let sd = (2.75f64).sqrt();
        assert!((norm.rows()[2].features[0] - (5.0 - 3.5) / sd).abs() < 1e-12);
    }

    #[test]
    fn time_series_split_routes_by_range() {
        let rows = vec![
            row("a", 199111, 0.01),
            row("a", 199112, 0.02),
            row("a", 199201, 0.03),
            row("b", 199202, 0.04),
        ];
        let panel = Panel::new(rows, vec![]).unwrap();
        let spec = SplitSpec::TimeSeries {
            train: (199101, 199112),
            test: (199201, 199212),
        };
        let (train, test) = split_sample(&panel, &spec).unwrap();
        assert!(train.rows().iter().all(|r| r.month <= 199112));
        assert!(test.rows().iter().all(|r| r.month >= 199201));
        assert_eq!(train.len() + test.len(), panel.len());
    }

    #[test]
    fn parity_split_partitions_months() {
        let rows = vec![
            row("a", 199111, 0.01),
            row("a", 199112, 0.02),
            row("a", 199201, 0.03),
            row("b", 199202, 0.04),
        ];
        let panel = Panel::new(rows, vec![]).unwrap();
        let spec = SplitSpec::CrossSectionalOddEven {
            train_parity: Parity::Odd,
        };
        let (train, test) = split_sample(&panel, &spec).unwrap();
        let train_months: HashSet<u32> = train.rows().iter().map(|r| r.month).collect();
        let test_months: HashSet<u32> = test.rows().iter().map(|r| r.month).collect();
        assert!(train_months.is_disjoint(&test_months));
        assert_eq!(train_months, HashSet::from([199111, 199201]));
    }

    #[test]
    fn uncovered_month_rejected_in_time_series_split() {
        let rows = vec![row("a", 199001, 0.01), row("a", 199112, 0.02), row("a", 199201, 0.03)];
        let panel = Panel::new(rows, vec![]).unwrap();
        let spec = SplitSpec::TimeSeries {
            train: (199101, 199112),
            test: (199201, 199212),
        };
        assert!(split_sample(&panel, &spec).is_err());
    }

    #[test]
    fn consecutive_pairs_skip_gaps() {
        let rows = vec![
            row("a", 199111, 0.01),
            row("a", 199112, 0.02),
            row("a", 199202, 0.03), // gap at 199201
            row("b", 199112, 0.04),
            row("b", 199201, 0.05),
        ];
        let panel = Panel::new(rows, vec![]).unwrap();
        let pairs = panel.consecutive_pairs();
        assert_eq!(pairs.len(), 2);
        for (i, j) in pairs {
            let a = &panel.rows()[i];
            let b = &panel.rows()[j];
            assert_eq!(a.stock_id, b.stock_id);
            assert_eq!(next_month(a.month), b.month);
        }
    }
}
