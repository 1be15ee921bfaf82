//! Prediction-quality analytics: certainty/confidence measures, a
//! small OLS engine, factor-model alpha regressions, rolling
//! correlations, per-stock lifetime regressions with category
//! aggregation, and tree-ensemble variable importance.

use std::collections::BTreeMap;
use std::path::Path;

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::learners::{Model, PredictionSet};
use crate::panel::{normalize_features, Panel};
use crate::N_STATES;

/// Population variance of the predicted state probabilities. Uniform
/// vectors score 0; one-hot vectors attain the simplex maximum 0.09.
pub fn model_certainty(probs: &[f64; N_STATES]) -> f64 {
    let mean = probs.iter().sum::<f64>() / N_STATES as f64;
    probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / N_STATES as f64
}

/// The maximum predicted state probability.
pub fn model_confidence(probs: &[f64; N_STATES]) -> f64 {
    probs.iter().cloned().fold(f64::MIN, f64::max)
}

// ---------------------------------------------------------------------
// OLS engine
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OlsResult {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
fn t_p_value(t: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return f64::NAN;
    }
    if !t.is_finite() {
        return 0.0;
    }
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2).
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Least squares of `y` on the given design columns (the caller supplies
/// the intercept column). Householder QR keeps the solve numerically
/// stable; standard errors are classical (homoskedastic) and p-values
/// two-sided from the t distribution with n - p degrees of freedom.
pub fn ols(columns: &[Vec<f64>], y: &[f64]) -> Result<OlsResult> {
    let p = columns.len();
    let n = y.len();
    if p == 0 {
        return Err(Error::validation("empty design matrix"));
    }
    for c in columns {
        if c.len() != n {
            return Err(Error::validation("design column length differs from y"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite value in design matrix"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite value in response"));
    }
    if n < p {
        return Err(Error::validation(format!(
            "{n} rows cannot identify {p} coefficients"
        )));
    }

    // Householder QR, transforming y alongside.
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut qty = y.to_vec();
    let max_norm = a
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let tol = max_norm * 1e-10;
    for j in 0..p {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol {
            return Err(Error::compute(format!(
                "design matrix is rank deficient at column {j}"
            )));
        }
        let alpha = if a[j][j] >= 0.0 { -norm } else { norm };
        // Householder vector v lives in rows j.. of column j.
        a[j][j] -= alpha;
        let vnorm2: f64 = a[j][j..].iter().map(|v| v * v).sum();
        if vnorm2 > 0.0 {
            for target in (j + 1)..p {
                let dot: f64 = a[j][j..]
                    .iter()
                    .zip(&a[target][j..])
                    .map(|(v, x)| v * x)
                    .sum();
                let scale = 2.0 * dot / vnorm2;
                // Split the borrow: v is column j, target is a later column.
                let (left, right) = a.split_at_mut(target);
                for (v, x) in left[j][j..].iter().zip(&mut right[0][j..]) {
                    *x -= scale * v;
                }
            }
            let dot: f64 = a[j][j..].iter().zip(&qty[j..]).map(|(v, x)| v * x).sum();
            let scale = 2.0 * dot / vnorm2;
            for (v, x) in a[j][j..].iter().zip(&mut qty[j..]) {
                *x -= scale * v;
            }
        }
        // Store the R diagonal where the reflected column lands.
        a[j][j] = alpha;
        if alpha.abs() <= tol {
            return Err(Error::compute(format!(
                "design matrix is rank deficient at column {j}"
            )));
        }
    }
    // R[i][j] = a[j][i] for i <= j.
    let r = |i: usize, j: usize| a[j][i];

    // Back substitution for the coefficients.
    let mut beta = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut acc = qty[i];
        for j in (i + 1)..p {
            acc -= r(i, j) * beta[j];
        }
        beta[i] = acc / r(i, i);
    }

    // Residuals against the original inputs.
    let mut ssr = 0.0;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut sst = 0.0;
    for i in 0..n {
        let mut fit = 0.0;
        for j in 0..p {
            fit += columns[j][i] * beta[j];
        }
        let resid = y[i] - fit;
        ssr += resid * resid;
        sst += (y[i] - ybar) * (y[i] - ybar);
    }
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else if ssr <= 1e-24 {
        1.0
    } else {
        0.0
    };

    // diag((X'X)^-1) via the inverse of R: entry k is the squared norm
    // of row k of R^-1.
    let mut rinv = vec![vec![0.0f64; p]; p];
    for j in (0..p).rev() {
        rinv[j][j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let mut acc = 0.0;
            for k in (i + 1)..=j {
                acc += r(i, k) * rinv[k][j];
            }
            rinv[i][j] = -acc / r(i, i);
        }
    }
    let df = n as f64 - p as f64;
    let sigma2 = if df > 0.0 { ssr / df } else { f64::NAN };
    let mut standard_errors = Vec::with_capacity(p);
    let mut t_stats = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for k in 0..p {
        let diag: f64 = rinv[k].iter().map(|v| v * v).sum();
        let se = (sigma2 * diag).sqrt();
        let t = beta[k] / se;
        standard_errors.push(se);
        t_stats.push(t);
        p_values.push(t_p_value(t, df));
    }

    Ok(OlsResult {
        coefficients: beta,
        standard_errors,
        t_stats,
        p_values,
        r_squared,
        n,
    })
}

// ---------------------------------------------------------------------
// Factor regressions
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorModel {
    /// Market, size, value.
    Ff3,
    /// FF3 plus momentum.
    Ff3Mom,
    /// Market, size, investment, profitability.
    Q4,
    /// Q4 plus expected growth.
    Q5,
}

impl FactorModel {
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            FactorModel::Ff3 => &["mkt_rf", "smb", "hml"],
            FactorModel::Ff3Mom => &["mkt_rf", "smb", "hml", "mom"],
            FactorModel::Q4 => &["mkt_rf", "me", "ia", "roe"],
            FactorModel::Q5 => &["mkt_rf", "me", "ia", "roe", "eg"],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ff3" | "ff3f" => Ok(FactorModel::Ff3),
            "ff3mom" | "ff3f+mom" | "ff4" => Ok(FactorModel::Ff3Mom),
            "q4" => Ok(FactorModel::Q4),
            "q5" => Ok(FactorModel::Q5),
            other => Err(Error::validation(format!("unknown factor model {other}"))),
        }
    }
}

/// Monthly factor returns keyed by YYYYMM month.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    columns: Vec<String>,
    by_month: BTreeMap<u32, Vec<f64>>,
}

impl FactorTable {
    pub fn new(columns: Vec<String>, rows: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        let columns: Vec<String> = columns.iter().map(|c| c.to_ascii_lowercase()).collect();
        let mut by_month = BTreeMap::new();
        for (month, values) in rows {
            if values.len() != columns.len() {
                return Err(Error::validation(format!(
                    "factor row for month {month} has {} values, expected {}",
                    values.len(),
                    columns.len()
                )));
            }
            if by_month.insert(month, values).is_some() {
                return Err(Error::validation(format!(
                    "duplicate factor month {month}"
                )));
            }
        }
        Ok(FactorTable { columns, by_month })
    }

    /// Reads a CSV whose header is `month` followed by factor names.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::validation(format!("bad factor header: {e}")))?
            .clone();
        let month_header = headers
            .get(0)
            .map(|h| h.trim().to_ascii_lowercase())
            .unwrap_or_default();
        if month_header != "month" && month_header != "yyyymm" {
            return Err(Error::validation(
                "factor CSV must start with a `month` or `yyyymm` column",
            ));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| Error::validation(format!("bad factor row: {e}")))?;
            let month: u32 = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::validation(format!("bad factor month {}", &record[0])))?;
            let mut values = Vec::with_capacity(columns.len());
            for field in record.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::validation(format!("bad factor value {field} in month {month}"))
                })?;
                values.push(v);
            }
            rows.push((month, values));
        }
        FactorTable::new(columns, rows)
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        let name = name.to_ascii_lowercase();
        self.columns.iter().position(|c| *c == name)
    }
}

/// Regresses the monthly portfolio returns on the model's factors plus
/// an intercept; the intercept estimate is the alpha.
pub fn factor_regression(
    months: &[u32],
    returns: &[f64],
    factors: &FactorTable,
    model: FactorModel,
) -> Result<OlsResult> {
    if months.len() != returns.len() {
        return Err(Error::validation("months and returns lengths differ"));
    }
    let wanted = model.columns();
    let mut idx = Vec::with_capacity(wanted.len());
    for name in wanted {
        let i = idx_or_err(factors, name)?;
        idx.push(i);
    }
    let n = months.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    columns.extend(vec![Vec::with_capacity(n); wanted.len()]);
    for &m in months {
        let row = factors.by_month.get(&m).ok_or_else(|| {
            Error::validation(format!("factor data missing for month {m}"))
        })?;
        for (k, &i) in idx.iter().enumerate() {
            columns[k + 1].push(row[i]);
        }
    }
    ols(&columns, returns)
}

fn idx_or_err(factors: &FactorTable, name: &str) -> Result<usize> {
    factors.column_index(name).ok_or_else(|| {
        Error::validation(format!("factor table lacks a `{name}` column"))
    })
}

// ---------------------------------------------------------------------
// Rolling correlation
// ---------------------------------------------------------------------

/// Pearson correlation over each trailing window; entry i covers input
/// positions [i, i+window). Windows where either side is constant are
/// undefined and yield None.
pub fn rolling_correlation(
    a: &[f64],
    b: &[f64],
    window: usize,
) -> Result<Vec<Option<f64>>> {
    if a.len() != b.len() {
        return Err(Error::validation("series lengths differ"));
    }
    if window < 2 {
        return Err(Error::validation("window must be at least 2"));
    }
    if window > a.len() {
        return Err(Error::validation("window exceeds series length"));
    }
    let mut out = Vec::with_capacity(a.len() - window + 1);
    for start in 0..=(a.len() - window) {
        let xa = &a[start..start + window];
        let xb = &b[start..start + window];
        let ma = xa.iter().sum::<f64>() / window as f64;
        let mb = xb.iter().sum::<f64>() / window as f64;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..window {
            let da = xa[i] - ma;
            let db = xb[i] - mb;
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        if saa <= 0.0 || sbb <= 0.0 {
            out.push(None);
        } else {
            out.push(Some(sab / (saa * sbb).sqrt()));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Lifetime regressions and category aggregation
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifetimeTarget {
    /// Lifetime mean of the argmax-correct indicator.
    Accuracy,
    /// Lifetime mean of the prediction-variance certainty measure.
    Certainty,
}

/// One non-intercept regressor's estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableRecord {
    pub name: String,
    pub coefficient: f64,
    pub standard_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeRegression {
    pub result: OlsResult,
    /// Included regressors, aligned with result entries 1.. (0 is the
    /// intercept).
    pub variables: Vec<VariableRecord>,
    /// Regressors dropped because they were constant across stocks.
    pub excluded: Vec<String>,
    pub n_stocks: usize,
}

/// Name of the always-appended regressor counting a stock's months in
/// the panel.
pub const APPEARANCE_VAR: &str = "appearance_count";

/// Cross-sectional regression of per-stock lifetime prediction quality
/// on lifetime means of monthly-normalized characteristics plus the
/// stock's appearance count.
///
/// Characteristic means run over every panel month a stock appears in;
/// the target averages only the months that carry a prediction. Stocks
/// without any prediction drop out of the regression entirely.
pub fn lifetime_regression(
    panel: &Panel,
    preds: &PredictionSet,
    target: LifetimeTarget,
) -> Result<LifetimeRegression> {
    let normalized = normalize_features(panel)?;
    let nf = normalized.n_features();

    struct StockAgg {
        char_sums: Vec<f64>,
        months: usize,
        target_sum: f64,
        target_months: usize,
    }
    let mut agg: BTreeMap<&str, StockAgg> = BTreeMap::new();
    for row in normalized.rows() {
        let e = agg.entry(row.stock_id.as_str()).or_insert_with(|| StockAgg {
            char_sums: vec![0.0; nf],
            months: 0,
            target_sum: 0.0,
            target_months: 0,
        });
        for (s, v) in e.char_sums.iter_mut().zip(&row.features) {
            *s += v;
        }
        e.months += 1;
        if let Some(pred) = preds.get(&row.stock_id, row.month) {
            let value = match target {
                LifetimeTarget::Accuracy => match row.state {
                    Some(s) => (pred.argmax_state == s) as u8 as f64,
                    None => continue,
                },
                LifetimeTarget::Certainty => model_certainty(&pred.probs),
            };
            e.target_sum += value;
            e.target_months += 1;
        }
    }

    let stocks: Vec<(&str, &StockAgg)> = agg
        .iter()
        .filter(|(_, a)| a.target_months > 0)
        .map(|(k, v)| (*k, v))
        .collect();
    if stocks.len() < 2 {
        return Err(Error::validation(
            "lifetime regression needs at least 2 stocks with predictions",
        ));
    }
    let n = stocks.len();

    // Candidate regressors: each characteristic's lifetime mean, then
    // the appearance count.
    let mut names: Vec<String> = normalized.feature_names().to_vec();
    names.push(APPEARANCE_VAR.to_string());
    let mut raw_columns: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    for f in 0..nf {
        raw_columns.push(
            stocks
                .iter()
                .map(|(_, a)| a.char_sums[f] / a.months as f64)
                .collect(),
        );
    }
    raw_columns.push(stocks.iter().map(|(_, a)| a.months as f64).collect());

    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut kept: Vec<String> = Vec::new();
    let mut excluded: Vec<String> = Vec::new();
    for (name, col) in names.into_iter().zip(raw_columns) {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            excluded.push(name);
        } else {
            columns.push(col);
            kept.push(name);
        }
    }

    let y: Vec<f64> = stocks
        .iter()
        .map(|(_, a)| a.target_sum / a.target_months as f64)
        .collect();
    let result = ols(&columns, &y)?;
    let variables = kept
        .into_iter()
        .enumerate()
        .map(|(i, name)| VariableRecord {
            name,
            coefficient: result.coefficients[i + 1],
            standard_error: result.standard_errors[i + 1],
            t_stat: result.t_stats[i + 1],
            p_value: result.p_values[i + 1],
        })
        .collect();
    Ok(LifetimeRegression {
        result,
        variables,
        excluded,
        n_stocks: n,
    })
}

/// Per-category aggregate of significant regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySummary {
    pub category: String,
    /// Sum of the coefficients with p below the significance level.
    pub sum_significant: f64,
    pub n_significant: usize,
    pub n_total: usize,
    pub alpha_level: f64,
}

/// Groups variable records by category and sums the coefficients that
/// are significant at `alpha`. Every record's variable must be mapped.
pub fn category_summary(
    variables: &[VariableRecord],
    categories: &BTreeMap<String, String>,
    alpha: f64,
) -> Result<Vec<CategorySummary>> {
    let mut by_cat: BTreeMap<&str, CategorySummary> = BTreeMap::new();
    for v in variables {
        let cat = categories.get(&v.name).ok_or_else(|| {
            Error::validation(format!("variable {} has no category mapping", v.name))
        })?;
        let entry = by_cat
            .entry(cat.as_str())
            .or_insert_with(|| CategorySummary {
                category: cat.clone(),
                sum_significant: 0.0,
                n_significant: 0,
                n_total: 0,
                alpha_level: alpha,
            });
        entry.n_total += 1;
        if v.p_value < alpha {
            entry.sum_significant += v.coefficient;
            entry.n_significant += 1;
        }
    }
    Ok(by_cat.into_values().collect())
}

// ---------------------------------------------------------------------
// Variable importance
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRecord {
    pub feature: usize,
    /// Total training-loss reduction from splits on this feature.
    pub score: f64,
    /// Score divided by the largest score (1.0 for the top feature).
    pub relative: f64,
    /// Score as a percentage of the ensemble's total reduction.
    pub share_pct: f64,
    /// 1-based rank by descending score; ties break by feature index.
    pub rank: usize,
}

/// Split-gain variable importance for tree ensembles. Network models
/// are refused: they have no split structure to attribute.
pub fn feature_importance(model: &Model) -> Result<Vec<ImportanceRecord>> {
    let n_features = model.n_features();
    let mut scores = vec![0.0f64; n_features];
    match model {
        Model::Mlp(_) => {
            return Err(Error::validation(
                "variable importance requires a tree-ensemble model",
            ));
        }
        Model::Boosted(m) => {
            for round in &m.rounds {
                for tree in &round.trees {
                    for (f, g) in tree.split_gains() {
                        scores[f] += g;
                    }
                }
            }
        }
        Model::Forest(m) => {
            for tree in &m.trees {
                for (f, g) in tree.split_gains() {
                    scores[f] += g;
                }
            }
        }
    }
    let total: f64 = scores.iter().sum();
    let max = scores.iter().cloned().fold(0.0f64, f64::max);
    let mut order: Vec<usize> = (0..n_features).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut rank_of = vec![0usize; n_features];
    for (pos, &f) in order.iter().enumerate() {
        rank_of[f] = pos + 1;
    }
    Ok((0..n_features)
        .map(|f| ImportanceRecord {
            feature: f,
            score: scores[f],
            relative: if max > 0.0 { scores[f] / max } else { 0.0 },
            share_pct: if total > 0.0 {
                100.0 * scores[f] / total
            } else {
                0.0
            },
            rank: rank_of[f],
        })
        .collect())
}
