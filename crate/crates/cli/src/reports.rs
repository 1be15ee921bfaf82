//! CSV report writers shared by the one-shot subcommands and the
//! `run` pipeline.
//!
//! Every writer is deterministic: iteration orders come from sorted
//! containers, floats print in Rust's shortest round-trip form, and no
//! report contains a timestamp. Undefined statistics print as `NA`,
//! never as a silent zero.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use statefolio::analysis::{
    model_certainty, model_confidence, CategorySummary, FactorModel, ImportanceRecord,
    LifetimeRegression, OlsResult,
};
use statefolio::benchmarks::TukeyRecord;
use statefolio::learners::{cross_entropy, PredictionSet, TrainReport};
use statefolio::panel::Panel;
use statefolio::portfolio::{
    ceq, cumulative_return, long_short_sharpe, max_drawdown, moments, sharpe, PortfolioSeries,
    PortfolioSet,
};
use statefolio::stats::{binomial_test, class_metrics, confusion, kappa, overall_accuracy,
    Alternative};
use statefolio::transition::TransitionMatrix;
use statefolio::{Error, Result, N_STATES};

/// Confidence level for the accuracy interval in metrics reports.
const CI_LEVEL: f64 = 0.99;

fn open(path: &Path) -> Result<BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::validation(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// Shortest round-trip float formatting; NaN prints as NA.
fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

// ---------------------------------------------------------------------
// evaluate: classification metrics against a baseline
// ---------------------------------------------------------------------

/// A named no-skill accuracy the predictions are tested against.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineAccuracy {
    pub name: String,
    pub accuracy: f64,
}

/// Classification quality of the predictions over every labeled panel
/// row that has one: overall accuracy with a Clopper-Pearson interval,
/// an exact binomial p-value against each baseline, Cohen's kappa,
/// cross-entropy, and the ten per-class metric rows.
pub fn write_metrics_csv(
    path: &Path,
    panel: &Panel,
    preds: &PredictionSet,
    baselines: &[BaselineAccuracy],
) -> Result<()> {
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut matched_rows = Vec::new();
    let mut missing = 0usize;
    for r in panel.rows() {
        let Some(state) = r.state else { continue };
        match preds.get(&r.stock_id, r.month) {
            Some(p) => {
                truth.push(state);
                predicted.push(p.argmax_state);
                matched_rows.push(r.clone());
            }
            None => missing += 1,
        }
    }
    if truth.is_empty() {
        return Err(Error::validation(
            "no labeled panel rows have predictions to evaluate",
        ));
    }
    let matched = Panel::new(matched_rows, panel.feature_names().to_vec())?;
    let bits = cross_entropy(&matched, preds)?;
    let m = confusion(&truth, &predicted)?;
    let acc = overall_accuracy(&m)?;
    let kap = kappa(&m)?;
    let hits = m.trace();

    let mut w = open(path)?;
    writeln!(w, "section,name,metric,value")?;
    writeln!(w, "overall,,n_scored,{}", truth.len())?;
    writeln!(w, "overall,,n_missing_predictions,{missing}")?;
    writeln!(w, "overall,,accuracy,{}", num(acc))?;
    // The interval depends only on the hit count, so compute it against
    // an arbitrary valid null and reuse it across baselines.
    let ci = binomial_test(hits, truth.len() as u64, 0.5, Alternative::Greater, CI_LEVEL)?;
    writeln!(w, "overall,,ci_lo,{}", num(ci.ci_lo))?;
    writeln!(w, "overall,,ci_hi,{}", num(ci.ci_hi))?;
    writeln!(w, "overall,,kappa,{}", opt(kap))?;
    writeln!(w, "overall,,cross_entropy_bits,{}", num(bits))?;
    for b in baselines {
        writeln!(w, "overall,{},benchmark_accuracy,{}", b.name, num(b.accuracy))?;
        let p = if b.accuracy > 0.0 && b.accuracy < 1.0 {
            let r = binomial_test(
                hits,
                truth.len() as u64,
                b.accuracy,
                Alternative::Greater,
                CI_LEVEL,
            )?;
            num(r.p_value)
        } else {
            "NA".into()
        };
        writeln!(w, "overall,{0},p_value,{p}", b.name)?;
    }
    for cls in 1..=N_STATES as u8 {
        let cm = class_metrics(&m, cls, 1.0)?;
        for (metric, value) in [
            ("sensitivity", opt(cm.sensitivity)),
            ("specificity", opt(cm.specificity)),
            ("precision", opt(cm.precision)),
            ("recall", opt(cm.recall)),
            ("f1", opt(cm.f1)),
            ("prevalence", num(cm.prevalence)),
            ("detection_prevalence", num(cm.detection_prevalence)),
            ("balanced_accuracy", opt(cm.balanced_accuracy)),
        ] {
            writeln!(w, "class,{cls},{metric},{value}")?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// portfolio: per-leg performance summary
// ---------------------------------------------------------------------

/// Looks up the risk-free rate for each held month; `None` means a
/// zero rate throughout.
fn rf_for(series: &PortfolioSeries, rf: Option<&BTreeMap<u32, f64>>) -> Result<Option<Vec<f64>>> {
    let Some(table) = rf else { return Ok(None) };
    let mut out = Vec::with_capacity(series.months.len());
    for &m in &series.months {
        let v = table.get(&m).ok_or_else(|| {
            Error::validation(format!("risk-free series missing month {m}"))
        })?;
        out.push(*v);
    }
    Ok(Some(out))
}

/// Per-leg summary: moments, Sharpe ratio, certainty-equivalent,
/// cumulative return, maximum drawdown, turnover, and empty-month
/// count. Degenerate statistics (zero variance, wiped wealth paths,
/// single-month series) print as NA rather than aborting the report.
pub fn write_perf_csv(
    path: &Path,
    set: &PortfolioSet,
    panel: &Panel,
    rf: Option<&BTreeMap<u32, f64>>,
    gamma: f64,
) -> Result<()> {
    let mut w = open(path)?;
    writeln!(
        w,
        "leg,months,mean,sd,skewness,kurtosis,sharpe,ceq,cumulative_return,wealth_wiped,max_drawdown,turnover,empty_months"
    )?;
    let long_rf = rf_for(&set.long, rf)?;
    let short_rf = rf_for(&set.short, rf)?;
    let turns = statefolio::portfolio::long_short_turnover(set, panel).ok();
    for (leg, series, leg_rf, turn) in [
        ("long", &set.long, &long_rf, turns.map(|t| t.0)),
        ("short", &set.short, &short_rf, turns.map(|t| t.1)),
        ("long_short", &set.long_short, &None, turns.map(|t| t.2)),
    ] {
        let r = &series.returns;
        let mom = moments(r).ok();
        let sr = if leg == "long_short" {
            long_short_sharpe(&set.long.returns, &set.short.returns).ok()
        } else {
            sharpe(r, leg_rf.as_deref()).ok()
        };
        let (cum, wiped) = cumulative_return(r);
        let mdd = max_drawdown(r).ok();
        writeln!(
            w,
            "{leg},{},{},{},{},{},{},{},{},{},{},{},{}",
            series.months.len(),
            opt(mom.as_ref().map(|m| m.mean)),
            opt(mom.as_ref().map(|m| m.sd)),
            opt(mom.as_ref().and_then(|m| m.skewness)),
            opt(mom.as_ref().and_then(|m| m.kurtosis)),
            opt(sr),
            opt(ceq(r, gamma).ok()),
            num(cum),
            wiped,
            opt(mdd),
            opt(turn),
            series.empty_months.len(),
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// transitions: 10x10 grids
// ---------------------------------------------------------------------

/// Stacked 10x10 grids, one row per from-state, labeled by kind
/// (probability, mean_return, accuracy). Undefined cells print NA.
pub fn write_matrix_csv(path: &Path, grids: &[(&str, &TransitionMatrix)]) -> Result<()> {
    let mut w = open(path)?;
    write!(w, "kind,from")?;
    for s in 1..=N_STATES {
        write!(w, ",s{s}")?;
    }
    writeln!(w)?;
    for (label, m) in grids {
        for from in 0..N_STATES {
            write!(w, "{label},{}", from + 1)?;
            for to in 0..N_STATES {
                write!(w, ",{}", num(m.values[from][to]))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// benchmark: pairwise comparison records
// ---------------------------------------------------------------------

pub fn write_tukey_csv(path: &Path, records: &[TukeyRecord]) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "pair,diff,ci_lo,ci_hi,p")?;
    for r in records {
        writeln!(
            w,
            "{}-{},{},{},{},{}",
            r.group_i,
            r.group_j,
            num(r.diff),
            num(r.ci_lo),
            num(r.ci_hi),
            num(r.p)
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// analyze: certainty, lifetime regressions, factors, importance
// ---------------------------------------------------------------------

/// Monthly cross-sectional means of the certainty (probability
/// variance) and confidence (top probability) measures.
pub fn write_certainty_csv(path: &Path, preds: &PredictionSet) -> Result<()> {
    let mut by_month: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    for ((_, month), p) in preds.iter() {
        let e = by_month.entry(*month).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += model_certainty(&p.probs);
        e.2 += model_confidence(&p.probs);
    }
    if by_month.is_empty() {
        return Err(Error::validation("prediction set is empty"));
    }
    let mut w = open(path)?;
    writeln!(w, "month,n,mean_certainty,mean_confidence")?;
    for (month, (n, cert, conf)) in by_month {
        writeln!(
            w,
            "{month},{n},{},{}",
            num(cert / n as f64),
            num(conf / n as f64)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Lifetime regression table: intercept and per-variable estimates,
/// excluded (constant) regressors, and summary rows (prefixed `_`).
pub fn write_lifetime_csv(path: &Path, reg: &LifetimeRegression) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "variable,coefficient,standard_error,t_stat,p_value,status")?;
    let r = &reg.result;
    writeln!(
        w,
        "intercept,{},{},{},{},estimate",
        num(r.coefficients[0]),
        num(r.standard_errors[0]),
        num(r.t_stats[0]),
        num(r.p_values[0])
    )?;
    for v in &reg.variables {
        writeln!(
            w,
            "{},{},{},{},{},estimate",
            v.name,
            num(v.coefficient),
            num(v.standard_error),
            num(v.t_stat),
            num(v.p_value)
        )?;
    }
    for name in &reg.excluded {
        writeln!(w, "{name},NA,NA,NA,NA,excluded")?;
    }
    writeln!(w, "_r_squared,{},,,,summary", num(r.r_squared))?;
    writeln!(w, "_n_stocks,{},,,,summary", reg.n_stocks)?;
    writeln!(w, "_n_obs,{},,,,summary", r.n)?;
    w.flush()?;
    Ok(())
}

pub fn write_category_csv(path: &Path, summaries: &[CategorySummary]) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "category,sum_significant,n_significant,n_total,alpha")?;
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.category,
            num(s.sum_significant),
            s.n_significant,
            s.n_total,
            num(s.alpha_level)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Factor regression estimates per portfolio leg: the alpha
/// (intercept), one row per factor loading, and `_r_squared`/`_n`
/// summary rows.
pub fn write_factors_csv(
    path: &Path,
    legs: &[(&str, &OlsResult)],
    model: FactorModel,
) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "leg,term,coefficient,standard_error,t_stat,p_value")?;
    for (leg, r) in legs {
        let mut terms = vec!["alpha"];
        terms.extend(model.columns());
        for (i, term) in terms.iter().enumerate() {
            writeln!(
                w,
                "{leg},{term},{},{},{},{}",
                num(r.coefficients[i]),
                num(r.standard_errors[i]),
                num(r.t_stats[i]),
                num(r.p_values[i])
            )?;
        }
        writeln!(w, "{leg},_r_squared,{},,,", num(r.r_squared))?;
        writeln!(w, "{leg},_n,{},,,", r.n)?;
    }
    w.flush()?;
    Ok(())
}

/// Split-gain importance table, most important feature first.
pub fn write_importance_csv(
    path: &Path,
    records: &[ImportanceRecord],
    feature_names: &[String],
) -> Result<()> {
    let mut by_rank: Vec<&ImportanceRecord> = records.iter().collect();
    by_rank.sort_by_key(|r| r.rank);
    let mut w = open(path)?;
    writeln!(w, "feature,score,relative,share_pct,rank")?;
    for r in by_rank {
        let name = feature_names
            .get(r.feature)
            .cloned()
            .unwrap_or_else(|| format!("f{}", r.feature));
        writeln!(
            w,
            "{name},{},{},{},{}",
            num(r.score),
            num(r.relative),
            num(r.share_pct),
            r.rank
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// pipeline extras: cross-validation table and training trace
// ---------------------------------------------------------------------

pub fn write_cv_csv(path: &Path, names: &[String], losses: &[f64], best: usize) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "model,mean_validation_loss_bits,selected")?;
    for (i, (name, loss)) in names.iter().zip(losses).enumerate() {
        writeln!(w, "{name},{},{}", num(*loss), i == best)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_train_report_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "round,loss_bits")?;
    for (i, loss) in report.loss_by_round.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, num(*loss))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// auxiliary input loaders
// ---------------------------------------------------------------------

/// Loads a month-keyed series CSV: a `yyyymm` (or `month`) column plus
/// exactly one value column (a column literally named `rf` wins when
/// several exist).
pub fn load_month_series(path: &Path) -> Result<BTreeMap<u32, f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("bad series header: {e}")))?
        .clone();
    let mut month_col = None;
    let mut value_col = None;
    let mut other_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h.trim().to_ascii_lowercase().as_str() {
            "yyyymm" | "month" => month_col = Some(i),
            "rf" => value_col = Some(i),
            _ => other_cols.push(i),
        }
    }
    let month_col =
        month_col.ok_or_else(|| Error::validation("series CSV needs a yyyymm or month column"))?;
    let value_col = match (value_col, other_cols.as_slice()) {
        (Some(c), _) => c,
        (None, [only]) => *only,
        (None, _) => {
            return Err(Error::validation(
                "series CSV needs an rf column or exactly one value column",
            ))
        }
    };
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::validation(format!("bad series row: {e}")))?;
        let month: u32 = record
            .get(month_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::validation("bad month in series CSV"))?;
        let value: f64 = record
            .get(value_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("bad value in series CSV month {month}")))?;
        if out.insert(month, value).is_some() {
            return Err(Error::validation(format!(
                "duplicate month {month} in series CSV"
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::validation("series CSV has no rows"));
    }
    Ok(out)
}

/// Loads a `variable,category` mapping CSV.
pub fn load_categories(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("bad categories header: {e}")))?
        .clone();
    let cols: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if cols != ["variable", "category"] {
        return Err(Error::validation(
            "categories CSV must have exactly the columns variable,category",
        ));
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::validation(format!("bad categories row: {e}")))?;
        let variable = record.get(0).unwrap_or("").trim().to_string();
        let category = record.get(1).unwrap_or("").trim().to_string();
        if variable.is_empty() || category.is_empty() {
            return Err(Error::validation("empty variable or category name"));
        }
        if out.insert(variable.clone(), category).is_some() {
            return Err(Error::validation(format!(
                "variable {variable} mapped twice in categories CSV"
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::validation("categories CSV has no rows"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statefolio::panel::StockMonth;

    fn tiny_labeled_panel() -> Panel {
        let mut rows = Vec::new();
        // Two months, ten stocks each, states 1..10 in stock order.
        for (mi, month) in [200001u32, 200002].into_iter().enumerate() {
            for s in 0..10u8 {
                rows.push(StockMonth {
                    stock_id: format!("s{s}"),
                    month,
                    ret: -0.05 + 0.01 * s as f64 + 0.001 * mi as f64,
                    mktcap_lag: Some(1.0 + s as f64),
                    features: vec![s as f64],
                    state: Some(s + 1),
                });
            }
        }
        Panel::new(rows, vec!["sig".into()]).unwrap()
    }

    fn perfect_preds(panel: &Panel) -> PredictionSet {
        let mut preds = PredictionSet::new();
        for r in panel.rows() {
            let mut probs = [0.0; N_STATES];
            probs[r.state.unwrap() as usize - 1] = 1.0;
            preds.insert(r.stock_id.clone(), r.month, probs);
        }
        preds
    }

    #[test]
    fn metrics_csv_has_overall_and_class_sections() {
        let panel = tiny_labeled_panel();
        let preds = perfect_preds(&panel);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let baselines = [BaselineAccuracy {
            name: "no-info".into(),
            accuracy: 0.1,
        }];
        write_metrics_csv(&path, &panel, &preds, &baselines).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("section,name,metric,value\n"));
        assert!(text.contains("overall,,accuracy,1\n"));
        assert!(text.contains("overall,,n_scored,20\n"));
        assert!(text.contains("overall,no-info,benchmark_accuracy,0.1\n"));
        assert!(text.contains("class,10,sensitivity,1\n"));
        // 8 metrics x 10 classes + overall rows.
        assert_eq!(text.lines().count(), 1 + 7 + 2 + 80);
    }

    #[test]
    fn metrics_csv_counts_missing_predictions() {
        let panel = tiny_labeled_panel();
        let mut preds = perfect_preds(&panel);
        // Rebuild without one entry.
        let mut trimmed = PredictionSet::new();
        for ((id, month), p) in preds.iter() {
            if !(id == "s0" && *month == 200001) {
                trimmed.insert(id.clone(), *month, p.probs);
            }
        }
        preds = trimmed;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &panel, &preds, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("overall,,n_scored,19\n"));
        assert!(text.contains("overall,,n_missing_predictions,1\n"));
    }

    #[test]
    fn month_series_loader_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.csv");
        std::fs::write(&path, "yyyymm,rf\n200001,0.001\n200002,0.002\n").unwrap();
        let series = load_month_series(&path).unwrap();
        assert_eq!(series[&200001], 0.001);
        assert_eq!(series[&200002], 0.002);

        std::fs::write(&path, "month,anything\n200001,1.5\n").unwrap();
        let series = load_month_series(&path).unwrap();
        assert_eq!(series[&200001], 1.5);

        std::fs::write(&path, "yyyymm,a,b\n200001,1,2\n").unwrap();
        assert!(load_month_series(&path).is_err());
    }

    #[test]
    fn categories_loader_validates_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cats.csv");
        std::fs::write(&path, "variable,category\nsize,Frictions\nbeta,Risk\n").unwrap();
        let cats = load_categories(&path).unwrap();
        assert_eq!(cats["size"], "Frictions");

        std::fs::write(&path, "var,cat\nsize,Frictions\n").unwrap();
        assert!(load_categories(&path).is_err());
    }
}
