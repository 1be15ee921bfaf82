//! Converts state predictions into long / short / long-short portfolios
//! and computes their economic metrics.
//!
//! A prediction keyed to month m is the model's distribution for the
//! state realized during m, computed from information through m-1. The
//! portfolio therefore forms its month-m holdings at the end of m-1
//! (predictions plus lagged market caps only) and earns the realized
//! returns of month m. Within each leg, weights sum to 1; the
//! long-short series is the elementwise difference of the legs.
//!
//! All dispersion metrics use the population standard deviation.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::learners::PredictionSet;
use crate::panel::{prev_month, Panel};
use crate::N_STATES;

/// How stocks are picked into the legs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AllocationRule {
    /// Long every stock whose argmax state is `long_state`, short every
    /// stock whose argmax state is `short_state`.
    MaxProb { long_state: u8, short_state: u8 },
    /// Long the stocks whose top-state probability ranks in the month's
    /// top `top_fraction` of those probabilities and in no other
    /// state's top fraction; short symmetrically on the bottom state.
    ProbabilityAdjusted { top_fraction: f64 },
}

impl AllocationRule {
    pub fn max_prob() -> Self {
        AllocationRule::MaxProb {
            long_state: N_STATES as u8,
            short_state: 1,
        }
    }

    pub fn probability_adjusted() -> Self {
        AllocationRule::ProbabilityAdjusted { top_fraction: 0.10 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AllocationRule::MaxProb {
                long_state,
                short_state,
            } => {
                for s in [long_state, short_state] {
                    if !(1..=N_STATES as u8).contains(&s) {
                        return Err(Error::validation("allocation state out of range"));
                    }
                }
                if long_state == short_state {
                    return Err(Error::validation("long and short states must differ"));
                }
            }
            AllocationRule::ProbabilityAdjusted { top_fraction } => {
                if !(top_fraction > 0.0 && top_fraction <= 1.0) {
                    return Err(Error::validation("top_fraction outside (0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Equal,
    Value,
    ProbabilityScaled,
}

/// Weighting inside each leg, with an optional capitalization cutoff
/// that drops the smallest stocks before selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    pub kind: WeightKind,
    /// Fraction of the candidate universe removed from the bottom by
    /// lagged market cap before selection, in [0, 1).
    pub cap_cutoff_pct: f64,
}

impl WeightScheme {
    pub fn equal() -> Self {
        WeightScheme {
            kind: WeightKind::Equal,
            cap_cutoff_pct: 0.0,
        }
    }

    pub fn value() -> Self {
        WeightScheme {
            kind: WeightKind::Value,
            cap_cutoff_pct: 0.0,
        }
    }

    pub fn probability_scaled() -> Self {
        WeightScheme {
            kind: WeightKind::ProbabilityScaled,
            cap_cutoff_pct: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cap_cutoff_pct) {
            return Err(Error::validation("cap_cutoff_pct outside [0, 1)"));
        }
        Ok(())
    }
}

/// One leg's history: holdings formed per formation month, returns
/// earned in the following months.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortfolioSeries {
    /// Months whose information formed the holdings, ascending.
    pub formation_months: Vec<u32>,
    /// Months the returns accrue: the calendar month after formation.
    pub months: Vec<u32>,
    pub returns: Vec<f64>,
    /// Per formation month: stock -> weight within the leg (sums to 1
    /// unless the leg was empty that month).
    pub weights_history: Vec<BTreeMap<String, f64>>,
    /// Held months where the leg held nothing (return recorded as 0).
    pub empty_months: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSet {
    pub long: PortfolioSeries,
    pub short: PortfolioSeries,
    /// Zero-investment combination: long return minus short return.
    pub long_short: PortfolioSeries,
}

struct Candidate<'a> {
    stock_id: &'a str,
    probs: &'a [f64; N_STATES],
    next_ret: f64,
    cap: Option<f64>,
}

/// Stocks whose probability for `state` ranks within the top `cnt`,
/// descending probability with ties broken by candidate order.
fn top_by_state(cands: &[Candidate], state: usize, cnt: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|&a, &b| {
        cands[b].probs[state]
            .partial_cmp(&cands[a].probs[state])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.into_iter().take(cnt).collect()
}

fn leg_weights(
    cands: &[Candidate],
    members: &[usize],
    kind: WeightKind,
    prob_state: usize,
) -> Result<Vec<f64>> {
    let n = members.len();
    match kind {
        WeightKind::Equal => Ok(vec![1.0 / n as f64; n]),
        WeightKind::Value => {
            let mut caps = Vec::with_capacity(n);
            for &i in members {
                let cap = cands[i].cap.ok_or_else(|| {
                    Error::validation(format!(
                        "stock {} lacks the lagged market cap needed for value weights",
                        cands[i].stock_id
                    ))
                })?;
                caps.push(cap);
            }
            let total: f64 = caps.iter().sum();
            Ok(caps.into_iter().map(|c| c / total).collect())
        }
        WeightKind::ProbabilityScaled => {
            let probs: Vec<f64> = members.iter().map(|&i| cands[i].probs[prob_state]).collect();
            let total: f64 = probs.iter().sum();
            if total > 0.0 {
                Ok(probs.into_iter().map(|p| p / total).collect())
            } else {
                // All qualifying probabilities zero: fall back to equal.
                Ok(vec![1.0 / n as f64; n])
            }
        }
    }
}

/// Forms the long, short, and long-short series from predictions.
///
/// Candidates each held month are the stocks with a prediction for
/// that month and a realized return in it; selection uses only the
/// prediction and the held row's lagged market cap, both known at the
/// end of the prior (formation) month. The cap cutoff drops the bottom
/// `cap_cutoff_pct` of candidates by lagged market cap before
/// selection. A month with an empty leg records a 0 return and is
/// flagged in `empty_months`.
pub fn form_portfolio(
    preds: &PredictionSet,
    panel: &Panel,
    rule: &AllocationRule,
    scheme: &WeightScheme,
) -> Result<PortfolioSet> {
    rule.validate()?;
    scheme.validate()?;
    let mut row_of: BTreeMap<(&str, u32), usize> = BTreeMap::new();
    for (i, r) in panel.rows().iter().enumerate() {
        row_of.insert((r.stock_id.as_str(), r.month), i);
    }

    let mut by_month: BTreeMap<u32, Vec<(&String, &crate::learners::Prediction)>> =
        BTreeMap::new();
    for ((stock, month), pred) in preds.iter() {
        by_month.entry(*month).or_default().push((stock, pred));
    }

    let mut long = PortfolioSeries::default();
    let mut short = PortfolioSeries::default();
    let mut long_short = PortfolioSeries::default();

    for (&held, month_preds) in &by_month {
        let formation = prev_month(held);
        // Candidates in stock-id order for determinism.
        let mut cands: Vec<Candidate> = Vec::new();
        for (stock, pred) in month_preds {
            let Some(&ri) = row_of.get(&(stock.as_str(), held)) else {
                continue;
            };
            let row = &panel.rows()[ri];
            cands.push(Candidate {
                stock_id: stock,
                probs: &pred.probs,
                next_ret: row.ret,
                cap: row.mktcap_lag,
            });
        }
        if cands.is_empty() {
            continue;
        }

        // Capitalization cutoff before selection.
        if scheme.cap_cutoff_pct > 0.0 {
            let drop = (cands.len() as f64 * scheme.cap_cutoff_pct).floor() as usize;
            if drop > 0 {
                for c in &cands {
                    if c.cap.is_none() {
                        return Err(Error::validation(format!(
                            "stock {} lacks the lagged market cap needed for the cap cutoff",
                            c.stock_id
                        )));
                    }
                }
                let mut order: Vec<usize> = (0..cands.len()).collect();
                order.sort_by(|&a, &b| {
                    cands[a]
                        .cap
                        .unwrap()
                        .partial_cmp(&cands[b].cap.unwrap())
                        .unwrap()
                        .then(cands[a].stock_id.cmp(cands[b].stock_id))
                });
                let keep: BTreeSet<usize> = order[drop..].iter().copied().collect();
                let mut kept = Vec::with_capacity(cands.len() - drop);
                for (i, c) in cands.into_iter().enumerate() {
                    if keep.contains(&i) {
                        kept.push(c);
                    }
                }
                cands = kept;
            }
        }
        if cands.is_empty() {
            continue;
        }

        let (long_members, short_members, long_prob_state, short_prob_state) = match *rule {
            AllocationRule::MaxProb {
                long_state,
                short_state,
            } => {
                let mut longs = Vec::new();
                let mut shorts = Vec::new();
                for (i, c) in cands.iter().enumerate() {
                    let argmax = crate::learners::argmax_state(c.probs);
                    if argmax == long_state {
                        longs.push(i);
                    } else if argmax == short_state {
                        shorts.push(i);
                    }
                }
                (
                    longs,
                    shorts,
                    long_state as usize - 1,
                    short_state as usize - 1,
                )
            }
            AllocationRule::ProbabilityAdjusted { top_fraction } => {
                let cnt = ((cands.len() as f64 * top_fraction).ceil() as usize).max(1);
                let tops: Vec<BTreeSet<usize>> = (0..N_STATES)
                    .map(|s| top_by_state(&cands, s, cnt))
                    .collect();
                let long_state = N_STATES - 1;
                let short_state = 0usize;
                let longs: Vec<usize> = tops[long_state]
                    .iter()
                    .copied()
                    .filter(|i| (0..N_STATES - 1).all(|s| !tops[s].contains(i)))
                    .collect();
                let shorts: Vec<usize> = tops[short_state]
                    .iter()
                    .copied()
                    .filter(|i| (1..N_STATES).all(|s| !tops[s].contains(i)))
                    .collect();
                (longs, shorts, long_state, short_state)
            }
        };

        let mut leg_return = [0.0f64; 2];
        for (leg_idx, (members, prob_state, series)) in [
            (&long_members, long_prob_state, &mut long),
            (&short_members, short_prob_state, &mut short),
        ]
        .into_iter()
        .enumerate()
        {
            let mut weights = BTreeMap::new();
            let ret = if members.is_empty() {
                series.empty_months.push(held);
                0.0
            } else {
                let w = leg_weights(&cands, members, scheme.kind, prob_state)?;
                let mut acc = 0.0;
                for (&i, &wi) in members.iter().zip(&w) {
                    acc += wi * cands[i].next_ret;
                    weights.insert(cands[i].stock_id.to_string(), wi);
                }
                acc
            };
            leg_return[leg_idx] = ret;
            series.formation_months.push(formation);
            series.months.push(held);
            series.returns.push(ret);
            series.weights_history.push(weights);
        }
        long_short.formation_months.push(formation);
        long_short.months.push(held);
        long_short.returns.push(leg_return[0] - leg_return[1]);
        long_short.weights_history.push(BTreeMap::new());
    }

    if long.months.is_empty() {
        return Err(Error::validation(
            "no months with realized next-period returns",
        ));
    }
    Ok(PortfolioSet {
        long,
        short,
        long_short,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Monthly Sharpe ratio of returns in excess of the per-month risk-free
/// rate (`None` means a zero rate). Population standard deviation.
pub fn sharpe(returns: &[f64], rf: Option<&[f64]>) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::validation("Sharpe ratio needs at least 2 months"));
    }
    let excess: Vec<f64> = match rf {
        Some(rf) => {
            if rf.len() != returns.len() {
                return Err(Error::validation(
                    "risk-free series length differs from returns",
                ));
            }
            returns.iter().zip(rf).map(|(r, f)| r - f).collect()
        }
        None => returns.to_vec(),
    };
    let sd = pop_var(&excess).sqrt();
    if sd == 0.0 {
        return Err(Error::compute("zero excess-return variance"));
    }
    Ok(mean(&excess) / sd)
}

/// Sharpe ratio of the zero-investment long-minus-short series (no
/// risk-free adjustment).
pub fn long_short_sharpe(long: &[f64], short: &[f64]) -> Result<f64> {
    if long.len() != short.len() {
        return Err(Error::validation("leg series lengths differ"));
    }
    let diff: Vec<f64> = long.iter().zip(short).map(|(l, s)| l - s).collect();
    sharpe(&diff, None)
}

/// Certainty-equivalent return: mean - (gamma/2) * population variance.
pub fn ceq(returns: &[f64], gamma: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::validation("CEQ needs at least 2 months"));
    }
    Ok(mean(returns) - 0.5 * gamma * pop_var(returns))
}

/// Compound growth net of the initial stake: prod(1 + r) - 1. A month
/// returning -100% or worse wipes the portfolio: the result clamps to
/// -1 and the flag is set.
pub fn cumulative_return(returns: &[f64]) -> (f64, bool) {
    let mut wealth = 1.0f64;
    for &r in returns {
        if r <= -1.0 {
            return (-1.0, true);
        }
        wealth *= 1.0 + r;
    }
    (wealth - 1.0, false)
}

/// Largest peak-to-trough loss of the gross wealth index, as a positive
/// fraction of the peak.
pub fn max_drawdown(returns: &[f64]) -> Result<f64> {
    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    let mut dd = 0.0f64;
    for &r in returns {
        wealth *= 1.0 + r;
        if wealth <= 0.0 {
            return Err(Error::compute("wealth index reached zero"));
        }
        if wealth > peak {
            peak = wealth;
        }
        dd = dd.max((peak - wealth) / peak);
    }
    Ok(dd)
}

/// Mean monthly turnover from a weights history: for each consecutive
/// pair of formation months, the held weights first drift with the
/// realized returns, then rebalance to the next holdings; turnover is
/// the summed absolute weight change. `held_returns[i]` maps stock to
/// its return during the month held under `weights_history[i]` (stocks
/// missing there drift at 0). An empty holding transitions cost the
/// incoming (or outgoing) full weight, i.e. 1.
pub fn turnover(
    weights_history: &[BTreeMap<String, f64>],
    held_returns: &[BTreeMap<String, f64>],
) -> Result<f64> {
    if weights_history.len() < 2 {
        return Err(Error::validation("turnover needs at least 2 months"));
    }
    if held_returns.len() != weights_history.len() {
        return Err(Error::validation(
            "held-returns length differs from weights history",
        ));
    }
    for w in weights_history {
        if !w.is_empty() {
            let sum: f64 = w.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "leg weights sum to {sum}, expected 1"
                )));
            }
        }
    }
    let mut total = 0.0;
    let n_pairs = weights_history.len() - 1;
    for t in 0..n_pairs {
        let w_now = &weights_history[t];
        let w_next = &weights_history[t + 1];
        let rets = &held_returns[t];
        let pair_turnover = if w_now.is_empty() && w_next.is_empty() {
            0.0
        } else if w_now.is_empty() {
            w_next.values().map(|w| w.abs()).sum()
        } else {
            // Drift the held weights through the month's returns.
            let mut drifted: BTreeMap<&str, f64> = BTreeMap::new();
            let mut denom = 0.0;
            for (stock, &w) in w_now {
                let r = rets.get(stock).copied().unwrap_or(0.0);
                let v = w * (1.0 + r);
                denom += v;
                drifted.insert(stock.as_str(), v);
            }
            if denom <= 0.0 {
                return Err(Error::compute("held leg value dropped to zero"));
            }
            let mut acc = 0.0;
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            for (stock, &w_new) in w_next {
                let old = drifted.get(stock.as_str()).copied().unwrap_or(0.0) / denom;
                acc += (w_new - old).abs();
                seen.insert(stock.as_str());
            }
            for (stock, &v) in &drifted {
                if !seen.contains(stock) {
                    acc += (v / denom).abs();
                }
            }
            acc
        };
        total += pair_turnover;
    }
    Ok(total / n_pairs as f64)
}

impl PortfolioSeries {
    /// Convenience: turnover with held returns looked up from the panel.
    pub fn turnover(&self, panel: &Panel) -> Result<f64> {
        let mut row_of: BTreeMap<(&str, u32), f64> = BTreeMap::new();
        for r in panel.rows() {
            row_of.insert((r.stock_id.as_str(), r.month), r.ret);
        }
        let held: Vec<BTreeMap<String, f64>> = self
            .weights_history
            .iter()
            .zip(&self.months)
            .map(|(w, &m)| {
                w.keys()
                    .filter_map(|s| {
                        row_of
                            .get(&(s.as_str(), m))
                            .map(|&r| (s.clone(), r))
                    })
                    .collect()
            })
            .collect();
        turnover(&self.weights_history, &held)
    }
}

/// Per-leg turnovers of a long-short portfolio and their sum.
pub fn long_short_turnover(set: &PortfolioSet, panel: &Panel) -> Result<(f64, f64, f64)> {
    let l = set.long.turnover(panel)?;
    let s = set.short.turnover(panel)?;
    Ok((l, s, l + s))
}

/// Standard summary moments; dispersion is the population standard
/// deviation and kurtosis is excess. Skewness needs 3 observations and
/// kurtosis 4; both are undefined (None) for constant series.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

pub fn moments(returns: &[f64]) -> Result<Moments> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::validation("moments need at least 2 observations"));
    }
    let m = mean(returns);
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &r in returns {
        let d = r - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n as f64;
    m3 /= n as f64;
    m4 /= n as f64;
    let sd = m2.sqrt();
    let skewness = if n >= 3 && sd > 0.0 {
        Some(m3 / (sd * sd * sd))
    } else {
        None
    };
    let kurtosis = if n >= 4 && sd > 0.0 {
        Some(m4 / (m2 * m2) - 3.0)
    } else {
        None
    };
    Ok(Moments {
        mean: m,
        sd,
        skewness,
        kurtosis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::StockMonth;

    fn one_hot(state: u8) -> [f64; N_STATES] {
        let mut p = [0.0; N_STATES];
        p[state as usize - 1] = 1.0;
        p
    }

    /// Panel with rows in two months and given month-2 returns.
    fn tiny_panel(rets: &[(&str, f64)]) -> Panel {
        let mut rows = Vec::new();
        for &(id, _) in rets {
            rows.push(StockMonth {
                stock_id: id.to_string(),
                month: 200001,
                ret: 0.0,
                mktcap_lag: Some(1.0),
                features: vec![],
                state: None,
            });
        }
        for &(id, r) in rets {
            rows.push(StockMonth {
                stock_id: id.to_string(),
                month: 200002,
                ret: r,
                mktcap_lag: Some(1.0),
                features: vec![],
                state: None,
            });
        }
        Panel::new(rows, vec![]).unwrap()
    }

    #[test]
    fn single_predicted_top_stock_earns_its_return() {
        let panel = tiny_panel(&[("a", 0.05), ("b", 0.01), ("c", -0.02)]);
        let mut preds = PredictionSet::new();
        preds.insert("a".into(), 200002, one_hot(10));
        preds.insert("b".into(), 200002, one_hot(5));
        preds.insert("c".into(), 200002, one_hot(1));
        let set = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::equal(),
        )
        .unwrap();
        assert_eq!(set.long.returns, vec![0.05]);
        assert_eq!(set.short.returns, vec![-0.02]);
        assert!((set.long_short.returns[0] - 0.07).abs() < 1e-15);
        assert_eq!(set.long.months, vec![200002]);
        assert_eq!(set.long.formation_months, vec![200001]);
    }

    #[test]
    fn equal_weight_leg_arithmetic() {
        let panel = tiny_panel(&[("a", 0.10), ("b", 0.20), ("c", -0.10)]);
        let mut preds = PredictionSet::new();
        preds.insert("a".into(), 200002, one_hot(10));
        preds.insert("b".into(), 200002, one_hot(10));
        preds.insert("c".into(), 200002, one_hot(1));
        let set = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::equal(),
        )
        .unwrap();
        assert!((set.long.returns[0] - 0.15).abs() < 1e-15);
        assert!((set.short.returns[0] + 0.10).abs() < 1e-15);
        assert!((set.long_short.returns[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn value_weights_follow_caps_and_sum_to_one() {
        let mut rows = Vec::new();
        for (id, cap, ret) in [("a", 30.0, 0.1), ("b", 10.0, 0.2)] {
            rows.push(StockMonth {
                stock_id: id.into(),
                month: 200002,
                ret,
                mktcap_lag: Some(cap),
                features: vec![],
                state: None,
            });
        }
        let panel = Panel::new(rows, vec![]).unwrap();
        let mut preds = PredictionSet::new();
        preds.insert("a".into(), 200002, one_hot(10));
        preds.insert("b".into(), 200002, one_hot(10));
        let set = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::value(),
        )
        .unwrap();
        let w = &set.long.weights_history[0];
        assert!((w["a"] - 0.75).abs() < 1e-15);
        assert!((w["b"] - 0.25).abs() < 1e-15);
        assert!((set.long.returns[0] - (0.75 * 0.1 + 0.25 * 0.2)).abs() < 1e-15);
        // Short leg is empty and flagged.
        assert_eq!(set.short.returns, vec![0.0]);
        assert_eq!(set.short.empty_months, vec![200002]);
    }

    /// Brute-force check of probability-adjusted selection on 20 stocks.
    #[test]
    fn probability_adjusted_selection_matches_rank_oracle() {
        let n = 20;
        let mut rows = Vec::new();
        let mut preds = PredictionSet::new();
        let mut probs_by_stock = Vec::new();
        for i in 0..n {
            let id = format!("s{i:02}");
            rows.push(StockMonth {
                stock_id: id.clone(),
                month: 200002,
                ret: 0.01,
                mktcap_lag: Some(1.0),
                features: vec![],
                state: None,
            });
            // Deterministic pseudo-random simplex point.
            let mut p = [0.0f64; N_STATES];
            let mut acc = 0.0;
            for (s, v) in p.iter_mut().enumerate() {
                let x = (((i * 31 + s * 17 + 7) % 97) as f64 + 1.0) / 97.0;
                *v = x;
                acc += x;
            }
            for v in &mut p {
                *v /= acc;
            }
            preds.insert(id.clone(), 200002, p);
            probs_by_stock.push((id, p));
        }
        let panel = Panel::new(rows, vec![]).unwrap();
        let set = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::probability_adjusted(),
            &WeightScheme::equal(),
        )
        .unwrap();

        // Oracle: rank stocks per state, top 2 (= ceil(20 * 0.1)).
        let cnt = 2;
        let top_of = |state: usize| -> BTreeSet<String> {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                probs_by_stock[b].1[state]
                    .partial_cmp(&probs_by_stock[a].1[state])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order[..cnt]
                .iter()
                .map(|&i| probs_by_stock[i].0.clone())
                .collect()
        };
        let expect_long: BTreeSet<String> = top_of(9)
            .into_iter()
            .filter(|s| (0..9).all(|st| !top_of(st).contains(s)))
            .collect();
        let expect_short: BTreeSet<String> = top_of(0)
            .into_iter()
            .filter(|s| (1..10).all(|st| !top_of(st).contains(s)))
            .collect();
        let got_long: BTreeSet<String> =
            set.long.weights_history[0].keys().cloned().collect();
        let got_short: BTreeSet<String> =
            set.short.weights_history[0].keys().cloned().collect();
        assert_eq!(got_long, expect_long);
        assert_eq!(got_short, expect_short);
        assert!(got_long.len() <= cnt && got_short.len() <= cnt);
        assert!(got_long.is_disjoint(&got_short));
    }

    #[test]
    fn cap_cutoff_drops_smallest_before_selection() {
        let mut rows = Vec::new();
        for (id, cap, ret) in [
            ("a", 1.0, 0.50),
            ("b", 2.0, 0.10),
            ("c", 3.0, 0.20),
            ("d", 4.0, 0.30),
        ] {
            rows.push(StockMonth {
                stock_id: id.into(),
                month: 200002,
                ret,
                mktcap_lag: Some(cap),
                features: vec![],
                state: None,
            });
        }
        let panel = Panel::new(rows, vec![]).unwrap();
        let mut preds = PredictionSet::new();
        for id in ["a", "b", "c", "d"] {
            preds.insert(id.into(), 200002, one_hot(10));
        }
        let scheme = WeightScheme {
            cap_cutoff_pct: 0.5,
            ..WeightScheme::equal()
        };
        let set =
            form_portfolio(&preds, &panel, &AllocationRule::max_prob(), &scheme).unwrap();
        // Bottom 2 by cap (a, b) are gone; c and d remain.
        let w = &set.long.weights_history[0];
        assert_eq!(w.len(), 2);
        assert!(w.contains_key("c") && w.contains_key("d"));
        let sum: f64 = w.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_lookahead_truncating_later_months_preserves_holdings() {
        // Three formation months; stock set varies over time.
        let mut rows = Vec::new();
        for m in [200001u32, 200002, 200003, 200004] {
            for i in 0..6 {
                rows.push(StockMonth {
                    stock_id: format!("s{i}"),
                    month: m,
                    ret: 0.01 * (i as f64 + m as f64 % 7.0),
                    mktcap_lag: Some(1.0 + i as f64),
                    features: vec![],
                    state: None,
                });
            }
        }
        let panel = Panel::new(rows.clone(), vec![]).unwrap();
        let mut preds = PredictionSet::new();
        for m in [200002u32, 200003, 200004] {
            for i in 0..6 {
                let state = (i % 3) * 4 + 1; // states 1, 5, 9
                preds.insert(format!("s{i}"), m, one_hot(state as u8 + 1));
            }
        }
        let full = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::equal(),
        )
        .unwrap();
        // Truncate: drop month 200004 rows and 200003 predictions.
        let truncated_panel = Panel::new(
            rows.into_iter().filter(|r| r.month <= 200003).collect(),
            vec![],
        )
        .unwrap();
        let truncated = form_portfolio(
            &preds,
            &truncated_panel,
            &AllocationRule::max_prob(),
            &WeightScheme::equal(),
        )
        .unwrap();
        assert_eq!(
            &full.long.weights_history[..2],
            &truncated.long.weights_history[..]
        );
        assert_eq!(&full.long.returns[..2], &truncated.long.returns[..]);
    }

    #[test]
    fn sharpe_examples() {
        assert_eq!(sharpe(&[0.01, -0.01], None).unwrap(), 0.0);
        let s = sharpe(&[0.01, 0.03], None).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(sharpe(&[0.01, 0.01], None).is_err());
        // Scaling invariance.
        let a = sharpe(&[0.01, 0.05, -0.02], None).unwrap();
        let b = sharpe(&[0.03, 0.15, -0.06], None).unwrap();
        assert!((a - b).abs() < 1e-12);
        // Risk-free subtraction.
        let c = sharpe(&[0.02, 0.04], Some(&[0.01, 0.01])).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
        // Long-short form.
        let ls = long_short_sharpe(&[0.02, 0.04], &[0.01, 0.01]).unwrap();
        assert!((ls - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ceq_examples() {
        // Series with mean 0.02 and population sd 0.03.
        let series = [-0.01, 0.05];
        assert!((ceq(&series, 1.0).unwrap() - 0.01955).abs() < 1e-12);
        assert!((ceq(&series, 0.0).unwrap() - 0.02).abs() < 1e-12);
        let flat = [0.004, 0.004, 0.004];
        assert!((ceq(&flat, 5.0).unwrap() - 0.004).abs() < 1e-15);
    }

    #[test]
    fn cumulative_return_examples() {
        let (v, wiped) = cumulative_return(&[0.1, 0.1]);
        assert!((v - 0.21).abs() < 1e-12);
        assert!(!wiped);
        assert_eq!(cumulative_return(&[]), (0.0, false));
        let (v, wiped) = cumulative_return(&[0.5, -1.0, 0.5]);
        assert_eq!(v, -1.0);
        assert!(wiped);
        // Long-horizon product identity.
        let series = vec![0.011; 684];
        let (v, _) = cumulative_return(&series);
        assert!((v - (1.011f64.powi(684) - 1.0)).abs() / v < 1e-12);
    }

    #[test]
    fn max_drawdown_examples() {
        assert_eq!(max_drawdown(&[0.01, 0.02, 0.03]).unwrap(), 0.0);
        let dd = max_drawdown(&[0.10, -0.20]).unwrap();
        assert!((dd - 0.20).abs() < 1e-12);
        assert!(max_drawdown(&[-1.0]).is_err());
    }

    #[test]
    fn max_drawdown_matches_quadratic_oracle() {
        let mut rng_state = 88172645463325252u64;
        let mut next = || {
            // xorshift for reproducible pseudo-returns.
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state % 2000) as f64 / 10000.0 - 0.08
        };
        let returns: Vec<f64> = (0..100).map(|_| next()).collect();
        let fast = max_drawdown(&returns).unwrap();
        // Brute force over all (peak, trough) pairs.
        let mut wealth = vec![1.0];
        for &r in &returns {
            wealth.push(wealth.last().unwrap() * (1.0 + r));
        }
        let mut worst = 0.0f64;
        for i in 0..wealth.len() {
            for j in i..wealth.len() {
                worst = worst.max((wealth[i] - wealth[j]) / wealth[i]);
            }
        }
        assert!((fast - worst).abs() < 1e-12);
    }

    fn w(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn turnover_examples() {
        // Single stock held forever: no trading.
        let hist = vec![w(&[("a", 1.0)]), w(&[("a", 1.0)]), w(&[("a", 1.0)])];
        let rets = vec![w(&[("a", 0.5)]), w(&[("a", -0.2)]), w(&[("a", 0.0)])];
        assert_eq!(turnover(&hist, &rets).unwrap(), 0.0);

        // 50/50, one stock doubles, rebalance back to 50/50: 1/3.
        let hist = vec![w(&[("a", 0.5), ("b", 0.5)]), w(&[("a", 0.5), ("b", 0.5)])];
        let rets = vec![w(&[("a", 1.0), ("b", 0.0)]), w(&[])];
        let t = turnover(&hist, &rets).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-12);

        // Full replacement of a single holding: sell 1, buy 1.
        let hist = vec![w(&[("a", 1.0)]), w(&[("b", 1.0)])];
        let rets = vec![w(&[("a", 0.07)]), w(&[])];
        assert!((turnover(&hist, &rets).unwrap() - 2.0).abs() < 1e-12);

        // Bad weights rejected.
        let hist = vec![w(&[("a", 0.7)]), w(&[("a", 1.0)])];
        let rets = vec![w(&[]), w(&[])];
        assert!(turnover(&hist, &rets).is_err());
    }

    #[test]
    fn moments_examples() {
        let m = moments(&[-0.02, 0.02, -0.02, 0.02]).unwrap();
        assert_eq!(m.mean, 0.0);
        assert!((m.sd - 0.02).abs() < 1e-15);
        assert_eq!(m.skewness, Some(0.0));
        let flat = moments(&[0.01, 0.01, 0.01, 0.01]).unwrap();
        assert_eq!(flat.sd, 0.0);
        assert_eq!(flat.skewness, None);
        assert_eq!(flat.kurtosis, None);
        assert!(moments(&[0.01]).is_err());
    }

    #[test]
    fn moments_of_normal_draws_have_small_excess_kurtosis() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let mut normal = || {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let xs: Vec<f64> = (0..1000).map(|_| normal()).collect();
        let m = moments(&xs).unwrap();
        assert!(m.kurtosis.unwrap().abs() < 0.3, "{:?}", m.kurtosis);
        assert!(m.skewness.unwrap().abs() < 0.3);
    }

    #[test]
    fn probability_scaled_weights_follow_qualifying_probability() {
        let panel = tiny_panel(&[("a", 0.10), ("b", 0.00)]);
        let mut preds = PredictionSet::new();
        let mut pa = [0.02; N_STATES];
        pa[9] = 0.6;
        let rest = (1.0 - 0.6 - 0.02 * 8.0) / 1.0;
        pa[0] = rest; // keep the vector on the simplex
        let mut pb = [0.05; N_STATES];
        pb[9] = 0.3;
        pb[0] = 1.0 - 0.3 - 0.05 * 8.0;
        preds.insert("a".into(), 200002, pa);
        preds.insert("b".into(), 200002, pb);
        let set = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::probability_scaled(),
        )
        .unwrap();
        let w = &set.long.weights_history[0];
        assert!((w["a"] - 0.6 / 0.9).abs() < 1e-12);
        assert!((w["b"] - 0.3 / 0.9).abs() < 1e-12);
    }
}
