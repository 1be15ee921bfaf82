//! Randomized cross-checks of derived quantities against independent
//! re-implementations that favor obviousness over speed: rank-based
//! bucketing for the labeler, direct term summation for binomial
//! tails, t-distribution identities for two-group range tests, and
//! dictionary counting for transition estimates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use statefolio::benchmarks::tukey_hsd;
use statefolio::panel::{assign_return_states, Panel, StockMonth};
use statefolio::portfolio::{cumulative_return, max_drawdown, moments, turnover};
use statefolio::stats::{binomial_test, Alternative};
use statefolio::transition::transition_matrix;
use statefolio::N_STATES;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---------------------------------------------------------------------
// Labeler: rank-positional bucketing with tie lifting
// ---------------------------------------------------------------------

/// Assigns states by sorted position — the r-th smallest of n values
/// (0-based) falls in bucket j+1 when j*n/k <= r < (j+1)*n/k — then
/// lifts every member of a tie group to the group's highest bucket,
/// which realizes inclusive lower bounds.
fn rank_lift_states(returns: &[f64], k: usize) -> Vec<u8> {
    let n = returns.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| returns[a].partial_cmp(&returns[b]).unwrap());
    let mut state = vec![0u8; n];
    for (pos, &i) in order.iter().enumerate() {
        let mut b = 1u8;
        for j in 1..k {
            if j * n / k <= pos {
                b += 1;
            }
        }
        state[i] = b;
    }
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && returns[order[end + 1]] == returns[order[start]] {
            end += 1;
        }
        let lifted = state[order[end]];
        for t in start..=end {
            state[order[t]] = lifted;
        }
        start = end + 1;
    }
    state
}

fn month_panel(month: u32, returns: &[f64]) -> Panel {
    let rows = returns
        .iter()
        .enumerate()
        .map(|(i, &ret)| StockMonth {
            stock_id: format!("s{i}"),
            month,
            ret,
            mktcap_lag: None,
            features: vec![],
            state: None,
        })
        .collect();
    Panel::new(rows, vec![]).unwrap()
}

#[test]
fn labeler_matches_rank_lift_oracle_with_and_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..300 {
        let n = rng.gen_range(10..=240);
        let lattice = case % 2 == 0;
        let returns: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(-0.5..0.5);
                if lattice {
                    // Coarse grid so equal returns are common.
                    (v * 12.0).round() / 12.0
                } else {
                    v
                }
            })
            .collect();
        let panel = month_panel(200001, &returns);
        let labeled = assign_return_states(&panel, N_STATES).unwrap();
        let oracle = rank_lift_states(&returns, N_STATES);
        for (row, &want) in labeled.rows().iter().zip(&oracle) {
            assert_eq!(
                row.state,
                Some(want),
                "case {case}: stock {} return {} got {:?}, oracle {want}",
                row.stock_id,
                row.ret,
                row.state
            );
        }
        if !lattice {
            // Tie-free months must hit the exact bucket sizes.
            let mut counts = [0usize; N_STATES];
            for row in labeled.rows() {
                counts[row.state.unwrap() as usize - 1] += 1;
            }
            for j in 0..N_STATES {
                let want = (j + 1) * n / N_STATES - j * n / N_STATES;
                assert_eq!(counts[j], want, "case {case}: bucket {} size", j + 1);
            }
        }
    }
}

// ---------------------------------------------------------------------
// Binomial tails: direct log-space term summation
// ---------------------------------------------------------------------

/// Exact tail probability by summing C(n,i) p^i (1-p)^(n-i) term by
/// term in log space, rescaled by the largest term.
fn tail_sum(n: u64, from: u64, to: u64, p: f64) -> f64 {
    let ln_fact: Vec<f64> = {
        let mut v = vec![0.0f64; n as usize + 1];
        for i in 1..=n as usize {
            v[i] = v[i - 1] + (i as f64).ln();
        }
        v
    };
    let log_term = |i: u64| {
        ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize]
            + i as f64 * p.ln()
            + (n - i) as f64 * (1.0 - p).ln()
    };
    let mut max_log = f64::NEG_INFINITY;
    for i in from..=to {
        max_log = max_log.max(log_term(i));
    }
    let mut sum = 0.0;
    for i in from..=to {
        sum += (log_term(i) - max_log).exp();
    }
    (max_log.exp()) * sum
}

#[test]
fn binomial_p_values_match_term_summation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..400 {
        let n = rng.gen_range(1..=1200u64);
        let k = rng.gen_range(0..=n);
        let p0: f64 = rng.gen_range(0.02..0.98);
        // The oracle's accuracy is limited by the sequentially
        // accumulated log-factorial table (~1e-10 relative at n ~ 1200),
        // still orders of magnitude below any formula-level defect.
        let greater = binomial_test(k, n, p0, Alternative::Greater, 0.95).unwrap();
        let want_greater = if k == 0 { 1.0 } else { tail_sum(n, k, n, p0) };
        assert!(
            close(greater.p_value, want_greater, 1e-10),
            "greater tail n={n} k={k} p0={p0}: {} vs {}",
            greater.p_value,
            want_greater
        );
        let less = binomial_test(k, n, p0, Alternative::Less, 0.95).unwrap();
        let want_less = if k == n { 1.0 } else { tail_sum(n, 0, k, p0) };
        assert!(
            close(less.p_value, want_less, 1e-10),
            "less tail n={n} k={k} p0={p0}: {} vs {}",
            less.p_value,
            want_less
        );
    }
}

#[test]
fn clopper_pearson_bounds_match_bisected_tail_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..120 {
        let n = rng.gen_range(2..=400u64);
        let k = rng.gen_range(0..=n);
        let level = 0.99;
        let alpha = 1.0 - level;
        let r = binomial_test(k, n, 0.5, Alternative::Greater, level).unwrap();
        if k > 0 {
            // Lower bound: the p with P(X >= k | p) = alpha/2.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if tail_sum(n, k, n, mid.clamp(1e-300, 1.0 - 1e-16)) < alpha / 2.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(
                (r.ci_lo - 0.5 * (lo + hi)).abs() < 1e-9,
                "ci_lo n={n} k={k}: {} vs {}",
                r.ci_lo,
                0.5 * (lo + hi)
            );
        } else {
            assert_eq!(r.ci_lo, 0.0);
        }
        if k < n {
            // Upper bound: the p with P(X <= k | p) = alpha/2.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if tail_sum(n, 0, k, mid.clamp(1e-300, 1.0 - 1e-16)) > alpha / 2.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(
                (r.ci_hi - 0.5 * (lo + hi)).abs() < 1e-9,
                "ci_hi n={n} k={k}: {} vs {}",
                r.ci_hi,
                0.5 * (lo + hi)
            );
        } else {
            assert_eq!(r.ci_hi, 1.0);
        }
    }
}

// ---------------------------------------------------------------------
// Tukey HSD at k = 2: studentized range reduces to Student's t
// ---------------------------------------------------------------------

#[test]
fn two_group_tukey_p_matches_two_sided_t_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..60 {
        let n1 = rng.gen_range(3..=30usize);
        let n2 = rng.gen_range(3..=30usize);
        let shift: f64 = rng.gen_range(-1.0..1.0);
        let a: Vec<f64> = (0..n1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n2).map(|_| rng.gen_range(-1.0..1.0) + shift).collect();
        let groups = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        let records = tukey_hsd(&groups, 0.05).unwrap();
        let rec = records
            .iter()
            .find(|r| r.group_i == "a" && r.group_j == "b")
            .unwrap();

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        assert!(close(rec.diff, ma - mb, 1e-12));
        let sse: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
            + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
        let df = (n1 + n2 - 2) as f64;
        let mse = sse / df;
        let t = (ma - mb).abs() / (mse * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
        let t_dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let want_p = 2.0 * (1.0 - t_dist.cdf(t));
        assert!(
            (rec.p - want_p).abs() < 2e-6,
            "p mismatch: tukey {} vs t {}",
            rec.p,
            want_p
        );
    }
}

// ---------------------------------------------------------------------
// Transition estimation: dictionary counting
// ---------------------------------------------------------------------

#[test]
fn transition_matrix_matches_dictionary_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..20 {
        let n_stocks = rng.gen_range(12..=40usize);
        // Stay inside one calendar year so consecutive months differ by 1.
        let n_months = rng.gen_range(3..=12u32);
        let mut rows = Vec::new();
        // Random presence pattern exercises gap handling.
        let mut present: BTreeMap<(usize, u32), u8> = BTreeMap::new();
        for s in 0..n_stocks {
            for m in 0..n_months {
                if rng.gen_bool(0.8) {
                    let month = 200001 + m;
                    let state = rng.gen_range(1..=N_STATES as u8);
                    present.insert((s, month), state);
                    rows.push(StockMonth {
                        stock_id: format!("s{s:02}"),
                        month,
                        ret: f64::from(state) * 0.01,
                        mktcap_lag: None,
                        features: vec![],
                        state: Some(state),
                    });
                }
            }
        }
        let panel = Panel::new(rows, vec![]).unwrap();
        let matrix = transition_matrix(&panel).unwrap();
        let mut counts = [[0u64; N_STATES]; N_STATES];
        for (&(s, month), &from) in &present {
            if let Some(&to) = present.get(&(s, month + 1)) {
                counts[from as usize - 1][to as usize - 1] += 1;
            }
        }
        for from in 0..N_STATES {
            let row_total: u64 = counts[from].iter().sum();
            for to in 0..N_STATES {
                assert_eq!(matrix.support[from][to], counts[from][to]);
                if row_total > 0 {
                    let want = counts[from][to] as f64 / row_total as f64;
                    assert!(close(matrix.values[from][to], want, 1e-12));
                } else {
                    assert!(matrix.values[from][to].is_nan());
                }
            }
        }
    }
}

// ---------------------------------------------------------------------
// Portfolio statistics: definitional re-computation
// ---------------------------------------------------------------------

#[test]
fn drawdown_cumulative_and_moments_match_definitional_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..300 {
        let n = rng.gen_range(1..=60usize);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.35..0.6)).collect();

        // Wealth path including the starting point W_0 = 1.
        let mut wealth = vec![1.0f64];
        for &x in &r {
            wealth.push(wealth.last().unwrap() * (1.0 + x));
        }
        let mut want_dd = 0.0f64;
        for i in 0..wealth.len() {
            for j in i..wealth.len() {
                want_dd = want_dd.max((wealth[i] - wealth[j]) / wealth[i]);
            }
        }
        let dd = max_drawdown(&r).unwrap();
        assert!(close(dd, want_dd, 1e-12), "dd {dd} vs {want_dd}");

        let (cum, wiped) = cumulative_return(&r);
        assert!(!wiped);
        assert!(close(cum, wealth.last().unwrap() - 1.0, 1e-12));

        if n >= 4 {
            let m = moments(&r).unwrap();
            let mean = r.iter().sum::<f64>() / n as f64;
            let cm = |k: i32| r.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n as f64;
            assert!(close(m.mean, mean, 1e-12));
            assert!(close(m.sd, cm(2).sqrt(), 1e-12));
            assert!(close(m.skewness.unwrap(), cm(3) / cm(2).powf(1.5), 1e-9));
            assert!(close(m.kurtosis.unwrap(), cm(4) / (cm(2) * cm(2)) - 3.0, 1e-9));
        }
    }
}

#[test]
fn turnover_matches_independent_drift_rebalance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let names = ["a", "b", "c", "d", "e"];
    for _ in 0..200 {
        let n_months = rng.gen_range(2..=8usize);
        let mut weights: Vec<BTreeMap<String, f64>> = Vec::new();
        let mut rets: Vec<BTreeMap<String, f64>> = Vec::new();
        for _ in 0..n_months {
            let mut w = BTreeMap::new();
            if rng.gen_bool(0.85) {
                let held = rng.gen_range(1..=names.len());
                let picks: Vec<&str> = {
                    let mut p = names.to_vec();
                    for i in (1..p.len()).rev() {
                        p.swap(i, rng.gen_range(0..=i));
                    }
                    p.truncate(held);
                    p
                };
                let raw: Vec<f64> = picks.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                for (s, x) in picks.iter().zip(&raw) {
                    w.insert((*s).to_string(), x / total);
                }
            }
            let mut r = BTreeMap::new();
            for s in names {
                if rng.gen_bool(0.9) {
                    r.insert(s.to_string(), rng.gen_range(-0.2..0.3));
                }
            }
            weights.push(w);
            rets.push(r);
        }

        // Oracle: drift, renormalize, compare against next holdings over
        // the union of names.
        let mut total = 0.0;
        for t in 0..n_months - 1 {
            let now = &weights[t];
            let next = &weights[t + 1];
            let pair = if now.is_empty() && next.is_empty() {
                0.0
            } else if now.is_empty() || next.is_empty() {
                1.0
            } else {
                let value: BTreeMap<&str, f64> = now
                    .iter()
                    .map(|(s, &w)| {
                        (
                            s.as_str(),
                            w * (1.0 + rets[t].get(s).copied().unwrap_or(0.0)),
                        )
                    })
                    .collect();
                let denom: f64 = value.values().sum();
                let mut acc = 0.0;
                for s in names {
                    let drifted = value.get(s).copied().unwrap_or(0.0) / denom;
                    let target = next.get(s).copied().unwrap_or(0.0);
                    acc += (target - drifted).abs();
                }
                acc
            };
            total += pair;
        }
        let want = total / (n_months - 1) as f64;
        let got = turnover(&weights, &rets).unwrap();
        assert!(close(got, want, 1e-12), "turnover {got} vs {want}");
    }
}
