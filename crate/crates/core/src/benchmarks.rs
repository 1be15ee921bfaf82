//! Limited-information baseline classifiers, no-information and
//! martingale accuracy, and the Monte Carlo benchmark-selection study
//! with Tukey's HSD multiple-comparison test.
//!
//! The six baselines predict with nothing but marginal or last-month
//! information: uniform random states, random draws from the in-sample
//! or out-of-sample state distribution, the modal in-sample or
//! out-of-sample state, and the martingale (each stock's prior-month
//! state). A trained classifier is only interesting if it beats the
//! best of these.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::panel::{prev_month, Panel};
use crate::N_STATES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    UniformRandom,
    ISDistributionRandom,
    ISNaive,
    OOSDistributionRandom,
    OOSNaive,
    Martingale,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 6] = [
        BenchmarkKind::UniformRandom,
        BenchmarkKind::ISDistributionRandom,
        BenchmarkKind::ISNaive,
        BenchmarkKind::OOSDistributionRandom,
        BenchmarkKind::OOSNaive,
        BenchmarkKind::Martingale,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkKind::UniformRandom => "uniform_random",
            BenchmarkKind::ISDistributionRandom => "is_distribution_random",
            BenchmarkKind::ISNaive => "is_naive",
            BenchmarkKind::OOSDistributionRandom => "oos_distribution_random",
            BenchmarkKind::OOSNaive => "oos_naive",
            BenchmarkKind::Martingale => "martingale",
        }
    }
}

/// Context a baseline may need: state distributions and each row's
/// prior-month state (`None` where the stock has no prior observation).
#[derive(Debug, Clone, Default)]
pub struct BenchmarkContext<'a> {
    pub is_dist: Option<&'a [f64]>,
    pub oos_dist: Option<&'a [f64]>,
    pub prior_states: Option<&'a [Option<u8>]>,
}

/// Predictions of a baseline classifier over `n_rows` rows: a state per
/// row, `None` where the variant cannot predict (martingale rows with
/// no prior-month observation), plus the count of such skipped rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPrediction {
    pub states: Vec<Option<u8>>,
    pub skipped: usize,
}

/// Accuracy draws of one classifier across Monte Carlo iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySample {
    pub classifier: BenchmarkKind,
    pub draws: Vec<f64>,
}

impl AccuracySample {
    pub fn mean(&self) -> f64 {
        self.draws.iter().sum::<f64>() / self.draws.len() as f64
    }
}

fn validate_dist(dist: &[f64], what: &str) -> Result<()> {
    if dist.len() != N_STATES {
        return Err(Error::validation(format!(
            "{what} must have {N_STATES} entries"
        )));
    }
    if dist.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::validation(format!("{what} has entries outside [0,1]")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Draws a 1-based state from a mass function via inverse CDF.
fn draw_state(dist: &[f64], rng: &mut ChaCha8Rng) -> u8 {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        cum += p;
        if u < cum {
            return i as u8 + 1;
        }
    }
    dist.len() as u8
}

/// 1-based modal state, ties to the lowest state.
fn modal_state(dist: &[f64]) -> u8 {
    let mut best = 0usize;
    for i in 1..dist.len() {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    best as u8 + 1
}

/// Emits one predicted state per row for the requested baseline.
pub fn benchmark_predict(
    kind: BenchmarkKind,
    context: &BenchmarkContext,
    n_rows: usize,
    seed: u64,
) -> Result<BenchmarkPrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Option<u8>> = match kind {
        BenchmarkKind::UniformRandom => (0..n_rows)
            .map(|_| Some(rng.gen_range(1..=N_STATES as u8)))
            .collect(),
        BenchmarkKind::ISDistributionRandom | BenchmarkKind::ISNaive => {
            let dist = context
                .is_dist
                .ok_or_else(|| Error::validation("baseline requires the in-sample distribution"))?;
            validate_dist(dist, "in-sample distribution")?;
            if kind == BenchmarkKind::ISNaive {
                let m = modal_state(dist);
                vec![Some(m); n_rows]
            } else {
                (0..n_rows).map(|_| Some(draw_state(dist, &mut rng))).collect()
            }
        }
        BenchmarkKind::OOSDistributionRandom | BenchmarkKind::OOSNaive => {
            let dist = context.oos_dist.ok_or_else(|| {
                Error::validation("baseline requires the out-of-sample distribution")
            })?;
            validate_dist(dist, "out-of-sample distribution")?;
            if kind == BenchmarkKind::OOSNaive {
                let m = modal_state(dist);
                vec![Some(m); n_rows]
            } else {
                (0..n_rows).map(|_| Some(draw_state(dist, &mut rng))).collect()
            }
        }
        BenchmarkKind::Martingale => {
            let priors = context
                .prior_states
                .ok_or_else(|| Error::validation("martingale requires prior-month states"))?;
            if priors.len() != n_rows {
                return Err(Error::validation(format!(
                    "prior-state vector has {} entries for {} rows",
                    priors.len(),
                    n_rows
                )));
            }
            priors.to_vec()
        }
    };
    let skipped = states.iter().filter(|s| s.is_none()).count();
    Ok(BenchmarkPrediction { states, skipped })
}

/// Best achievable accuracy with no information beyond the marginal
/// state distribution: the maximal share.
pub fn no_information_accuracy(state_distribution: &[f64]) -> Result<f64> {
    validate_dist(state_distribution, "state distribution")?;
    Ok(state_distribution.iter().cloned().fold(0.0, f64::max))
}

/// Accuracy of predicting each stock's next state by its current state,
/// over all consecutive-month observations of the panel.
pub fn martingale_accuracy(panel: &Panel) -> Result<f64> {
    let pairs = panel.consecutive_pairs();
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, j) in pairs {
        let (Some(a), Some(b)) = (panel.rows()[i].state, panel.rows()[j].state) else {
            continue;
        };
        total += 1;
        if a == b {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::validation(
            "no labeled consecutive-month pairs for martingale accuracy",
        ));
    }
    Ok(hits as f64 / total as f64)
}

/// Martingale accuracy implied by a transition matrix and a prevalence
/// vector: sum over states of prevalence * self-transition probability.
pub fn martingale_accuracy_from_matrix(
    matrix: &[[f64; N_STATES]; N_STATES],
    prevalence: &[f64],
) -> Result<f64> {
    validate_dist(prevalence, "prevalence")?;
    for (s, row) in matrix.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::validation(format!(
                "transition row {} sums to {sum}, expected 1",
                s + 1
            )));
        }
    }
    Ok(matrix
        .iter()
        .enumerate()
        .map(|(s, row)| prevalence[s] * row[s])
        .sum())
}

/// A test-region row prepared for the Monte Carlo study.
struct StudyRow {
    state: u8,
    prior: Option<u8>,
}

/// Monte Carlo benchmark study: each iteration draws `n_draw` rows with
/// replacement from the test (out-of-sample) region and scores all six
/// baselines on the same draw; martingale accuracy excludes rows with
/// no prior-month observation. Prior states may reach back into the
/// in-sample region across the boundary.
pub fn monte_carlo_benchmark_study(
    is_panel: &Panel,
    oos_panel: &Panel,
    n_draw: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<AccuracySample>> {
    if oos_panel.is_empty() {
        return Err(Error::validation("empty test region"));
    }
    if n_draw == 0 || iters == 0 {
        return Err(Error::validation("n_draw and iters must be positive"));
    }
    let is_dist = is_panel.state_distribution(N_STATES);
    let oos_dist = oos_panel.state_distribution(N_STATES);
    validate_dist(&is_dist, "in-sample distribution")?;
    validate_dist(&oos_dist, "out-of-sample distribution")?;
    let is_mode = modal_state(&is_dist);
    let oos_mode = modal_state(&oos_dist);

    // Prior-month state lookup spans both halves.
    let mut state_of: HashMap<(&str, u32), u8> = HashMap::new();
    for panel in [is_panel, oos_panel] {
        for r in panel.rows() {
            if let Some(s) = r.state {
                state_of.insert((r.stock_id.as_str(), r.month), s);
            }
        }
    }
    let rows: Vec<StudyRow> = oos_panel
        .rows()
        .iter()
        .filter_map(|r| {
            let state = r.state?;
            let prior = state_of
                .get(&(r.stock_id.as_str(), prev_month(r.month)))
                .copied();
            Some(StudyRow { state, prior })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::validation("test region has no labeled rows"));
    }

    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(iters); BenchmarkKind::ALL.len()];
    for _ in 0..iters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_rng.gen());
        let mut hits = [0u32; 6];
        let mut mart_total = 0u32;
        for _ in 0..n_draw {
            let row = &rows[rng.gen_range(0..rows.len())];
            let truth = row.state;
            if rng.gen_range(1..=N_STATES as u8) == truth {
                hits[0] += 1;
            }
            if draw_state(&is_dist, &mut rng) == truth {
                hits[1] += 1;
            }
            if is_mode == truth {
                hits[2] += 1;
            }
            if draw_state(&oos_dist, &mut rng) == truth {
                hits[3] += 1;
            }
            if oos_mode == truth {
                hits[4] += 1;
            }
            if let Some(p) = row.prior {
                mart_total += 1;
                if p == truth {
                    hits[5] += 1;
                }
            }
        }
        for (k, &h) in hits.iter().enumerate() {
            let denom = if k == 5 { mart_total } else { n_draw as u32 };
            let acc = if denom == 0 {
                0.0
            } else {
                h as f64 / denom as f64
            };
            draws[k].push(acc);
        }
    }
    Ok(BenchmarkKind::ALL
        .iter()
        .zip(draws)
        .map(|(&classifier, draws)| AccuracySample { classifier, draws })
        .collect())
}

/// One ordered pairwise comparison from Tukey's HSD.
#[derive(Debug, Clone, PartialEq)]
pub struct TukeyRecord {
    pub group_i: String,
    pub group_j: String,
    pub diff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p: f64,
}

/// Tukey's honestly-significant-difference test over a one-way layout:
/// pooled within-group MSE on N-k degrees of freedom, simultaneous
/// confidence intervals diff ± q(1-alpha; k, df) * sqrt(MSE/2 * (1/n_i
/// + 1/n_j)), and p-values from the studentized-range distribution.
/// Records cover every ordered pair (i, j), i != j.
pub fn tukey_hsd(groups: &[(String, Vec<f64>)], alpha: f64) -> Result<Vec<TukeyRecord>> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::validation("Tukey HSD needs at least 2 groups"));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::validation("alpha outside (0, 1)"));
    }
    let mut means = Vec::with_capacity(k);
    let mut sizes = Vec::with_capacity(k);
    let mut sse = 0.0;
    let mut n_total = 0usize;
    for (name, values) in groups {
        if values.len() < 2 {
            return Err(Error::validation(format!(
                "group {name} has fewer than 2 values"
            )));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        sse += values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        means.push(mean);
        sizes.push(n);
        n_total += n;
    }
    let df = (n_total - k) as f64;
    let mse = sse / df;
    if !(mse.is_finite() && mse > 0.0) {
        return Err(Error::compute(
            "zero pooled within-group variance; studentized range undefined",
        ));
    }
    let q_crit = studentized_range_quantile(1.0 - alpha, k, df);
    let mut records = Vec::with_capacity(k * (k - 1));
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let se = (mse / 2.0 * (1.0 / sizes[i] as f64 + 1.0 / sizes[j] as f64)).sqrt();
            let diff = means[i] - means[j];
            let q_obs = diff.abs() / se;
            let p = (1.0 - studentized_range_cdf(q_obs, k, df)).clamp(0.0, 1.0);
            records.push(TukeyRecord {
                group_i: groups[i].0.clone(),
                group_j: groups[j].0.clone(),
                diff,
                ci_lo: diff - q_crit * se,
                ci_hi: diff + q_crit * se,
                p,
            });
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------
// Studentized range distribution, by direct numeric quadrature.
//
// For k groups and infinite degrees of freedom,
//   F(q) = k * Integral phi(z) * [Phi(z) - Phi(z - q)]^(k-1) dz,
// the probability that one of k standard normals is the maximum and the
// rest lie within q below it. For finite df, the range is divided by an
// independent chi_df / sqrt(df) scale s, so
//   F(q) = Integral f(s) * F_inf(q * s) ds
// with f the density of chi_df / sqrt(df). Both integrals use composite
// 16-point Gauss-Legendre panels sized for ~1e-6 absolute accuracy.
// ---------------------------------------------------------------------

/// 16-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL_WEIGHTS: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// Composite Gauss-Legendre quadrature of `f` over [a, b] in `panels`
/// equal panels.
fn gauss_legendre(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        for i in 0..8 {
            total += GL_WEIGHTS[i] * half * (f(mid - half * GL_NODES[i]) + f(mid + half * GL_NODES[i]));
        }
    }
    total
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CDF of the studentized range with k groups and infinite df.
fn srange_cdf_inf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if q >= 30.0 {
        // P(range of k normals > 30) is below 1e-90 for any feasible k.
        return 1.0;
    }
    let a = -8.5;
    let b = q + 8.5;
    let panels = ((b - a) / 0.5).ceil() as usize;
    let v = gauss_legendre(a, b, panels, |z| {
        let inner = std_normal_cdf(z) - std_normal_cdf(z - q);
        std_normal_pdf(z) * inner.powi(k as i32 - 1)
    });
    (k as f64 * v).clamp(0.0, 1.0)
}

/// Log-density of s = chi_df / sqrt(df) at u > 0.
fn ln_scaled_chi_pdf(u: f64, df: f64) -> f64 {
    0.5 * df * df.ln() + (df - 1.0) * u.ln() - 0.5 * df * u * u
        - (0.5 * df - 1.0) * std::f64::consts::LN_2
        - ln_gamma(0.5 * df)
}

/// CDF of the studentized range with k groups and df degrees of freedom.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "need at least 2 groups");
    if q <= 0.0 {
        return 0.0;
    }
    if !df.is_finite() || df > 1e5 {
        return srange_cdf_inf(q, k);
    }
    // Integrate over the scale. For moderate df the density of s
    // concentrates at 1 with sd ~ 1/sqrt(2 df); small df needs the full
    // positive axis.
    let (lo, hi) = if df > 100.0 {
        let w = 12.0 / (2.0 * df).sqrt();
        ((1.0 - w).max(1e-10), 1.0 + w)
    } else {
        // Small df: the scale density is wide and right-skewed; its mass
        // above 13 is below 1e-30 already at df = 1.
        (1e-10, 13.0)
    };
    let panels = (((hi - lo) / 0.25).ceil() as usize).clamp(8, 64);
    let v = gauss_legendre(lo, hi, panels, |u| {
        ln_scaled_chi_pdf(u, df).exp() * srange_cdf_inf(q * u, k)
    });
    v.clamp(0.0, 1.0)
}

/// Quantile of the studentized range: the q with CDF(q) = p, by
/// bisection.
pub fn studentized_range_quantile(p: f64, k: usize, df: f64) -> f64 {
    assert!((0.0..1.0).contains(&p) && p > 0.0, "p outside (0, 1)");
    let mut lo = 0.0;
    let mut hi = 1.0;
    while studentized_range_cdf(hi, k, df) < p {
        hi *= 2.0;
        if hi > 1e4 {
            break;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if studentized_range_cdf(mid, k, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}
