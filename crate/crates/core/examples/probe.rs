use std::collections::BTreeMap;
use std::time::Instant;

use statefolio::benchmarks::{monte_carlo_benchmark_study, tukey_hsd, BenchmarkKind};
use statefolio::learners::{train, ModelSpec, PredictionSet, TreeSpec};
use statefolio::panel::{normalize_features, split_sample, Panel, SplitSpec};
use statefolio::portfolio::{form_portfolio, long_short_sharpe, AllocationRule, WeightScheme};
use statefolio::stats::{binomial_test, Alternative};
use statefolio::synth::{generate_panel, SynthSpec};
use statefolio::N_STATES;

const TABLE_MATRIX: [[f64; 10]; 10] = [
    [
        0.1741, 0.1063, 0.0816, 0.0686, 0.0665, 0.0660, 0.0719, 0.0817, 0.1052, 0.1782,
    ],
    [
        0.1137, 0.1073, 0.0963, 0.0891, 0.0879, 0.0875, 0.0918, 0.0993, 0.1090, 0.1180,
    ],
    [
        0.0859, 0.0987, 0.0997, 0.1011, 0.1007, 0.1033, 0.1050, 0.1054, 0.1059, 0.0944,
    ],
    [
        0.0713, 0.0899, 0.1007, 0.1073, 0.1127, 0.1134, 0.1122, 0.1092, 0.1014, 0.0817,
    ],
    [
        0.0696, 0.0860, 0.0992, 0.1094, 0.1128, 0.1203, 0.1167, 0.1098, 0.0981, 0.0779,
    ],
    [
        0.0690, 0.0868, 0.1002, 0.1084, 0.1138, 0.1177, 0.1186, 0.1116, 0.0970, 0.0768,
    ],
    [
        0.0675, 0.0897, 0.1025, 0.1083, 0.1134, 0.1163, 0.1164, 0.1121, 0.0980, 0.0758,
    ],
    [
        0.0753, 0.0973, 0.1054, 0.1067, 0.1102, 0.1123, 0.1092, 0.1058, 0.0984, 0.0794,
    ],
    [
        0.0958, 0.1103, 0.1061, 0.1023, 0.0976, 0.0974, 0.0971, 0.1009, 0.0999, 0.0927,
    ],
    [
        0.1742, 0.1236, 0.0966, 0.0825, 0.0752, 0.0736, 0.0743, 0.0802, 0.0912, 0.1284,
    ],
];

fn planted_transition() -> Vec<Vec<f64>> {
    TABLE_MATRIX
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn means() -> Vec<f64> {
    vec![
        -0.13, -0.07, -0.04, -0.02, -0.005, 0.005, 0.02, 0.04, 0.07, 0.13,
    ]
}

fn main() {
    // --- criterion 3 scale ---
    let spec = SynthSpec {
        n_stocks: 515,
        n_months: 242,
        transition: planted_transition(),
        state_return_means: means(),
        return_noise_sd: 0.02,
        n_features: 0,
        signal_fidelity: 0.0,
        seed: 31,
        start_month: 198001,
    };
    let t0 = Instant::now();
    let panel = generate_panel(&spec).unwrap();
    let months = panel.months();
    let mid = months[months.len() / 2];
    let (is_p, oos_p) = split_sample(
        &panel,
        &SplitSpec::TimeSeries {
            train: (months[0], mid),
            test: (months[months.len() / 2 + 1], *months.last().unwrap()),
        },
    )
    .unwrap();
    eprintln!("c3 panel: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let samples = monte_carlo_benchmark_study(&is_p, &oos_p, 4886, 10_000, 99).unwrap();
    eprintln!("c3 study: {:?}", t0.elapsed());
    for s in &samples {
        eprintln!("  {:?} mean {:.5}", s.classifier, s.mean());
    }
    let t0 = Instant::now();
    let groups: Vec<(String, Vec<f64>)> = samples
        .iter()
        .map(|s| (format!("{:?}", s.classifier), s.draws.clone()))
        .collect();
    let recs = tukey_hsd(&groups, 0.01).unwrap();
    eprintln!("c3 tukey: {:?} ({} pairs)", t0.elapsed(), recs.len());
    let mart = format!("{:?}", BenchmarkKind::Martingale);
    for r in recs
        .iter()
        .filter(|r| r.group_i == mart || r.group_j == mart)
    {
        eprintln!("  {} vs {} p {:.3e}", r.group_i, r.group_j, r.p);
    }

    // --- criterion 5 scale: fidelity 0, 20 seeds ---
    let t0 = Instant::now();
    let mut signif = 0;
    for seed in 0..20u64 {
        let spec = SynthSpec {
            n_stocks: 500,
            n_months: 120,
            transition: vec![vec![0.1; N_STATES]; N_STATES],
            state_return_means: means(),
            return_noise_sd: 0.02,
            n_features: 2,
            signal_fidelity: 0.0,
            seed: 1000 + seed,
            start_month: 201001,
        };
        let panel = normalize_features(&generate_panel(&spec).unwrap()).unwrap();
        let (train_p, test_p) = split_sample(
            &panel,
            &SplitSpec::TimeSeries {
                train: (201001, 201712),
                test: (201801, 201912),
            },
        )
        .unwrap();
        let mut t = TreeSpec::gbm(4, seed);
        t.n_trees = 15;
        let (model, _) = train(&ModelSpec::Tree(t), &train_p).unwrap();
        let preds = model.predict_proba(&test_p).unwrap();
        let no_info = test_p
            .state_distribution(N_STATES)
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let mut hits = 0u64;
        for r in test_p.rows() {
            if preds.get(&r.stock_id, r.month).unwrap().argmax_state == r.state.unwrap() {
                hits += 1;
            }
        }
        let b = binomial_test(hits, test_p.len() as u64, no_info, Alternative::Greater, 0.99)
            .unwrap();
        if b.p_value < 0.01 {
            signif += 1;
            eprintln!("  seed {seed}: acc {:.4} p {:.4} SIG", b.accuracy, b.p_value);
        }
    }
    eprintln!("c5: {:?}, significant {signif}/20", t0.elapsed());

    // --- criterion 12 scale ---
    let t0 = Instant::now();
    let mut probadj_wins = 0;
    for seed in 0..10u64 {
        let spec = SynthSpec {
            n_stocks: 200,
            n_months: 37,
            transition: vec![vec![0.1; N_STATES]; N_STATES],
            state_return_means: means(),
            return_noise_sd: 0.02,
            n_features: 0,
            signal_fidelity: 0.0,
            seed: 50 + seed,
            start_month: 201001,
        };
        let panel = generate_panel(&spec).unwrap();
        let preds = biased_predictions(&panel, 7000 + seed);
        let maxprob = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::max_prob(),
            &WeightScheme::equal(),
        )
        .unwrap();
        let probadj = form_portfolio(
            &preds,
            &panel,
            &AllocationRule::probability_adjusted(),
            &WeightScheme::equal(),
        )
        .unwrap();
        let sr_max =
            long_short_sharpe(&maxprob.long.returns, &maxprob.short.returns).unwrap();
        let sr_adj =
            long_short_sharpe(&probadj.long.returns, &probadj.short.returns).unwrap();
        eprintln!(
            "  seed {seed}: maxprob SR {sr_max:.3} probadj SR {sr_adj:.3} (mp empty {} {})",
            maxprob.long.empty_months.len(),
            maxprob.short.empty_months.len()
        );
        if sr_adj > sr_max {
            probadj_wins += 1;
        }
    }
    eprintln!("c12: {:?}, probadj wins {probadj_wins}/10", t0.elapsed());
}

/// Predictions whose argmax is biased to middle states while p1/p10
/// carry the true ranking signal.
fn biased_predictions(panel: &Panel, seed: u64) -> PredictionSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut preds = PredictionSet::new();
    let mut by_key: BTreeMap<(String, u32), u8> = BTreeMap::new();
    for r in panel.rows() {
        by_key.insert((r.stock_id.clone(), r.month), r.state.unwrap());
    }
    for ((stock, month), state) in by_key {
        let mut probs = [
            0.02, 0.04, 0.08, 0.14, 0.19, 0.19, 0.14, 0.08, 0.04, 0.02,
        ];
        // Per-row jitter on the middle mass decides the argmax.
        for p in probs.iter_mut().take(7).skip(3) {
            *p += rng.gen::<f64>() * 0.02;
        }
        // A small random minority carries an extreme argmax, chosen
        // independently of the truth.
        let u: f64 = rng.gen();
        if u < 0.06 {
            probs[9] = 0.30;
        } else if u < 0.12 {
            probs[0] = 0.30;
        }
        // Rank information: the truly extreme rows get elevated tail
        // probabilities, below the argmax threshold.
        if state == 10 {
            probs[9] += 0.08;
        } else if state == 1 {
            probs[0] += 0.08;
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        preds.insert(stock, month, probs);
    }
    preds
}
