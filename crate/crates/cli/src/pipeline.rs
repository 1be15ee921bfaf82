//! End-to-end `run` orchestration.
//!
//! A run executes ingest (or synthesis) → label → normalize → split →
//! cross-validation → train → predict, then the toggled report stages,
//! and finally writes a manifest naming every seed and output file.
//! Everything is deterministic: rerunning the same config produces a
//! byte-identical bundle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use statefolio::analysis::{
    category_summary, factor_regression, feature_importance, lifetime_regression, FactorModel,
    FactorTable, LifetimeTarget,
};
use statefolio::benchmarks::{
    martingale_accuracy, monte_carlo_benchmark_study, no_information_accuracy, tukey_hsd,
};
use statefolio::learners::{
    cross_validate, save_model, train, write_predictions, Model, ModelSpec,
};
use statefolio::panel::{
    load_panel, normalize_features, split_sample, write_panel, Panel, Schema,
};
use statefolio::portfolio::{form_portfolio, PortfolioSet};
use statefolio::synth::generate_panel;
use statefolio::transition::{per_transition_accuracy, transition_matrix, transition_mean_returns};
use statefolio::{Error, Result, N_STATES};

use crate::config::{parse_rule, parse_weights, RunConfig};
use crate::reports::{
    load_categories, load_month_series, write_category_csv, write_certainty_csv,
    write_cv_csv, write_factors_csv, write_importance_csv, write_lifetime_csv,
    write_matrix_csv, write_metrics_csv, write_perf_csv, write_train_report_csv,
    write_tukey_csv, BaselineAccuracy,
};
use crate::{ensure_labeled, stage_error};

/// Manifest identification string.
pub const BUNDLE_FORMAT: &str = "statefolio-bundle";
/// Bumped whenever the bundle layout changes incompatibly.
pub const BUNDLE_VERSION: u32 = 1;

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Bundle file names (relative to `out_dir`), sorted.
    pub files: Vec<String>,
    pub selected_model: String,
}

/// Display labels for the model grid; duplicate names get a positional
/// suffix so cv tables and the manifest stay unambiguous.
fn grid_labels(config: &RunConfig) -> Vec<String> {
    let names: Vec<&str> = config.models.iter().map(|m| m.name.as_str()).collect();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|x| *x == n).count() > 1 {
                format!("{n}#{i}")
            } else {
                (*n).to_string()
            }
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| Error::validation(format!("cannot create {}: {e}", path.display())))
}

/// Runs the full pipeline described by `config`, resolving relative
/// paths against `base`. Any stage failure aborts with the stage name
/// prefixed to the cause.
pub fn run_pipeline(config: &RunConfig, base: &Path) -> Result<RunSummary> {
    config.validate(base).map_err(|e| stage_error("config", e))?;
    let out_dir = RunConfig::resolve(base, &config.paths.out_dir);
    create_dir(&out_dir)?;
    let mut files: Vec<String> = Vec::new();
    let mut emit = |name: &str| files.push(name.to_string());

    // --- data: synthesize or ingest, then label ---------------------
    let raw = match (&config.synth, &config.paths.panel) {
        (Some(spec), _) => generate_panel(spec).map_err(|e| stage_error("synth", e))?,
        (None, Some(p)) => {
            let path = RunConfig::resolve(base, p);
            load_panel(&path, &Schema::default()).map_err(|e| stage_error("ingest", e))?
        }
        (None, None) => unreachable!("validate() requires one input source"),
    };
    let labeled = ensure_labeled(raw).map_err(|e| stage_error("label", e))?;
    if config.reports.write_panel {
        write_panel(&labeled, out_dir.join("panel.csv")).map_err(|e| stage_error("label", e))?;
        emit("panel.csv");
    }

    // --- normalize (returns/caps/states are untouched) --------------
    let panel = if config.options.normalize {
        normalize_features(&labeled).map_err(|e| stage_error("normalize", e))?
    } else {
        labeled
    };

    // --- split -------------------------------------------------------
    let split_spec = config.split.to_spec()?;
    let (train_panel, test_panel) =
        split_sample(&panel, &split_spec).map_err(|e| stage_error("split", e))?;

    // --- model selection and training --------------------------------
    let specs: Vec<ModelSpec> = config
        .models
        .iter()
        .map(|m| m.build())
        .collect::<Result<_>>()?;
    let labels = grid_labels(config);
    let (best, cv_losses) = if specs.len() > 1 {
        let (best, losses) =
            cross_validate(&specs, &train_panel, config.cv.folds).map_err(|e| stage_error("cv", e))?;
        write_cv_csv(&out_dir.join("cv.csv"), &labels, &losses, best)
            .map_err(|e| stage_error("cv", e))?;
        emit("cv.csv");
        (best, losses)
    } else {
        (0, Vec::new())
    };
    let (model, train_report) =
        train(&specs[best], &train_panel).map_err(|e| stage_error("train", e))?;
    save_model(&model, out_dir.join("model.json")).map_err(|e| stage_error("train", e))?;
    emit("model.json");
    write_train_report_csv(&out_dir.join("train_report.csv"), &train_report)
        .map_err(|e| stage_error("train", e))?;
    emit("train_report.csv");

    // --- out-of-sample predictions -----------------------------------
    let preds = model
        .predict_proba(&test_panel)
        .map_err(|e| stage_error("predict", e))?;
    write_predictions(&preds, out_dir.join("predictions.csv"))
        .map_err(|e| stage_error("predict", e))?;
    emit("predictions.csv");

    // --- reports ------------------------------------------------------
    if config.reports.evaluate {
        let baselines = evaluate_baselines(&panel, &test_panel).map_err(|e| stage_error("evaluate", e))?;
        write_metrics_csv(&out_dir.join("metrics.csv"), &test_panel, &preds, &baselines)
            .map_err(|e| stage_error("evaluate", e))?;
        emit("metrics.csv");
    }

    let mut portfolio_set: Option<PortfolioSet> = None;
    if config.reports.portfolio || (config.reports.analyze && config.paths.factors.is_some()) {
        let rule = parse_rule(&config.portfolio.rule, config.portfolio.top_fraction)?;
        let scheme = parse_weights(&config.portfolio.weights, config.portfolio.cap_cutoff)?;
        portfolio_set = Some(
            form_portfolio(&preds, &panel, &rule, &scheme)
                .map_err(|e| stage_error("portfolio", e))?,
        );
    }
    if config.reports.portfolio {
        let set = portfolio_set.as_ref().expect("formed above");
        let rf = match &config.paths.rf {
            Some(p) => Some(
                load_month_series(&RunConfig::resolve(base, p))
                    .map_err(|e| stage_error("portfolio", e))?,
            ),
            None => None,
        };
        write_perf_csv(
            &out_dir.join("perf.csv"),
            set,
            &panel,
            rf.as_ref(),
            config.portfolio.gamma,
        )
        .map_err(|e| stage_error("portfolio", e))?;
        emit("perf.csv");
    }

    if config.reports.transitions {
        let prob = transition_matrix(&panel).map_err(|e| stage_error("transitions", e))?;
        let mean = transition_mean_returns(&panel).map_err(|e| stage_error("transitions", e))?;
        let acc =
            per_transition_accuracy(&panel, &preds).map_err(|e| stage_error("transitions", e))?;
        write_matrix_csv(
            &out_dir.join("matrix.csv"),
            &[
                ("probability", &prob),
                ("mean_return", &mean),
                ("accuracy", &acc),
            ],
        )
        .map_err(|e| stage_error("transitions", e))?;
        emit("matrix.csv");
    }

    if config.reports.benchmark {
        let b = &config.benchmark;
        let samples = monte_carlo_benchmark_study(&train_panel, &test_panel, b.draw, b.iters, b.seed)
            .map_err(|e| stage_error("benchmark", e))?;
        let mut means = String::from("classifier,mean_accuracy\n");
        for s in &samples {
            means.push_str(&format!("{},{}\n", s.classifier.name(), s.mean()));
        }
        std::fs::write(out_dir.join("benchmark_means.csv"), means)?;
        emit("benchmark_means.csv");
        let groups: Vec<(String, Vec<f64>)> = samples
            .into_iter()
            .map(|s| (s.classifier.name().to_string(), s.draws))
            .collect();
        let records = tukey_hsd(&groups, b.alpha).map_err(|e| stage_error("benchmark", e))?;
        write_tukey_csv(&out_dir.join("table3.csv"), &records)
            .map_err(|e| stage_error("benchmark", e))?;
        emit("table3.csv");
    }

    if config.reports.analyze {
        write_certainty_csv(&out_dir.join("certainty.csv"), &preds)
            .map_err(|e| stage_error("analyze", e))?;
        emit("certainty.csv");
        let categories = match &config.analysis.categories {
            Some(p) => Some(
                load_categories(&RunConfig::resolve(base, p))
                    .map_err(|e| stage_error("analyze", e))?,
            ),
            None => None,
        };
        for (target, stem) in [
            (LifetimeTarget::Accuracy, "lifetime_accuracy"),
            (LifetimeTarget::Certainty, "lifetime_certainty"),
        ] {
            let reg = lifetime_regression(&panel, &preds, target)
                .map_err(|e| stage_error("analyze", e))?;
            write_lifetime_csv(&out_dir.join(format!("{stem}.csv")), &reg)
                .map_err(|e| stage_error("analyze", e))?;
            emit(&format!("{stem}.csv"));
            if let Some(cats) = &categories {
                let summaries = category_summary(&reg.variables, cats, config.analysis.alpha)
                    .map_err(|e| stage_error("analyze", e))?;
                write_category_csv(&out_dir.join(format!("categories_{stem}.csv")), &summaries)
                    .map_err(|e| stage_error("analyze", e))?;
                emit(&format!("categories_{stem}.csv"));
            }
        }
        if let Some(p) = &config.paths.factors {
            let table = FactorTable::from_csv(&RunConfig::resolve(base, p))
                .map_err(|e| stage_error("analyze", e))?;
            let fm = FactorModel::parse(&config.analysis.factor_model)?;
            let set = portfolio_set.as_ref().expect("formed above");
            let mut legs = Vec::new();
            for (name, series) in [
                ("long", &set.long),
                ("short", &set.short),
                ("long_short", &set.long_short),
            ] {
                let r = factor_regression(&series.months, &series.returns, &table, fm)
                    .map_err(|e| stage_error("analyze", e))?;
                legs.push((name, r));
            }
            let borrowed: Vec<(&str, &statefolio::analysis::OlsResult)> =
                legs.iter().map(|(n, r)| (*n, r)).collect();
            write_factors_csv(&out_dir.join("factors.csv"), &borrowed, fm)
                .map_err(|e| stage_error("analyze", e))?;
            emit("factors.csv");
        }
        if !matches!(model, Model::Mlp(_)) {
            let records = feature_importance(&model).map_err(|e| stage_error("analyze", e))?;
            write_importance_csv(
                &out_dir.join("importance.csv"),
                &records,
                panel.feature_names(),
            )
            .map_err(|e| stage_error("analyze", e))?;
            emit("importance.csv");
        }
    }

    // --- manifest (last, so it can list everything else) -------------
    files.sort_unstable();
    let selected_model = labels[best].clone();
    let manifest = build_manifest(config, &labels, best, &cv_losses, &train_report, &files);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::compute(format!("manifest serialization: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")
        .map_err(|e| Error::validation(format!("cannot write manifest: {e}")))?;
    files.push("manifest.json".into());
    files.sort_unstable();

    Ok(RunSummary {
        out_dir,
        files,
        selected_model,
    })
}

/// The baselines the evaluate report tests predictions against:
/// no-information accuracy of the evaluation sample and the martingale
/// accuracy of the whole panel (NaN — reported NA — when the panel has
/// no consecutive labeled observations, e.g. odd/even splits of short
/// panels).
fn evaluate_baselines(panel: &Panel, test_panel: &Panel) -> Result<Vec<BaselineAccuracy>> {
    let no_info = no_information_accuracy(&test_panel.state_distribution(N_STATES))?;
    let martingale = martingale_accuracy(panel).unwrap_or(f64::NAN);
    Ok(vec![
        BaselineAccuracy {
            name: "no-info".into(),
            accuracy: no_info,
        },
        BaselineAccuracy {
            name: "martingale".into(),
            accuracy: martingale,
        },
    ])
}

fn build_manifest(
    config: &RunConfig,
    labels: &[String],
    best: usize,
    cv_losses: &[f64],
    train_report: &statefolio::learners::TrainReport,
    files: &[String],
) -> serde_json::Value {
    let mut seeds = serde_json::Map::new();
    let model_seeds: BTreeMap<&str, u64> = labels
        .iter()
        .zip(&config.models)
        .map(|(label, m)| (label.as_str(), m.seed))
        .collect();
    seeds.insert("models".into(), serde_json::json!(model_seeds));
    if let Some(spec) = &config.synth {
        seeds.insert("synth".into(), serde_json::json!(spec.seed));
    }
    if config.reports.benchmark {
        seeds.insert("benchmark".into(), serde_json::json!(config.benchmark.seed));
    }
    let cv = if cv_losses.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::json!({
            "folds": config.cv.folds,
            "mean_validation_loss_bits": cv_losses,
            "selected_index": best,
        })
    };
    serde_json::json!({
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "selected_model": labels[best],
        "seeds": seeds,
        "cv": cv,
        "train": {
            "rounds_run": train_report.rounds_run,
            "stopped_early": train_report.stopped_early,
            "final_loss_bits": train_report.loss_by_round.last().copied(),
        },
        "config": config,
        "files": files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(dir: &Path) -> RunConfig {
        let toml_text = format!(
            r#"
            [paths]
            out_dir = {:?}

            [synth]
            n_stocks = 60
            n_months = 30
            transition = [
                [0.28, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.28, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.28, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.28, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.28, 0.08, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.08, 0.28, 0.08, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.28, 0.08, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.28, 0.08, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.28, 0.08],
                [0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.28],
            ]
            state_return_means = [-0.09, -0.07, -0.05, -0.03, -0.01, 0.01, 0.03, 0.05, 0.07, 0.09]
            return_noise_sd = 0.02
            n_features = 2
            signal_fidelity = 1.0
            seed = 11

            [split]
            mode = "ts"
            train = "200001:200112"
            test = "200201:200206"

            [[models]]
            name = "gbm4"
            seed = 3
            n_trees = 30

            [benchmark]
            iters = 40
            draw = 30
            seed = 1

            [reports]
            evaluate = true
            portfolio = true
            transitions = true
            benchmark = true
            analyze = true
            write_panel = true
            "#,
            dir.join("bundle").to_str().unwrap(),
        );
        toml::from_str(&toml_text).unwrap()
    }

    #[test]
    fn full_run_writes_every_toggled_report_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let summary = run_pipeline(&cfg, dir.path()).unwrap();
        let expected = [
            "benchmark_means.csv",
            "certainty.csv",
            "importance.csv",
            "lifetime_accuracy.csv",
            "lifetime_certainty.csv",
            "manifest.json",
            "matrix.csv",
            "metrics.csv",
            "model.json",
            "panel.csv",
            "perf.csv",
            "predictions.csv",
            "table3.csv",
            "train_report.csv",
        ];
        assert_eq!(summary.files, expected);
        for f in expected {
            assert!(summary.out_dir.join(f).is_file(), "missing {f}");
        }
        assert_eq!(summary.selected_model, "gbm4");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(summary.out_dir.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["format"], BUNDLE_FORMAT);
        assert_eq!(manifest["seeds"]["models"]["gbm4"], 3);
        assert_eq!(manifest["seeds"]["synth"], 11);
        assert_eq!(manifest["seeds"]["benchmark"], 1);
        // Single-model grid: no cv.csv, null cv block.
        assert!(manifest["cv"].is_null());
        let metrics = std::fs::read_to_string(summary.out_dir.join("metrics.csv")).unwrap();
        assert!(metrics.contains("overall,no-info,benchmark_accuracy,"));
        assert!(metrics.contains("overall,martingale,p_value,"));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.reports.benchmark = false; // keep the test fast
        let first = run_pipeline(&cfg, dir.path()).unwrap();
        let mut snapshots = BTreeMap::new();
        for f in &first.files {
            snapshots.insert(f.clone(), std::fs::read(first.out_dir.join(f)).unwrap());
        }
        let second = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(first.files, second.files);
        for f in &second.files {
            let bytes = std::fs::read(second.out_dir.join(f)).unwrap();
            assert_eq!(&bytes, &snapshots[f], "file {f} changed between runs");
        }
    }

    #[test]
    fn model_grid_runs_cv_and_records_it() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.reports.benchmark = false;
        cfg.reports.analyze = false;
        cfg.reports.portfolio = false;
        cfg.reports.transitions = false;
        cfg.reports.write_panel = false;
        cfg.models.push(crate::names::ModelCfg::named("gbm2"));
        cfg.models[1].seed = 3;
        cfg.models[1].n_trees = Some(30);
        cfg.cv.folds = 3;
        let summary = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(summary.files.contains(&"cv.csv".to_string()));
        let cv = std::fs::read_to_string(summary.out_dir.join("cv.csv")).unwrap();
        assert!(cv.starts_with("model,mean_validation_loss_bits,selected\n"));
        assert!(cv.contains("gbm4,"));
        assert!(cv.contains("gbm2,"));
        assert!(cv.contains(",true\n"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(summary.out_dir.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["cv"]["folds"], 3);
        assert_eq!(
            manifest["selected_model"],
            summary.selected_model.as_str()
        );
    }
}
