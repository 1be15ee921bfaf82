//! `statefolio` — monthly return-state modeling toolkit.
//!
//! Exit codes: 0 success, 1 validation failure (bad inputs, bad
//! flags), 2 compute failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use statefolio::analysis::{
    category_summary, factor_regression, feature_importance, lifetime_regression, FactorModel,
    FactorTable, LifetimeTarget,
};
use statefolio::benchmarks::{
    martingale_accuracy, monte_carlo_benchmark_study, no_information_accuracy, tukey_hsd,
};
use statefolio::learners::{
    load_model, load_predictions, save_model, train, write_predictions, Model,
};
use statefolio::panel::{
    assign_return_states, load_panel, normalize_features, split_sample, write_panel, Panel,
    Schema, SplitSpec,
};
use statefolio::portfolio::form_portfolio;
use statefolio::synth::{generate_panel, SynthSpec};
use statefolio::transition::{per_transition_accuracy, transition_matrix, transition_mean_returns};
use statefolio::{Error, Result, N_STATES};

use statefolio_cli::config::{
    parse_month_range, parse_parity, parse_rule, parse_weights, RunConfig,
};
use statefolio_cli::names::ModelCfg;
use statefolio_cli::pipeline::run_pipeline;
use statefolio_cli::reports::{
    load_categories, load_month_series, write_category_csv, write_certainty_csv,
    write_factors_csv, write_importance_csv, write_lifetime_csv, write_matrix_csv,
    write_metrics_csv, write_perf_csv, write_train_report_csv, write_tukey_csv,
    BaselineAccuracy,
};
use statefolio_cli::{ensure_labeled, stage_error};

#[derive(Parser)]
#[command(name = "statefolio", version, about = "Monthly return-state modeling toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a panel CSV and rewrite it in canonical form.
    Ingest {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign cross-sectional return states (1..=10) to every month.
    Label {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a panel into train and test samples.
    Split {
        #[arg(long)]
        panel: PathBuf,
        /// "ts" (month ranges) or "cs" (odd/even calendar months).
        #[arg(long)]
        mode: String,
        /// Inclusive train range "YYYYMM:YYYYMM" (ts mode).
        #[arg(long)]
        train: Option<String>,
        /// Inclusive test range "YYYYMM:YYYYMM" (ts mode).
        #[arg(long)]
        test: Option<String>,
        /// Which calendar-month parity trains: "odd" or "even" (cs mode).
        #[arg(long)]
        parity: Option<String>,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_test: PathBuf,
    },
    /// Generate a synthetic panel from a TOML recipe.
    Synth {
        /// TOML file with the generator parameters.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a labeled panel.
    Train {
        /// Model name: gbm<D>, dart<D>, rf<D>, mlp<L>_<W>, or mlp.
        #[arg(long)]
        model: String,
        #[arg(long)]
        panel: PathBuf,
        /// Output model file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Optional per-round training-loss CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        hp: HyperFlags,
        /// Skip cross-sectional feature normalization.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Predict state probabilities for every panel row.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// Output CSV: stock_id,yyyymm,p1..p10,pred_state.
        #[arg(long)]
        out: PathBuf,
        /// Skip cross-sectional feature normalization.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Score predictions against the labeled panel.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// Baseline(s) to test against: "no-info" and/or "martingale"
        /// (repeatable; default both).
        #[arg(long)]
        benchmark: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Form monthly long/short portfolios from predictions.
    Portfolio {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// "maxprob" or "probadj".
        #[arg(long, default_value = "maxprob")]
        rule: String,
        /// "equal", "value", or "probscaled".
        #[arg(long, default_value = "equal")]
        weights: String,
        /// Drop the smallest-cap percentile [0,100) at formation.
        #[arg(long, default_value_t = 0.0)]
        cap_cutoff: f64,
        /// Leg size as a fraction of the cross-section (probadj rule).
        #[arg(long, default_value_t = 0.10)]
        top_fraction: f64,
        /// Risk-free series CSV (yyyymm,rf) for Sharpe ratios.
        #[arg(long)]
        rf: Option<PathBuf>,
        /// Risk aversion for the certainty-equivalent return.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate state-transition grids from a labeled panel.
    Transitions {
        #[arg(long)]
        panel: PathBuf,
        /// Optional predictions; adds a per-transition accuracy grid.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo baseline-classifier study with Tukey HSD pairs.
    Benchmark {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value_t = 10000)]
        iters: usize,
        /// Stocks drawn per iteration.
        #[arg(long, default_value_t = 4886)]
        draw: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// In-sample month range "YYYYMM:YYYYMM"; default first half.
        #[arg(long)]
        train: Option<String>,
        /// Out-of-sample month range; default second half.
        #[arg(long)]
        test: Option<String>,
        /// Tukey HSD significance level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Optional per-classifier mean-accuracy CSV.
        #[arg(long)]
        means: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction-quality analyses: certainty, lifetime, factors,
    /// importance.
    Analyze {
        /// Which analysis to run.
        #[arg(long)]
        what: String,
        #[arg(long)]
        panel: PathBuf,
        /// Predictions CSV (certainty, lifetime, factors).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Trained model file (importance).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Lifetime target: "accuracy" or "certainty".
        #[arg(long, default_value = "accuracy")]
        target: String,
        /// Variable→category CSV; adds a category summary (lifetime).
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Category-summary output path (lifetime with --categories).
        #[arg(long)]
        categories_out: Option<PathBuf>,
        /// Significance level for the category summary.
        #[arg(long, default_value_t = 0.10)]
        alpha: f64,
        /// Factor CSV (factors).
        #[arg(long)]
        factors: Option<PathBuf>,
        /// "ff3", "ff3mom", "q4", or "q5" (factors).
        #[arg(long, default_value = "ff3")]
        factor_model: String,
        /// Allocation rule for the regressed legs (factors).
        #[arg(long, default_value = "maxprob")]
        rule: String,
        /// Weight scheme for the regressed legs (factors).
        #[arg(long, default_value = "equal")]
        weights: String,
        #[arg(long, default_value_t = 0.0)]
        cap_cutoff: f64,
        #[arg(long, default_value_t = 0.10)]
        top_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        over: RunOverrides,
    },
}

/// Hyperparameter overrides for `train`; unset flags keep the model
/// family's defaults.
#[derive(Args)]
struct HyperFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    row_sample_rate: Option<f64>,
    #[arg(long)]
    col_sample_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    l1_lambda: Option<f64>,
    /// Hidden layer widths, comma separated (e.g. "64,32").
    #[arg(long)]
    hidden: Option<String>,
}

/// Config-key overrides for `run`; every flag replaces the matching
/// config value (the [synth] block has no flag form).
#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    panel: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    rf: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    parity: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Replace the whole model grid with one named model.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    cap_cutoff: Option<f64>,
    #[arg(long)]
    top_fraction: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    draw: Option<usize>,
    #[arg(long)]
    benchmark_seed: Option<u64>,
    #[arg(long)]
    benchmark_alpha: Option<f64>,
    #[arg(long)]
    factor_model: Option<String>,
    #[arg(long)]
    categories: Option<String>,
    #[arg(long)]
    analysis_alpha: Option<f64>,
    /// Enable exactly these reports, comma separated: evaluate,
    /// portfolio, transitions, benchmark, analyze, panel.
    #[arg(long)]
    reports: Option<String>,
    #[arg(long, conflicts_with = "no_normalize")]
    normalize: bool,
    #[arg(long)]
    no_normalize: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}

fn load(panel: &Path) -> Result<Panel> {
    load_panel(panel, &Schema::default())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest { panel, out } => {
            let p = load(&panel).map_err(|e| stage_error("ingest", e))?;
            write_panel(&p, &out)?;
            println!(
                "wrote {}: {} rows, {} months, {} features",
                out.display(),
                p.len(),
                p.months().len(),
                p.n_features()
            );
            Ok(())
        }
        Cmd::Label { panel, out } => {
            let p = load(&panel).map_err(|e| stage_error("label", e))?;
            let labeled =
                assign_return_states(&p, N_STATES).map_err(|e| stage_error("label", e))?;
            write_panel(&labeled, &out)?;
            println!("wrote {}: {} labeled rows", out.display(), labeled.len());
            Ok(())
        }
        Cmd::Split {
            panel,
            mode,
            train,
            test,
            parity,
            out_train,
            out_test,
        } => {
            let p = load(&panel).map_err(|e| stage_error("split", e))?;
            let spec = split_spec_from_flags(&mode, train.as_deref(), test.as_deref(), parity.as_deref())?;
            let (tr, te) = split_sample(&p, &spec).map_err(|e| stage_error("split", e))?;
            write_panel(&tr, &out_train)?;
            write_panel(&te, &out_test)?;
            println!(
                "wrote {} ({} rows) and {} ({} rows)",
                out_train.display(),
                tr.len(),
                out_test.display(),
                te.len()
            );
            Ok(())
        }
        Cmd::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::validation(format!("cannot read {}: {e}", spec.display())))?;
            let recipe: SynthSpec = toml::from_str(&text)
                .map_err(|e| Error::validation(format!("bad synth spec: {e}")))?;
            let p = generate_panel(&recipe).map_err(|e| stage_error("synth", e))?;
            write_panel(&p, &out)?;
            println!(
                "wrote {}: {} stocks x {} months",
                out.display(),
                recipe.n_stocks,
                recipe.n_months
            );
            Ok(())
        }
        Cmd::Train {
            model,
            panel,
            out,
            report,
            hp,
            no_normalize,
        } => {
            let p = prepare_panel(&panel, !no_normalize, "train")?;
            let cfg = model_cfg_from_flags(&model, &hp)?;
            let spec = cfg.build()?;
            let (trained, train_report) =
                train(&spec, &p).map_err(|e| stage_error("train", e))?;
            save_model(&trained, &out).map_err(|e| stage_error("train", e))?;
            if let Some(path) = report {
                write_train_report_csv(&path, &train_report)?;
            }
            let final_loss = train_report.loss_by_round.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {model}: {} rounds, final loss {final_loss:.6} bits, wrote {}",
                train_report.rounds_run,
                out.display()
            );
            Ok(())
        }
        Cmd::Predict {
            model,
            panel,
            out,
            no_normalize,
        } => {
            let m = load_model(&model).map_err(|e| stage_error("predict", e))?;
            let p = load(&panel).map_err(|e| stage_error("predict", e))?;
            let p = if no_normalize {
                p
            } else {
                normalize_features(&p).map_err(|e| stage_error("predict", e))?
            };
            let preds = m.predict_proba(&p).map_err(|e| stage_error("predict", e))?;
            write_predictions(&preds, &out)?;
            println!("wrote {}: {} predictions", out.display(), preds.len());
            Ok(())
        }
        Cmd::Evaluate {
            pred,
            panel,
            benchmark,
            out,
        } => {
            let p = ensure_labeled(load(&panel)?).map_err(|e| stage_error("evaluate", e))?;
            let preds = load_predictions(&pred).map_err(|e| stage_error("evaluate", e))?;
            let choices = if benchmark.is_empty() {
                vec!["no-info".to_string(), "martingale".to_string()]
            } else {
                benchmark
            };
            let mut baselines = Vec::new();
            for c in &choices {
                let accuracy = match c.as_str() {
                    "no-info" => no_information_accuracy(&p.state_distribution(N_STATES))?,
                    "martingale" => martingale_accuracy(&p).unwrap_or(f64::NAN),
                    other => {
                        return Err(Error::validation(format!(
                            "bad benchmark {other:?} (expected no-info or martingale)"
                        )))
                    }
                };
                baselines.push(BaselineAccuracy {
                    name: c.clone(),
                    accuracy,
                });
            }
            write_metrics_csv(&out, &p, &preds, &baselines)
                .map_err(|e| stage_error("evaluate", e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Portfolio {
            pred,
            panel,
            rule,
            weights,
            cap_cutoff,
            top_fraction,
            rf,
            gamma,
            out,
        } => {
            let p = load(&panel).map_err(|e| stage_error("portfolio", e))?;
            let preds = load_predictions(&pred).map_err(|e| stage_error("portfolio", e))?;
            let rule = parse_rule(&rule, top_fraction)?;
            let scheme = parse_weights(&weights, cap_cutoff)?;
            let set = form_portfolio(&preds, &p, &rule, &scheme)
                .map_err(|e| stage_error("portfolio", e))?;
            let rf_series = match rf {
                Some(path) => Some(load_month_series(&path)?),
                None => None,
            };
            write_perf_csv(&out, &set, &p, rf_series.as_ref(), gamma)
                .map_err(|e| stage_error("portfolio", e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Transitions { panel, pred, out } => {
            let p = ensure_labeled(load(&panel)?).map_err(|e| stage_error("transitions", e))?;
            let prob = transition_matrix(&p).map_err(|e| stage_error("transitions", e))?;
            let mean = transition_mean_returns(&p).map_err(|e| stage_error("transitions", e))?;
            let mut grids = vec![("probability", &prob), ("mean_return", &mean)];
            let acc;
            if let Some(path) = pred {
                let preds = load_predictions(&path).map_err(|e| stage_error("transitions", e))?;
                acc = per_transition_accuracy(&p, &preds)
                    .map_err(|e| stage_error("transitions", e))?;
                grids.push(("accuracy", &acc));
            }
            write_matrix_csv(&out, &grids).map_err(|e| stage_error("transitions", e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Benchmark {
            panel,
            iters,
            draw,
            seed,
            train,
            test,
            alpha,
            means,
            out,
        } => {
            let p = ensure_labeled(load(&panel)?).map_err(|e| stage_error("benchmark", e))?;
            let spec = benchmark_split(&p, train.as_deref(), test.as_deref())?;
            let (is_panel, oos_panel) =
                split_sample(&p, &spec).map_err(|e| stage_error("benchmark", e))?;
            let samples = monte_carlo_benchmark_study(&is_panel, &oos_panel, draw, iters, seed)
                .map_err(|e| stage_error("benchmark", e))?;
            if let Some(path) = means {
                let mut text = String::from("classifier,mean_accuracy\n");
                for s in &samples {
                    text.push_str(&format!("{},{}\n", s.classifier.name(), s.mean()));
                }
                std::fs::write(&path, text)?;
            }
            let groups: Vec<(String, Vec<f64>)> = samples
                .into_iter()
                .map(|s| (s.classifier.name().to_string(), s.draws))
                .collect();
            let records = tukey_hsd(&groups, alpha).map_err(|e| stage_error("benchmark", e))?;
            write_tukey_csv(&out, &records).map_err(|e| stage_error("benchmark", e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Analyze {
            what,
            panel,
            pred,
            model,
            target,
            categories,
            categories_out,
            alpha,
            factors,
            factor_model,
            rule,
            weights,
            cap_cutoff,
            top_fraction,
            out,
        } => {
            let needs_pred = |p: &Option<PathBuf>| {
                p.clone()
                    .ok_or_else(|| Error::validation(format!("--what {what} needs --pred")))
            };
            match what.as_str() {
                "certainty" => {
                    let preds = load_predictions(&needs_pred(&pred)?)
                        .map_err(|e| stage_error("analyze", e))?;
                    write_certainty_csv(&out, &preds).map_err(|e| stage_error("analyze", e))?;
                }
                "lifetime" => {
                    let p = ensure_labeled(load(&panel)?).map_err(|e| stage_error("analyze", e))?;
                    let preds = load_predictions(&needs_pred(&pred)?)
                        .map_err(|e| stage_error("analyze", e))?;
                    let tgt = match target.as_str() {
                        "accuracy" => LifetimeTarget::Accuracy,
                        "certainty" => LifetimeTarget::Certainty,
                        other => {
                            return Err(Error::validation(format!(
                                "bad target {other:?} (expected accuracy or certainty)"
                            )))
                        }
                    };
                    let reg = lifetime_regression(&p, &preds, tgt)
                        .map_err(|e| stage_error("analyze", e))?;
                    write_lifetime_csv(&out, &reg).map_err(|e| stage_error("analyze", e))?;
                    if let Some(path) = categories {
                        let cats = load_categories(&path)?;
                        let summaries = category_summary(&reg.variables, &cats, alpha)
                            .map_err(|e| stage_error("analyze", e))?;
                        let cat_out = categories_out.ok_or_else(|| {
                            Error::validation("--categories needs --categories-out")
                        })?;
                        write_category_csv(&cat_out, &summaries)
                            .map_err(|e| stage_error("analyze", e))?;
                    }
                }
                "factors" => {
                    let p = load(&panel).map_err(|e| stage_error("analyze", e))?;
                    let preds = load_predictions(&needs_pred(&pred)?)
                        .map_err(|e| stage_error("analyze", e))?;
                    let table_path = factors
                        .ok_or_else(|| Error::validation("--what factors needs --factors"))?;
                    let table = FactorTable::from_csv(&table_path)
                        .map_err(|e| stage_error("analyze", e))?;
                    let fm = FactorModel::parse(&factor_model)?;
                    let rule = parse_rule(&rule, top_fraction)?;
                    let scheme = parse_weights(&weights, cap_cutoff)?;
                    let set = form_portfolio(&preds, &p, &rule, &scheme)
                        .map_err(|e| stage_error("analyze", e))?;
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
                    write_factors_csv(&out, &borrowed, fm)
                        .map_err(|e| stage_error("analyze", e))?;
                }
                "importance" => {
                    let model_path = model
                        .ok_or_else(|| Error::validation("--what importance needs --model"))?;
                    let m = load_model(&model_path).map_err(|e| stage_error("analyze", e))?;
                    if matches!(m, Model::Mlp(_)) {
                        return Err(Error::validation(
                            "variable importance is defined for tree ensembles only",
                        ));
                    }
                    let p = load(&panel).map_err(|e| stage_error("analyze", e))?;
                    let records =
                        feature_importance(&m).map_err(|e| stage_error("analyze", e))?;
                    write_importance_csv(&out, &records, p.feature_names())
                        .map_err(|e| stage_error("analyze", e))?;
                }
                other => {
                    return Err(Error::validation(format!(
                        "bad --what {other:?} (expected certainty, lifetime, factors, or importance)"
                    )))
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Run { config, over } => {
            let mut cfg = RunConfig::load(&config)?;
            apply_overrides(&mut cfg, over)?;
            let base = config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf();
            let summary = run_pipeline(&cfg, &base)?;
            println!(
                "bundle {} ({} files, model {})",
                summary.out_dir.display(),
                summary.files.len(),
                summary.selected_model
            );
            Ok(())
        }
    }
}

/// Loads, labels, and (optionally) normalizes a panel for training.
fn prepare_panel(path: &Path, normalize: bool, stage: &str) -> Result<Panel> {
    let p = ensure_labeled(load(path)?).map_err(|e| stage_error(stage, e))?;
    if normalize {
        normalize_features(&p).map_err(|e| stage_error(stage, e))
    } else {
        Ok(p)
    }
}

fn split_spec_from_flags(
    mode: &str,
    train: Option<&str>,
    test: Option<&str>,
    parity: Option<&str>,
) -> Result<SplitSpec> {
    match mode.to_ascii_lowercase().as_str() {
        "ts" => {
            let train = train.ok_or_else(|| Error::validation("ts mode needs --train A:B"))?;
            let test = test.ok_or_else(|| Error::validation("ts mode needs --test A:B"))?;
            Ok(SplitSpec::TimeSeries {
                train: parse_month_range(train)?,
                test: parse_month_range(test)?,
            })
        }
        "cs" => {
            let parity = parity.ok_or_else(|| Error::validation("cs mode needs --parity"))?;
            Ok(SplitSpec::CrossSectionalOddEven {
                train_parity: parse_parity(parity)?,
            })
        }
        other => Err(Error::validation(format!(
            "bad mode {other:?} (expected ts or cs)"
        ))),
    }
}

/// Explicit ranges when given; otherwise the chronological first half
/// trains and the second half tests.
fn benchmark_split(panel: &Panel, train: Option<&str>, test: Option<&str>) -> Result<SplitSpec> {
    match (train, test) {
        (Some(a), Some(b)) => Ok(SplitSpec::TimeSeries {
            train: parse_month_range(a)?,
            test: parse_month_range(b)?,
        }),
        (None, None) => {
            let months = panel.months();
            if months.len() < 2 {
                return Err(Error::validation("panel needs at least 2 months to split"));
            }
            let mid = months.len() / 2;
            Ok(SplitSpec::TimeSeries {
                train: (months[0], months[mid - 1]),
                test: (months[mid], *months.last().unwrap()),
            })
        }
        _ => Err(Error::validation(
            "--train and --test must be given together",
        )),
    }
}

fn model_cfg_from_flags(name: &str, hp: &HyperFlags) -> Result<ModelCfg> {
    let mut cfg = ModelCfg::named(name);
    cfg.seed = hp.seed;
    cfg.n_trees = hp.n_trees;
    cfg.learning_rate = hp.learning_rate;
    cfg.dropout_rate = hp.dropout_rate;
    cfg.row_sample_rate = hp.row_sample_rate;
    cfg.col_sample_rate = hp.col_sample_rate;
    cfg.epochs = hp.epochs;
    cfg.batch_size = hp.batch_size;
    cfg.l1_lambda = hp.l1_lambda;
    if let Some(text) = &hp.hidden {
        let widths: Result<Vec<usize>> = text
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::validation(format!("bad hidden width {w:?}")))
            })
            .collect();
        cfg.hidden = Some(widths?);
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, over: RunOverrides) -> Result<()> {
    if let Some(v) = over.panel {
        cfg.paths.panel = Some(v);
        cfg.synth = None;
    }
    if let Some(v) = over.factors {
        cfg.paths.factors = Some(v);
    }
    if let Some(v) = over.rf {
        cfg.paths.rf = Some(v);
    }
    if let Some(v) = over.out_dir {
        cfg.paths.out_dir = v;
    }
    if let Some(v) = over.mode {
        cfg.split.mode = v;
    }
    if let Some(v) = over.train {
        cfg.split.train = Some(v);
    }
    if let Some(v) = over.test {
        cfg.split.test = Some(v);
    }
    if let Some(v) = over.parity {
        cfg.split.parity = Some(v);
    }
    if let Some(v) = over.folds {
        cfg.cv.folds = v;
    }
    if let Some(name) = over.model {
        let mut m = ModelCfg::named(&name);
        if let Some(seed) = over.model_seed {
            m.seed = seed;
        }
        cfg.models = vec![m];
    } else if let Some(seed) = over.model_seed {
        if cfg.models.len() != 1 {
            return Err(Error::validation(
                "--model-seed without --model needs a single-model config",
            ));
        }
        cfg.models[0].seed = seed;
    }
    if let Some(v) = over.rule {
        cfg.portfolio.rule = v;
    }
    if let Some(v) = over.weights {
        cfg.portfolio.weights = v;
    }
    if let Some(v) = over.cap_cutoff {
        cfg.portfolio.cap_cutoff = v;
    }
    if let Some(v) = over.top_fraction {
        cfg.portfolio.top_fraction = v;
    }
    if let Some(v) = over.gamma {
        cfg.portfolio.gamma = v;
    }
    if let Some(v) = over.iters {
        cfg.benchmark.iters = v;
    }
    if let Some(v) = over.draw {
        cfg.benchmark.draw = v;
    }
    if let Some(v) = over.benchmark_seed {
        cfg.benchmark.seed = v;
    }
    if let Some(v) = over.benchmark_alpha {
        cfg.benchmark.alpha = v;
    }
    if let Some(v) = over.factor_model {
        cfg.analysis.factor_model = v;
    }
    if let Some(v) = over.categories {
        cfg.analysis.categories = Some(v);
    }
    if let Some(v) = over.analysis_alpha {
        cfg.analysis.alpha = v;
    }
    if let Some(list) = over.reports {
        let mut toggles = statefolio_cli::config::ReportToggles {
            evaluate: false,
            portfolio: false,
            transitions: false,
            benchmark: false,
            analyze: false,
            write_panel: false,
        };
        for item in list.split(',') {
            match item.trim() {
                "evaluate" => toggles.evaluate = true,
                "portfolio" => toggles.portfolio = true,
                "transitions" => toggles.transitions = true,
                "benchmark" => toggles.benchmark = true,
                "analyze" => toggles.analyze = true,
                "panel" => toggles.write_panel = true,
                "" => {}
                other => {
                    return Err(Error::validation(format!("unknown report {other:?}")))
                }
            }
        }
        cfg.reports = toggles;
    }
    if over.normalize {
        cfg.options.normalize = true;
    }
    if over.no_normalize {
        cfg.options.normalize = false;
    }
    Ok(())
}
