//! TOML configuration for the `run` subcommand.
//!
//! A config describes one end-to-end study: where the panel comes from
//! (a CSV or a synthetic-panel recipe), how to split it, the model grid
//! to cross-validate, and which reports to emit. Relative paths are
//! resolved against the config file's directory so a study directory
//! is relocatable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statefolio::panel::{Parity, SplitSpec};
use statefolio::portfolio::{AllocationRule, WeightKind, WeightScheme};
use statefolio::synth::SynthSpec;
use statefolio::{Error, Result};

use crate::names::ModelCfg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Synthetic-panel recipe; mutually exclusive with `paths.panel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub split: SplitCfg,
    #[serde(default)]
    pub cv: CvCfg,
    pub models: Vec<ModelCfg>,
    #[serde(default)]
    pub portfolio: PortfolioCfg,
    #[serde(default)]
    pub benchmark: BenchmarkCfg,
    #[serde(default)]
    pub analysis: AnalysisCfg,
    #[serde(default)]
    pub reports: ReportToggles,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Input panel CSV; omit when a `[synth]` block supplies the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<String>,
    /// Factor CSV (`yyyymm` plus factor columns); enables alpha tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<String>,
    /// Risk-free CSV (`yyyymm,rf`); absent means a zero risk-free rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf: Option<String>,
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCfg {
    /// "ts" (month ranges) or "cs" (odd/even calendar months).
    pub mode: String,
    /// Required for "ts": inclusive YYYYMM ranges "start:end".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
    /// Required for "cs": which parity trains ("odd" or "even").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvCfg {
    /// Chronological fold count; a grid of one model skips CV.
    pub folds: usize,
}

impl Default for CvCfg {
    fn default() -> Self {
        CvCfg { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioCfg {
    /// "maxprob" or "probadj".
    pub rule: String,
    /// "equal", "value", or "probscaled".
    pub weights: String,
    pub cap_cutoff: f64,
    pub top_fraction: f64,
    /// Risk-aversion coefficient for the certainty-equivalent return.
    pub gamma: f64,
}

impl Default for PortfolioCfg {
    fn default() -> Self {
        PortfolioCfg {
            rule: "maxprob".into(),
            weights: "equal".into(),
            cap_cutoff: 0.0,
            top_fraction: 0.10,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkCfg {
    pub iters: usize,
    pub draw: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for BenchmarkCfg {
    fn default() -> Self {
        BenchmarkCfg {
            iters: 1000,
            draw: 4886,
            seed: 0,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisCfg {
    /// Factor model for alpha tests: ff3, ff3mom, q4, or q5.
    pub factor_model: String,
    /// Optional variable→category CSV enabling category summaries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<String>,
    /// Significance level for category aggregation.
    pub alpha: f64,
}

impl Default for AnalysisCfg {
    fn default() -> Self {
        AnalysisCfg {
            factor_model: "ff3".into(),
            categories: None,
            alpha: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportToggles {
    pub evaluate: bool,
    pub portfolio: bool,
    pub transitions: bool,
    /// Monte Carlo baseline study; off by default (it is the slowest
    /// report at paper-scale iteration counts).
    pub benchmark: bool,
    pub analyze: bool,
    /// Copy the (possibly synthetic) labeled input panel into the
    /// bundle.
    pub write_panel: bool,
}

impl Default for ReportToggles {
    fn default() -> Self {
        ReportToggles {
            evaluate: true,
            portfolio: true,
            transitions: true,
            benchmark: false,
            analyze: true,
            write_panel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    /// Cross-sectionally z-score features before training/prediction.
    pub normalize: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { normalize: true }
    }
}

/// Parses "START:END" into an inclusive YYYYMM range.
pub fn parse_month_range(text: &str) -> Result<(u32, u32)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::validation(format!("bad month range {text:?} (expected A:B)")))?;
    let lo: u32 = a
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("bad month {a:?}")))?;
    let hi: u32 = b
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("bad month {b:?}")))?;
    Ok((lo, hi))
}

pub fn parse_parity(text: &str) -> Result<Parity> {
    match text.to_ascii_lowercase().as_str() {
        "odd" => Ok(Parity::Odd),
        "even" => Ok(Parity::Even),
        other => Err(Error::validation(format!(
            "bad parity {other:?} (expected odd or even)"
        ))),
    }
}

pub fn parse_rule(name: &str, top_fraction: f64) -> Result<AllocationRule> {
    match name.to_ascii_lowercase().as_str() {
        "maxprob" => Ok(AllocationRule::max_prob()),
        "probadj" => Ok(AllocationRule::ProbabilityAdjusted { top_fraction }),
        other => Err(Error::validation(format!(
            "bad allocation rule {other:?} (expected maxprob or probadj)"
        ))),
    }
}

pub fn parse_weights(name: &str, cap_cutoff: f64) -> Result<WeightScheme> {
    let kind = match name.to_ascii_lowercase().as_str() {
        "equal" => WeightKind::Equal,
        "value" => WeightKind::Value,
        "probscaled" => WeightKind::ProbabilityScaled,
        other => {
            return Err(Error::validation(format!(
                "bad weight scheme {other:?} (expected equal, value, or probscaled)"
            )))
        }
    };
    Ok(WeightScheme {
        kind,
        cap_cutoff_pct: cap_cutoff,
    })
}

impl SplitCfg {
    pub fn to_spec(&self) -> Result<SplitSpec> {
        match self.mode.to_ascii_lowercase().as_str() {
            "ts" => {
                let train = self
                    .train
                    .as_deref()
                    .ok_or_else(|| Error::validation("ts split needs a train range"))?;
                let test = self
                    .test
                    .as_deref()
                    .ok_or_else(|| Error::validation("ts split needs a test range"))?;
                Ok(SplitSpec::TimeSeries {
                    train: parse_month_range(train)?,
                    test: parse_month_range(test)?,
                })
            }
            "cs" => {
                let parity = self
                    .parity
                    .as_deref()
                    .ok_or_else(|| Error::validation("cs split needs a train parity"))?;
                Ok(SplitSpec::CrossSectionalOddEven {
                    train_parity: parse_parity(parity)?,
                })
            }
            other => Err(Error::validation(format!(
                "bad split mode {other:?} (expected ts or cs)"
            ))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::validation(format!("bad config: {e}")))
    }

    /// Joins a config-relative path against the config directory.
    pub fn resolve(base: &Path, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }

    /// Checks everything that can fail before compute starts: input
    /// choice, referenced files, split shape, the model grid, and the
    /// portfolio/analysis settings.
    pub fn validate(&self, base: &Path) -> Result<()> {
        match (&self.paths.panel, &self.synth) {
            (None, None) => {
                return Err(Error::validation(
                    "config needs either paths.panel or a [synth] block",
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "paths.panel and [synth] are mutually exclusive",
                ))
            }
            _ => {}
        }
        if let Some(p) = &self.paths.panel {
            require_file(base, p, "paths.panel")?;
        }
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        if let Some(p) = &self.paths.factors {
            require_file(base, p, "paths.factors")?;
        }
        if let Some(p) = &self.paths.rf {
            require_file(base, p, "paths.rf")?;
        }
        if let Some(p) = &self.analysis.categories {
            require_file(base, p, "analysis.categories")?;
        }
        self.split.to_spec()?;
        if self.models.is_empty() {
            return Err(Error::validation("config needs at least one [[models]] entry"));
        }
        for m in &self.models {
            m.build()?;
        }
        if self.models.len() > 1 && self.cv.folds < 2 {
            return Err(Error::validation(
                "a model grid needs cv.folds >= 2 to pick a winner",
            ));
        }
        parse_rule(&self.portfolio.rule, self.portfolio.top_fraction)?;
        parse_weights(&self.portfolio.weights, self.portfolio.cap_cutoff)?;
        statefolio::analysis::FactorModel::parse(&self.analysis.factor_model)?;
        if !(0.0 < self.analysis.alpha && self.analysis.alpha < 1.0) {
            return Err(Error::validation("analysis.alpha outside (0, 1)"));
        }
        if self.reports.benchmark && (self.benchmark.iters == 0 || self.benchmark.draw == 0) {
            return Err(Error::validation("benchmark.iters and benchmark.draw must be positive"));
        }
        Ok(())
    }
}

fn require_file(base: &Path, p: &str, what: &str) -> Result<()> {
    let full = RunConfig::resolve(base, p);
    if full.is_file() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{what} does not exist: {}",
            full.display()
        )))
    }
}
