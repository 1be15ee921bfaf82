//! The compact model-name grammar and the override set shared by the
//! `train` subcommand's flags and the `[[models]]` blocks of a run
//! config.
//!
//! Names:
//!
//! * `gbm<D>`, `dart<D>`, `rf<D>` — tree ensembles with max depth `D`
//!   (e.g. `gbm8`, `dart6`, `rf4`); tree count, learning rate, dropout
//!   and sampling rates start at the family defaults.
//! * `mlp<L>_<W>` — a network with `L` hidden layers of `W` neurons
//!   each (e.g. `mlp2_32`).
//! * `mlp` — a network whose hidden sizes come entirely from the
//!   `hidden` override (e.g. `hidden = [128, 64, 32, 16]`).

use serde::{Deserialize, Serialize};
use statefolio::learners::{MlpSpec, ModelSpec, TreeSpec};
use statefolio::{Error, Result};

/// A named model plus optional hyperparameter overrides. Fields left
/// unset keep the family defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

impl ModelCfg {
    pub fn named(name: &str) -> Self {
        ModelCfg {
            name: name.to_string(),
            seed: 0,
            n_trees: None,
            learning_rate: None,
            dropout_rate: None,
            row_sample_rate: None,
            col_sample_rate: None,
            epochs: None,
            batch_size: None,
            l1_lambda: None,
            hidden: None,
        }
    }

    /// Resolves the name and overrides into a trainable spec.
    pub fn build(&self) -> Result<ModelSpec> {
        let name = self.name.trim().to_ascii_lowercase();
        if let Some(rest) = name.strip_prefix("mlp") {
            return self.build_mlp(rest);
        }
        for (prefix, make) in [
            ("gbm", TreeSpec::gbm as fn(usize, u64) -> TreeSpec),
            ("dart", TreeSpec::dart),
            ("rf", TreeSpec::rf),
        ] {
            if let Some(rest) = name.strip_prefix(prefix) {
                return self.build_tree(rest, make);
            }
        }
        Err(Error::validation(format!(
            "unknown model name {:?} (expected gbm<D>, dart<D>, rf<D>, mlp<L>_<W>, or mlp)",
            self.name
        )))
    }

    fn build_tree(&self, depth: &str, make: fn(usize, u64) -> TreeSpec) -> Result<ModelSpec> {
        let max_depth: usize = depth
            .parse()
            .map_err(|_| Error::validation(format!("bad tree depth in model name {:?}", self.name)))?;
        for (field, set) in [
            ("epochs", self.epochs.is_some()),
            ("batch_size", self.batch_size.is_some()),
            ("l1_lambda", self.l1_lambda.is_some()),
            ("hidden", self.hidden.is_some()),
        ] {
            if set {
                return Err(Error::validation(format!(
                    "{field} does not apply to tree model {:?}",
                    self.name
                )));
            }
        }
        let mut spec = make(max_depth, self.seed);
        if let Some(v) = self.n_trees {
            spec.n_trees = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.dropout_rate {
            spec.dropout_rate = v;
        }
        if let Some(v) = self.row_sample_rate {
            spec.row_sample_rate = v;
        }
        if let Some(v) = self.col_sample_rate {
            spec.col_sample_rate = v;
        }
        Ok(ModelSpec::Tree(spec))
    }

    fn build_mlp(&self, shape: &str) -> Result<ModelSpec> {
        for (field, set) in [
            ("n_trees", self.n_trees.is_some()),
            ("dropout_rate", self.dropout_rate.is_some()),
            ("row_sample_rate", self.row_sample_rate.is_some()),
            ("col_sample_rate", self.col_sample_rate.is_some()),
        ] {
            if set {
                return Err(Error::validation(format!(
                    "{field} does not apply to network model {:?}",
                    self.name
                )));
            }
        }
        let hidden = if shape.is_empty() {
            self.hidden.clone().ok_or_else(|| {
                Error::validation("model name \"mlp\" needs an explicit hidden-size list")
            })?
        } else {
            if self.hidden.is_some() {
                return Err(Error::validation(format!(
                    "model name {:?} already fixes the hidden sizes; drop the hidden override",
                    self.name
                )));
            }
            let (layers, width) = shape
                .split_once('_')
                .ok_or_else(|| {
                    Error::validation(format!(
                        "bad network shape in model name {:?} (expected mlp<L>_<W>)",
                        self.name
                    ))
                })?;
            let layers: usize = layers.parse().map_err(|_| {
                Error::validation(format!("bad layer count in model name {:?}", self.name))
            })?;
            let width: usize = width.parse().map_err(|_| {
                Error::validation(format!("bad layer width in model name {:?}", self.name))
            })?;
            if layers == 0 || width == 0 {
                return Err(Error::validation("network layers and width must be positive"));
            }
            vec![width; layers]
        };
        let mut spec = MlpSpec::new(hidden, self.seed);
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.l1_lambda {
            spec.l1_lambda = v;
        }
        Ok(ModelSpec::Mlp(spec))
    }
}
