//! Library half of the `statefolio` command-line tool.
//!
//! The binary is a thin argument parser; everything it does lives here
//! so integration tests can drive the same code paths directly. The
//! pieces are:
//!
//! * [`names`] — the compact model-name grammar (`gbm8`, `mlp2_32`, ...)
//!   shared by `train --model` and the `[[models]]` config entries;
//! * [`config`] — the `run` subcommand's TOML configuration;
//! * [`reports`] — CSV report writers used by the one-shot subcommands
//!   and the pipeline alike;
//! * [`pipeline`] — the end-to-end `run` orchestration and its manifest.

pub mod config;
pub mod names;
pub mod pipeline;
pub mod reports;

use statefolio::panel::{assign_return_states, Panel};
use statefolio::{Error, Result};

/// Prefixes an error with the pipeline stage (or subcommand) that
/// produced it, preserving the validation/compute distinction so exit
/// codes stay faithful.
pub fn stage_error(stage: &str, err: Error) -> Error {
    match err {
        Error::Validation(m) => Error::Validation(format!("{stage}: {m}")),
        Error::Compute(m) => Error::Compute(format!("{stage}: {m}")),
        Error::Io(e) => Error::Validation(format!("{stage}: io: {e}")),
        Error::Csv(e) => Error::Validation(format!("{stage}: csv: {e}")),
    }
}

/// Returns the panel with return states present: panels that already
/// carry labels pass through unchanged, fully unlabeled panels are
/// labeled by the decile rule, and partial labeling is rejected as
/// ambiguous.
pub fn ensure_labeled(panel: Panel) -> Result<Panel> {
    let labeled = panel.rows().iter().filter(|r| r.state.is_some()).count();
    if labeled == panel.len() {
        Ok(panel)
    } else if labeled == 0 {
        assign_return_states(&panel, statefolio::N_STATES)
    } else {
        Err(Error::validation(
            "panel is partially labeled; relabel it or fix the state column",
        ))
    }
}
