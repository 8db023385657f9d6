//! Run directories for the `vocadapt` binary: every command echoes its
//! resolved configuration, a manifest of its inputs and line-delimited
//! metrics next to its artifacts.

pub mod commands;
pub mod error;
pub mod plot;

pub use commands::{
    cmd_adapt, cmd_eval, cmd_pretrain, cmd_synth, resolve_config, AdaptSummary, EvalSummary,
    PretrainSummary, RunManifest, Speaker,
};
pub use error::{CliError, Result};
