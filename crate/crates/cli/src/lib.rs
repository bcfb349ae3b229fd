//! Batch experiment runner for minimax value intervals: TOML configs in,
//! a JSON result document and a CSV table out.

pub mod config;
pub mod runner;

pub use config::{parse_config, validate, Diagnostic, ExperimentConfig, ExperimentKind};
pub use runner::{config_hash, run, sign_changes, CliError, RunOptions, RunOutput, RESULT_FILE, TABLE_FILE};

/// Reads, parses and validates a config file. Returns the parsed config and
/// the raw text used for hashing.
pub fn load_config(path: &std::path::Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation {
        config: Some(path.to_path_buf()),
        diagnostics: vec![Diagnostic { field: "<file>".into(), message: e.to_string() }],
    })?;
    let cfg = parse_config(&text).map_err(|diagnostics| CliError::Validation {
        config: Some(path.to_path_buf()),
        diagnostics,
    })?;
    Ok((cfg, text))
}
