//! Experiment configuration files.
//!
//! A config is a TOML document mirroring [`ExperimentConfig`]; every key is
//! optional and falls back to its default. Nested settings live in the
//! `[world]`, `[learner]`, `[labelling]` and `[planner]` tables.

use std::path::{Path, PathBuf};

use terra_active::{Error as CoreError, ExperimentConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("invalid value for `{field}`{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvalidValue { field: String, line: Option<usize>, message: String },
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl ConfigError {
    /// Dotted name of the offending key, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } => Some(key),
            ConfigError::InvalidValue { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Reads, parses and validates a config file.
///
/// A relative `label_raster` path is resolved against the file's directory
/// and made absolute, so the resolved config can be replayed from anywhere.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut config = parse_config_str(&text)?;
    if let Some(raster) = &config.label_raster {
        if raster.is_relative() {
            let joined = path.parent().unwrap_or(Path::new(".")).join(raster);
            config.label_raster = Some(std::fs::canonicalize(&joined).unwrap_or(joined));
        }
    }
    Ok(config)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| classify(text, &e))?;
    config.validate().map_err(|e| match e {
        CoreError::InvalidConfig { field, reason } => ConfigError::InvalidValue {
            line: key_line(text, &field),
            field,
            message: reason,
        },
        other => ConfigError::InvalidValue { field: "world".into(), line: None, message: other.to_string() },
    })?;
    Ok(config)
}

/// The fully resolved config as TOML; parsing it back yields the same config.
pub fn to_toml(config: &ExperimentConfig) -> Result<String, ConfigError> {
    Ok(toml::to_string_pretty(config)?)
}

fn classify(text: &str, err: &toml::de::Error) -> ConfigError {
    let message = err.message().trim().to_string();
    let (line, column) = err.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
    let key = key_at(text, line);
    if let Some(rest) = message.strip_prefix("unknown field `") {
        let name = rest.split('`').next().unwrap_or_default();
        let key = match key.as_deref().and_then(|k| k.rsplit_once('.')) {
            Some((table, _)) => format!("{table}.{name}"),
            None => key.filter(|k| k.ends_with(name)).unwrap_or_else(|| name.to_string()),
        };
        return ConfigError::UnknownKey { key, line };
    }
    if message.starts_with("invalid") || message.starts_with("missing field") {
        if let Some(field) = key {
            return ConfigError::InvalidValue { field, line: Some(line), message };
        }
    }
    ConfigError::Syntax { line, column, message }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Dotted key assigned on `line` (1-based), prefixed by the enclosing table.
fn key_at(text: &str, line: usize) -> Option<String> {
    let mut table = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            table = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            let (key, _) = l.split_once('=')?;
            let key = key.trim().trim_matches('"');
            return Some(if table.is_empty() { key.to_string() } else { format!("{table}.{key}") });
        }
    }
    None
}

/// Line of the assignment to dotted `field`, if it appears literally.
fn key_line(text: &str, field: &str) -> Option<usize> {
    (1..=text.lines().count()).find(|&l| key_at(text, l).as_deref() == Some(field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn negative_missions_name_the_field() {
        let err = parse_config_str("budget_seconds = 10.0\nnum_missions = -1\n").unwrap_err();
        assert_eq!(err.field(), Some("num_missions"));
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_config_str("num_missions = 0").unwrap_err();
        assert_eq!(err.field(), Some("num_missions"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config_str("[planner]\nspeed = 3.0\nwarp = 1\n").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { key, line: 3 } if key == "planner.warp"), "{err}");
        let err = parse_config_str("colour = 1").unwrap_err();
        assert_eq!(err.field(), Some("colour"));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_config_str("num_missions = 3\nseeds = [1, 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line, .. } if line >= 2), "{err}");
    }

    #[test]
    fn nested_validation_errors_name_the_table() {
        let err = parse_config_str("[planner]\nspeed = 0.0\n").unwrap_err();
        assert_eq!(err.field(), Some("planner.speed"));
        assert!(matches!(err, ConfigError::InvalidValue { line: Some(2), .. }));
    }

    #[test]
    fn resolved_config_round_trips() {
        for config in [ExperimentConfig::default(), ExperimentConfig::reference()] {
            let text = to_toml(&config).unwrap();
            assert_eq!(parse_config_str(&text).unwrap(), config);
        }
        let mut odd = ExperimentConfig::reference();
        odd.planner.candidate_grid_step = Some(7);
        odd.world.class_weights = Some(vec![0.1, 0.2, 0.3, 0.4]);
        odd.planner.mcts_uct_constant = std::f64::consts::SQRT_2 / 3.0;
        assert_eq!(parse_config_str(&to_toml(&odd).unwrap()).unwrap(), odd);
    }
}
