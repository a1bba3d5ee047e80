//! Run configuration: defaults, a flat dotted-key config file, and command
//! line overrides, merged in that order (later wins).
//!
//! File syntax, one assignment per line:
//!
//! ```text
//! # comment
//! model.n_prototypes = 64
//! train.learning_rate = 0.001
//! sparsify.ratio = 0.4
//! ```

use crate::CliError;
use protoarg_core::model::ModelConfig;
use protoarg_core::qbaf::SparsifyConfig;
use protoarg_core::train::TrainConfig;
use std::path::Path;

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sparsify: SparsifyConfig,
}

impl RunConfig {
    /// Apply one dotted-path assignment. Unknown keys are usage errors
    /// naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| CliError::usage(format!("unknown config key {key:?} (expected section.field)")))?;
        match section {
            "model" => self.model.set_field(field, value).map_err(|e| CliError::usage(e.to_string())),
            "train" => self.train.set_field(field, value).map_err(|e| CliError::usage(e.to_string())),
            "sparsify" => self.sparsify.set_field(field, value).map_err(|e| CliError::usage(e.to_string())),
            _ => Err(CliError::usage(format!("unknown config key {key:?}"))),
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The effective configuration, echoed into every run directory.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_key_values() {
            out.push_str(&format!("model.{k} = {v}\n"));
        }
        for (k, v) in self.train.to_key_values() {
            out.push_str(&format!("train.{k} = {v}\n"));
        }
        for (k, v) in self.sparsify.to_key_values() {
            out.push_str(&format!("sparsify.{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_effect() {
        let mut cfg = RunConfig::default();
        cfg.set("model.n_prototypes", "16").unwrap();
        cfg.set("train.epochs", "3").unwrap();
        cfg.set("sparsify.ratio", "0.4").unwrap();
        assert_eq!(cfg.model.n_prototypes, 16);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.sparsify.ratio, 0.4);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("model.n_protos", "16").unwrap_err();
        assert!(err.to_string().contains("n_protos"));
        let err = cfg.set("optimizer.lr", "0.1").unwrap_err();
        assert!(err.to_string().contains("optimizer.lr"));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("model.similarity", "negl2").unwrap();
        cfg.set("train.lambda_sp", "0.25").unwrap();
        let text = cfg.to_text();
        let mut rebuilt = RunConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            rebuilt.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(rebuilt.model, cfg.model);
        assert_eq!(rebuilt.train, cfg.train);
        assert_eq!(rebuilt.sparsify, cfg.sparsify);
    }
}
