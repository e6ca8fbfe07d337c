use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Reads and validates a `key=value` configuration file. Relative paths are
/// resolved against the file's directory.
pub fn validate_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path.parent())
}

/// Parses configuration text. Absent keys keep their defaults; every problem
/// found is reported in one aggregated error.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {lineno}: expected key=value, got '{line}'"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            errors.push(format!("line {lineno}: duplicate key '{key}'"));
            continue;
        }
        if let Err(msg) = apply(&mut cfg, key, value, base_dir) {
            errors.push(format!("line {lineno}: {msg}"));
        }
    }

    errors.extend(cfg.invariant_errors());
    for (lang, inputs) in &cfg.languages {
        for (kind, p) in [
            ("vectors", &inputs.vectors),
            ("train", &inputs.train),
            ("dev", &inputs.dev),
            ("unlabeled", &inputs.unlabeled),
            ("alignment", &inputs.alignment),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    errors.push(format!("{kind}.{lang}: file not found: {}", p.display()));
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::ConfigList(errors))
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse value '{value}' for '{key}'"))
}

fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("cannot parse value '{value}' for '{key}' (expected true/false)")),
    }
}

fn apply(cfg: &mut TrainConfig, key: &str, value: &str, base: Option<&Path>) -> std::result::Result<(), String> {
    let resolve = |v: &str| -> PathBuf {
        let p = PathBuf::from(v);
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    };
    match key {
        "learning_rate" => cfg.learning_rate = num(key, value)?,
        "max_epochs" => cfg.max_epochs = num(key, value)?,
        "patience" => cfg.patience = num(key, value)?,
        "dropout" => cfg.dropout = num(key, value)?,
        "lambda" => cfg.lambda = num(key, value)?,
        "disc_interval" => cfg.disc_interval = num(key, value)?,
        "disc_hidden" => cfg.disc_hidden = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "lstm_hidden" => cfg.lstm_hidden = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "beta1" => cfg.beta1 = num(key, value)?,
        "beta2" => cfg.beta2 = num(key, value)?,
        "epsilon" => cfg.epsilon = num(key, value)?,
        "weight_decay" => cfg.weight_decay = num(key, value)?,
        "clip_norm" => cfg.clip_norm = Some(num(key, value)?),
        "clip_gradients" => {
            if !flag(key, value)? {
                cfg.clip_norm = None;
            }
        }
        "train_embeddings" => cfg.train_embeddings = flag(key, value)?,
        "iob2_constraints" => cfg.iob2_constraints = flag(key, value)?,
        "pivot" => cfg.pivot = value.to_string(),
        "max_words" => cfg.max_words = Some(num(key, value)?),
        "output_dir" => cfg.output_dir = Some(resolve(value)),
        _ => {
            let Some((kind, lang)) = key.split_once('.') else {
                return Err(format!("unknown key '{key}'"));
            };
            if lang.is_empty() || lang.contains('.') {
                return Err(format!("unknown key '{key}'"));
            }
            let slot = match kind {
                "vectors" | "train" | "dev" | "unlabeled" | "alignment" => {
                    let inputs = cfg.languages.entry(lang.to_string()).or_default();
                    match kind {
                        "vectors" => &mut inputs.vectors,
                        "train" => &mut inputs.train,
                        "dev" => &mut inputs.dev,
                        "unlabeled" => &mut inputs.unlabeled,
                        _ => &mut inputs.alignment,
                    }
                }
                _ => return Err(format!("unknown key '{key}'")),
            };
            *slot = Some(resolve(value));
        }
    }
    Ok(())
}
