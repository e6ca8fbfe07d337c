use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::math::AdamWConfig;

/// Files supplied for one language.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LanguageInputs {
    pub vectors: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    /// Orthogonal map into the pivot space, in word-vector text format.
    pub alignment: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    AdamW,
    /// Unscaled gradient descent, only for checking the update rule.
    PlainSgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub disc_interval: usize,
    pub disc_hidden: usize,
    pub batch_size: usize,
    pub lstm_hidden: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub train_embeddings: bool,
    pub iob2_constraints: bool,
    pub pivot: String,
    pub max_words: Option<usize>,
    pub languages: BTreeMap<String, LanguageInputs>,
    pub output_dir: Option<PathBuf>,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            max_epochs: 50,
            patience: 5,
            dropout: 0.1,
            lambda: 0.001,
            disc_interval: 10,
            disc_hidden: 100,
            batch_size: 32,
            lstm_hidden: 128,
            seed: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(5.0),
            train_embeddings: false,
            iob2_constraints: false,
            pivot: "en".into(),
            max_words: None,
            languages: BTreeMap::new(),
            output_dir: None,
            optimizer: OptimizerKind::AdamW,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Range checks on the hyperparameters.
    pub fn check(&self) -> Result<()> {
        let errors = self.invariant_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(errors))
        }
    }

    pub(crate) fn invariant_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.lambda >= 0.0) {
            e.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.disc_interval < 1 {
            e.push("disc_interval must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            e.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0) {
            e.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, v) in [("batch_size", self.batch_size), ("lstm_hidden", self.lstm_hidden), ("disc_hidden", self.disc_hidden)] {
            if v == 0 {
                e.push(format!("{name} must be >= 1"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                e.push(format!("clip_norm must be > 0, got {c}"));
            }
        }
        e
    }

    /// Languages with labeled training data, in sorted order.
    pub fn labeled_languages(&self) -> Vec<String> {
        self.languages
            .iter()
            .filter(|(_, i)| i.train.is_some())
            .map(|(l, _)| l.clone())
            .collect()
    }

    /// Every language that needs an embedding space: labeled, dev or unlabeled data.
    pub fn active_languages(&self) -> Vec<String> {
        self.languages
            .iter()
            .filter(|(_, i)| i.train.is_some() || i.dev.is_some() || i.unlabeled.is_some())
            .map(|(l, _)| l.clone())
            .collect()
    }

    /// Checks that the inputs are sufficient to train: at least one labeled
    /// corpus and a vectors file for every active language.
    pub fn check_inputs(&self) -> Result<()> {
        if self.labeled_languages().is_empty() {
            return Err(Error::Config("no labeled training corpus (set train.<lang>=path)".into()));
        }
        let missing: Vec<String> = self
            .active_languages()
            .into_iter()
            .filter(|l| self.languages[l].vectors.is_none())
            .map(|l| format!("missing vectors path: set vectors.{l}=path"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(missing))
        }
    }
}
