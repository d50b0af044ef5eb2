use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xtra::clustering::{DEFAULT_EPSILON, DEFAULT_MAX_ITER};
use xtra::model::ModelConfig;
use xtra::training::TrainConfig;
use xtra::Lang;

use crate::Failure;

/// Every setting of the pipeline. Loaded from a flat TOML file; command-line
/// flags override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub work_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_ids: Option<PathBuf>,
    pub reference: Option<PathBuf>,

    pub min_df: usize,
    pub max_df_ratio: f64,
    pub train_ratio: f64,

    pub topics: usize,
    pub pivot: String,
    pub svd_rank: Option<usize>,
    pub epsilon: f64,
    pub kmeans_max_iter: usize,

    pub hidden_dim: usize,
    pub sem_dim: usize,
    pub dropout: f64,
    pub decoder_init_std: f64,

    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub temperature: f64,
    pub clip_norm: f64,

    pub seed: u64,
    pub top: usize,
    pub svm_c: f64,
    pub dataset: String,
    pub assessments: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            work_dir: PathBuf::from("work"),
            corpus: None,
            embeddings: None,
            embedding_ids: None,
            reference: None,
            min_df: 1,
            max_df_ratio: 1.0,
            train_ratio: 0.8,
            topics: m.topics,
            pivot: "l1".into(),
            svd_rank: None,
            epsilon: DEFAULT_EPSILON,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            hidden_dim: m.hidden_dim,
            sem_dim: m.sem_dim,
            dropout: m.dropout,
            decoder_init_std: m.decoder_init_std,
            epochs: t.epochs,
            lr: t.lr,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_every: t.lr_decay_every,
            batch_size: t.batch_size,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            lambda3: t.lambda3,
            temperature: t.temperature,
            clip_norm: t.clip_norm,
            seed: 0,
            top: 15,
            svm_c: 1.0,
            dataset: "ec-news".into(),
            assessments: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn pivot(&self) -> Result<Lang, Failure> {
        Ok(self.pivot.parse()?)
    }

    /// Model settings for `vocab`-independent construction; `embed_dim` is
    /// filled in from the embedding table.
    pub fn model_config(&self, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            topics: self.topics,
            hidden_dim: self.hidden_dim,
            sem_dim: self.sem_dim,
            embed_dim,
            dropout: self.dropout,
            decoder_init_std: self.decoder_init_std,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every: self.lr_decay_every,
            batch_size: self.batch_size,
            seed: self.seed,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            temperature: self.temperature,
            clip_norm: self.clip_norm,
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.pivot()?;
        self.model_config(1).validate()?;
        self.train_config().validate()?;
        if self.min_df == 0 {
            return Err(Failure::Validation("min_df must be at least 1".into()));
        }
        if !(self.max_df_ratio > 0.0 && self.max_df_ratio <= 1.0) {
            return Err(Failure::Validation("max_df_ratio must lie in (0, 1]".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Failure::Validation("train_ratio must lie in (0, 1)".into()));
        }
        if self.top == 0 {
            return Err(Failure::Validation("top must be positive".into()));
        }
        if !(self.svm_c > 0.0) {
            return Err(Failure::Validation("svm_c must be positive".into()));
        }
        if self.assessments == 0 {
            return Err(Failure::Validation("assessments must be positive".into()));
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    /// A configured input path, checked to exist.
    pub fn input(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf, Failure> {
        let p = value
            .clone()
            .ok_or_else(|| Failure::Validation(format!("`{key}` is required (config key or --{})", key.replace('_', "-"))))?;
        if !p.is_file() {
            return Err(Failure::Validation(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.model_config(1024), ModelConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let ok: RunConfig = toml::from_str("topics = 5\nlr = 0.01\n").unwrap();
        assert_eq!((ok.topics, ok.lr), (5, 0.01));
        assert!(toml::from_str::<RunConfig>("topcis = 5\n").is_err());
    }
}
