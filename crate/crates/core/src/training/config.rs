use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, Summary};

/// Training hyperparameters. Defaults are the published best configuration;
/// `rho`, `epsilon`, pooling and the remaining knobs are local choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_sizes: Vec<usize>,
    pub filters: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    pub summary: Summary,
    pub min_count: usize,
    pub trainable_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![2, 3, 4],
            filters: 100,
            batch_size: 128,
            hidden: 128,
            dropout: 0.4,
            epochs: 40,
            learning_rate: 0.001,
            embedding_dim: 300,
            pool_size: 2,
            pool_stride: 2,
            seed: 42,
            rho: 0.9,
            epsilon: 1e-7,
            clip_norm: None,
            summary: Summary::Last,
            min_count: 1,
            trainable_embeddings: true,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            embedding_dim: self.embedding_dim,
            windows: self.window_sizes.clone(),
            filters: self.filters,
            hidden: self.hidden,
            pool_size: self.pool_size,
            pool_stride: self.pool_stride,
            summary: self.summary,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !(0.0..1.0).contains(&self.rho) || !positive(self.epsilon) {
            return Err(Error::Usage("learning_rate, rho and epsilon out of range".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Usage("min_count must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !positive(c)) {
            return Err(Error::Usage("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// that are not training fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "window_sizes" => {
                self.window_sizes = value
                    .split(',')
                    .map(|w| parse(key, w))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "filters" => self.filters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "pool_size" => self.pool_size = parse(key, value)?,
            "pool_stride" => self.pool_stride = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value.trim() {
                    "" | "off" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "summary" => self.summary = value.trim().parse()?,
            "min_count" => self.min_count = parse(key, value)?,
            "trainable_embeddings" => self.trainable_embeddings = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
