//! Mini-batch training with RMSProp and validation-based model selection.

pub mod backward;
pub mod batch;
pub mod config;
pub mod loss;
pub mod rmsprop;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Essay, EssaySet, ScoreRange, Vocabulary};
use crate::embedding::{build_embedding_matrix, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::qwk;
use crate::network::{forward, ModelParameters};
use crate::tensor::Real;

pub use backward::{backward, Gradients};
pub use batch::{make_batches, Batch};
pub use config::TrainConfig;
pub use loss::mse_loss;
pub use rmsprop::{rmsprop_step, RmsPropState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Inference-mode MSE over the training set after the epoch.
    pub train_mse: f64,
    pub val_qwk: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Snapshot with the highest validation kappa (earliest on ties), or the
    /// initial parameters when no epoch ran.
    pub params: ModelParameters<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// splitmix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inference-mode normalized predictions, in essay order.
pub fn predict_normalized<T: Real>(params: &ModelParameters<T>, vocab: &Vocabulary, essays: &[Essay]) -> Vec<f64> {
    essays
        .par_iter()
        .map(|e| forward(&vocab.encode(&e.tokens), params, None).as_f64())
        .collect()
}

/// Predictions rescaled to the integer score range.
pub fn predict_scores<T: Real>(
    params: &ModelParameters<T>,
    vocab: &Vocabulary,
    essays: &[Essay],
    range: &ScoreRange,
) -> Result<Vec<i64>> {
    predict_normalized(params, vocab, essays)
        .into_iter()
        .map(|y| range.denormalize(y))
        .collect()
}

pub fn evaluate_mse<T: Real>(params: &ModelParameters<T>, vocab: &Vocabulary, set: &EssaySet) -> Result<f64> {
    let targets: Vec<f64> = set.essays.iter().map(|e| e.normalized_score).collect();
    mse_loss(&targets, &predict_normalized(params, vocab, &set.essays))
}

pub fn evaluate_qwk<T: Real>(params: &ModelParameters<T>, vocab: &Vocabulary, set: &EssaySet) -> Result<f64> {
    let predicted = predict_scores(params, vocab, &set.essays, &set.range)?;
    let actual: Vec<i64> = set.essays.iter().map(|e| e.raw_score).collect();
    qwk(&actual, &predicted, &set.range)
}

/// Initial model for a vocabulary: embeddings from `table`, Glorot weights.
pub fn init_model<T: Real>(vocab: &Vocabulary, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<ModelParameters<T>> {
    cfg.validate()?;
    if table.dim() != cfg.embedding_dim {
        return Err(Error::Usage(format!(
            "embedding table has dimension {}, config expects {}",
            table.dim(),
            cfg.embedding_dim
        )));
    }
    let mut embedding = build_embedding_matrix(vocab, table, mix_seed(cfg.seed, 1, 0));
    embedding.trainable = cfg.trainable_embeddings;
    ModelParameters::init(cfg.architecture(), embedding, mix_seed(cfg.seed, 2, 0))
}

fn clip<T: Real>(grads: &mut Gradients<T>, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grads.norm().as_f64();
        if norm > max {
            grads.scale(T::from_f64_lossy(max / norm));
        }
    }
}

/// Trains for `cfg.epochs` epochs, evaluating validation kappa after each.
pub fn train<T: Real>(
    train_set: &EssaySet,
    val_set: &EssaySet,
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let mut params = init_model::<T>(vocab, embeddings, cfg)?;
    let mut state = RmsPropState::new(&params, cfg.learning_rate, cfg.rho, cfg.epsilon);
    let mut best = params.clone();
    let mut best_qwk = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches = make_batches(train_set, vocab, cfg.batch_size, mix_seed(cfg.seed, 3, epoch as u64))?;
        for (b, batch) in batches.iter().enumerate() {
            let dropout_seed = mix_seed(cfg.seed, 4 + epoch as u64, b as u64);
            let (_, mut grads) = backward(batch, &params, dropout_seed)?;
            clip(&mut grads, cfg.clip_norm);
            rmsprop_step(&mut params, &grads, &mut state);
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Numeric { parameter: name });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_mse: evaluate_mse(&params, vocab, train_set)?,
            val_qwk: evaluate_qwk(&params, vocab, val_set)?,
        };
        if record.val_qwk > best_qwk {
            best_qwk = record.val_qwk;
            best = params.clone();
            best_epoch = Some(record.epoch);
        }
        history.push(record);
    }

    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
    })
}

/// Epochs (1-based) whose training MSE exceeds the previous epoch's.
pub fn loss_increases(history: &[EpochRecord]) -> Vec<usize> {
    history
        .windows(2)
        .filter(|w| w[1].train_mse > w[0].train_mse)
        .map(|w| w[1].epoch)
        .collect()
}

/// `epoch,train_mse,val_qwk` rows with a header.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_qwk\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_qwk));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, tokenize};

    fn set(rows: &[(&str, i64)]) -> EssaySet {
        let range = ScoreRange::new(1, 0, 2).unwrap();
        let essays = rows
            .iter()
            .enumerate()
            .map(|(i, (t, s))| Essay {
                essay_id: i as i64,
                prompt_id: 1,
                tokens: tokenize(t),
                raw_score: *s,
                normalized_score: range.normalize(*s),
            })
            .collect();
        EssaySet::new(range, essays).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            window_sizes: vec![2],
            filters: 3,
            hidden: 3,
            embedding_dim: 4,
            batch_size: 2,
            epochs: 3,
            dropout: 0.2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let tr = set(&[("a b c", 0), ("b c d", 2)]);
        let va = set(&[("a d", 1)]);
        let vocab = build_vocabulary(&tr.essays, 1).unwrap();
        let table = EmbeddingTable::new(4).unwrap();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let out = train::<f32>(&tr, &va, &vocab, &table, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
        assert_eq!(out.params, init_model(&vocab, &table, &cfg).unwrap());
    }

    #[test]
    fn history_length_and_determinism() {
        let tr = set(&[("a b c", 0), ("b c d", 2), ("a a", 1)]);
        let va = set(&[("a d", 1), ("c c c", 2)]);
        let vocab = build_vocabulary(&tr.essays, 1).unwrap();
        let table = EmbeddingTable::new(4).unwrap();
        let a = train::<f32>(&tr, &va, &vocab, &table, &small_cfg()).unwrap();
        let b = train::<f32>(&tr, &va, &vocab, &table, &small_cfg()).unwrap();
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(a.params.embedding.weights.row(0).iter().all(|&v| v == 0.0));
        let csv = history_csv(&a.history);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,train_mse,val_qwk\n1,"));
    }

    #[test]
    fn empty_training_set_is_usage_error() {
        let va = set(&[("a d", 1)]);
        let vocab = build_vocabulary(&va.essays, 1).unwrap();
        let err = train::<f32>(&set(&[]), &va, &vocab, &EmbeddingTable::new(4).unwrap(), &small_cfg());
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn loss_increase_detection() {
        let h = |m: &[f64]| -> Vec<EpochRecord> {
            m.iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord {
                    epoch: i + 1,
                    train_mse: v,
                    val_qwk: 0.0,
                })
                .collect()
        };
        assert!(loss_increases(&h(&[0.3, 0.2, 0.2, 0.1])).is_empty());
        assert_eq!(loss_increases(&h(&[0.3, 0.2, 0.25, 0.1])), vec![3]);
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(mix_seed(1, 0, 0), mix_seed(1, 0, 1));
        assert_ne!(mix_seed(1, 1, 0), mix_seed(1, 0, 1));
        assert_eq!(mix_seed(9, 3, 4), mix_seed(9, 3, 4));
    }
}
