//! k-fold cross-validation with separate train, validation and test roles.
//!
//! With `k = 10` each round tests on 2 folds, validates on 1 and trains on
//! the remaining 7 (70/10/20). By default the test window advances two folds
//! per round, so five rounds test every fold once.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Essay, EssaySet, Vocabulary};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::qwk;
use crate::tensor::Real;
use crate::training::{mix_seed, predict_scores, train, EpochRecord, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold of each essay, aligned with the set's essay order.
    pub assignments: Vec<usize>,
    pub essay_ids: Vec<i64>,
    /// Position of each essay in the shuffled order.
    rank: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, essay_id: i64) -> Option<usize> {
        self.essay_ids
            .iter()
            .position(|&id| id == essay_id)
            .map(|i| self.assignments[i])
    }

    /// Set indices in `fold`, in shuffled order.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        let mut members: Vec<(usize, usize)> = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                members.push((self.rank[i], i));
            }
        }
        members.sort_unstable();
        members.into_iter().map(|(_, i)| i).collect()
    }
}

/// Shuffles the set and deals essays round-robin into `k` folds.
pub fn plan_folds(set: &EssaySet, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Usage(format!("k must be at least 2, got {k}")));
    }
    if set.len() < k {
        return Err(Error::Usage(format!("{} essays cannot fill {k} folds", set.len())));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; set.len()];
    let mut rank = vec![0; set.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
        rank[i] = pos;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        essay_ids: set.essays.iter().map(|e| e.essay_id).collect(),
        rank,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    /// Test folds advance by the test width each round.
    #[default]
    Stride,
    /// Test folds advance by one each round; `k` rounds.
    Full,
}

impl FromStr for Rotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride" => Ok(Rotation::Stride),
            "full" => Ok(Rotation::Full),
            other => Err(Error::Usage(format!("unknown rotation {other:?}"))),
        }
    }
}

/// Set indices per role for one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundSplit {
    pub round: usize,
    pub test_folds: Vec<usize>,
    pub val_folds: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Folds per round used for testing: a fifth of `k`, at least one.
pub fn test_width(k: usize) -> usize {
    ((k as f64 / 5.0).round() as usize).max(1)
}

/// Role assignment for every round. With `k = 2` there is no spare fold for
/// validation, so the last eighth (at least one essay) of the training fold is
/// held out instead.
pub fn rounds(plan: &FoldPlan, rotation: Rotation) -> Vec<RoundSplit> {
    let k = plan.k;
    let t = test_width(k);
    let (count, step) = match rotation {
        Rotation::Stride => (k.div_ceil(t), t),
        Rotation::Full => (k, 1),
    };
    (0..count)
        .map(|r| {
            let start = r * step;
            let test_folds: Vec<usize> = (0..t).map(|i| (start + i) % k).collect();
            let mut rest: Vec<usize> = (1..=k - t).map(|i| (start + t + i - 1) % k).collect();
            let collect = |folds: &[usize]| -> Vec<usize> { folds.iter().flat_map(|&f| plan.members(f)).collect() };
            let test = collect(&test_folds);
            if rest.len() >= 2 {
                let val_folds = vec![rest.remove(0)];
                RoundSplit {
                    round: r,
                    val: collect(&val_folds),
                    train: collect(&rest),
                    test_folds,
                    val_folds,
                    test,
                }
            } else {
                let mut pool = collect(&rest);
                let n_val = pool.len().div_ceil(8).max(1).min(pool.len().saturating_sub(1));
                let val = pool.split_off(pool.len() - n_val);
                RoundSplit {
                    round: r,
                    test_folds,
                    val_folds: Vec::new(),
                    train: pool,
                    val,
                    test,
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub rotation: Rotation,
    /// Stop after this many rounds.
    pub max_rounds: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            rotation: Rotation::Stride,
            max_rounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub test_folds: Vec<usize>,
    pub val_folds: Vec<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub qwk: f64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub prompt_id: u8,
    pub k: usize,
    pub seed: u64,
    pub options: CvOptions,
    pub folds: Vec<RoundReport>,
    /// Arithmetic mean of the per-round test kappas.
    pub mean_qwk: f64,
    /// Kappa over all test predictions of all rounds together.
    pub pooled_qwk: f64,
    pub config: TrainConfig,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `fold,qwk` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,qwk\n");
        for f in &self.folds {
            out.push_str(&format!("{},{}\n", f.round, f.qwk));
        }
        out
    }
}

/// Runs every round: vocabulary from the training folds only, training with
/// validation-based selection, kappa on the test folds.
#[allow(clippy::too_many_arguments)]
pub fn run_cv<T: Real>(
    set: &EssaySet,
    mut vocab_builder: impl FnMut(&[&Essay]) -> Result<Vocabulary>,
    embeddings: &EmbeddingTable,
    cfg: &TrainConfig,
    k: usize,
    seed: u64,
    options: &CvOptions,
) -> Result<CvReport> {
    cfg.validate()?;
    let plan = plan_folds(set, k, seed)?;
    let mut splits = rounds(&plan, options.rotation);
    if let Some(max) = options.max_rounds {
        splits.truncate(max.max(1));
    }

    let mut folds = Vec::with_capacity(splits.len());
    let mut all_actual = Vec::new();
    let mut all_predicted = Vec::new();
    for split in &splits {
        let train_set = set.subset(&split.train);
        let val_set = set.subset(&split.val);
        let test_set = set.subset(&split.test);
        let train_refs: Vec<&Essay> = train_set.essays.iter().collect();
        let vocab = vocab_builder(&train_refs)?;

        let round_cfg = TrainConfig {
            seed: mix_seed(cfg.seed, 100, split.round as u64),
            ..cfg.clone()
        };
        let outcome = train::<T>(&train_set, &val_set, &vocab, embeddings, &round_cfg)?;
        let predicted = predict_scores(&outcome.params, &vocab, &test_set.essays, &set.range)?;
        let actual: Vec<i64> = test_set.essays.iter().map(|e| e.raw_score).collect();
        let kappa = qwk(&actual, &predicted, &set.range)?;
        all_actual.extend_from_slice(&actual);
        all_predicted.extend_from_slice(&predicted);
        folds.push(RoundReport {
            round: split.round,
            test_folds: split.test_folds.clone(),
            val_folds: split.val_folds.clone(),
            n_train: train_set.len(),
            n_val: val_set.len(),
            n_test: test_set.len(),
            qwk: kappa,
            best_epoch: outcome.best_epoch,
            history: outcome.history,
        });
    }

    let mean_qwk = folds.iter().map(|f| f.qwk).sum::<f64>() / folds.len() as f64;
    Ok(CvReport {
        prompt_id: set.prompt_id,
        k,
        seed,
        options: options.clone(),
        folds,
        mean_qwk,
        pooled_qwk: qwk(&all_actual, &all_predicted, &set.range)?,
        config: cfg.clone(),
    })
}
