use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EssaySet, Vocabulary, PAD};
use crate::error::{Error, Result};

/// Essays padded with PAD to the batch's longest essay.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub essay_ids: Vec<i64>,
    /// `B × L`, row-major.
    pub indices: Vec<usize>,
    /// `B × L`; true exactly at non-PAD positions.
    pub mask: Vec<bool>,
    pub targets: Vec<f64>,
    pub len: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[bool]) {
        let span = i * self.len..(i + 1) * self.len;
        (&self.indices[span.clone()], &self.mask[span])
    }

    /// Packs already-encoded essays.
    pub fn from_rows(rows: &[(i64, Vec<usize>, f64)]) -> Self {
        let len = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut batch = Batch {
            essay_ids: Vec::with_capacity(rows.len()),
            indices: Vec::with_capacity(rows.len() * len),
            mask: Vec::with_capacity(rows.len() * len),
            targets: Vec::with_capacity(rows.len()),
            len,
        };
        for (id, idx, target) in rows {
            batch.essay_ids.push(*id);
            batch.indices.extend(idx);
            batch.indices.extend(std::iter::repeat_n(PAD, len - idx.len()));
            batch.mask.extend(idx.iter().map(|_| true));
            batch.mask.extend(std::iter::repeat_n(false, len - idx.len()));
            batch.targets.push(*target);
        }
        batch
    }
}

/// Shuffles the set with `shuffle_seed` and cuts it into batches; the last
/// batch may be short.
pub fn make_batches(set: &EssaySet, vocab: &Vocabulary, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Usage("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<(i64, Vec<usize>, f64)> = chunk
                .iter()
                .map(|&i| {
                    let e = &set.essays[i];
                    (e.essay_id, vocab.encode(&e.tokens), e.normalized_score)
                })
                .collect();
            Batch::from_rows(&rows)
        })
        .collect())
}
