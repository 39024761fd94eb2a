//! Reverse-mode gradients of the batch MSE through every layer.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::network::conv::conv1d_backward;
use crate::network::gru::direction_backward;
use crate::network::pool::maxpool_backward;
use crate::network::{forward_trace, Architecture, EssayTrace, Layers, ModelParameters, Summary};
use crate::tensor::{Matrix, Real};
use crate::training::batch::Batch;

/// Essays per parallel work unit. Fixed so that the summation order, and
/// hence the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Gradient of the loss with respect to every parameter. Embedding rows are
/// sparse; PAD never appears.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub embedding: BTreeMap<usize, Vec<T>>,
    pub layers: Layers<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            embedding: BTreeMap::new(),
            layers: Layers::zeros(arch),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.layers.add_assign(&other.layers);
        for (&row, g) in &other.embedding {
            let dst = self.embedding.entry(row).or_insert_with(|| vec![T::zero(); g.len()]);
            for (a, &b) in dst.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.layers.scale(s);
        for g in self.embedding.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> T {
        let mut sq: T = self.layers.tensors().iter().map(|(_, m)| m.sum_squares()).sum();
        for g in self.embedding.values() {
            sq += g.iter().map(|&v| v * v).sum();
        }
        sq.sqrt()
    }

    pub fn first_non_finite(&self) -> Option<String> {
        if let Some((row, _)) = self.embedding.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Some(format!("embedding row {row}"));
        }
        self.layers
            .tensors()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}

/// Accumulates `d_output · ∂output/∂θ` for one traced essay.
pub fn essay_backward<T: Real>(trace: &EssayTrace<T>, params: &ModelParameters<T>, d_output: T, grads: &mut Gradients<T>) {
    let arch = &params.arch;
    let head = &params.layers.head;
    let y = trace.output;
    let d_a = d_output * y * (T::one() - y);

    grads.layers.head.weight.add_outer(&[d_a], &trace.dropped);
    let b = grads.layers.head.bias.get(0, 0);
    grads.layers.head.bias.set(0, 0, b + d_a);

    let d_features: Vec<T> = head
        .weight
        .row(0)
        .iter()
        .zip(&trace.dropout_scale)
        .map(|(&w, &s)| d_a * w * s)
        .collect();

    let h = arch.hidden;
    let mut d_e = Matrix::zeros(trace.embedded.rows(), trace.embedded.cols());
    for (c, (ct, ch)) in trace.channels.iter().zip(&params.layers.channels).enumerate() {
        let d_sum = &d_features[c * 2 * h..(c + 1) * 2 * h];
        let steps = ct.seq.len();
        let (d_final_f, d_final_b, d_states_f, d_states_b) = match arch.summary {
            Summary::Last => (d_sum[..h].to_vec(), d_sum[h..].to_vec(), Vec::new(), Vec::new()),
            Summary::Mean => {
                let count = T::from_f64_lossy(ct.pool.out_valid as f64);
                let per_f: Vec<T> = d_sum[..h].iter().map(|&v| v / count).collect();
                let per_b: Vec<T> = d_sum[h..].iter().map(|&v| v / count).collect();
                let spread = |per: &Vec<T>| -> Vec<Vec<T>> {
                    (0..steps)
                        .map(|t| if ct.seq_mask[t] { per.clone() } else { Vec::new() })
                        .collect()
                };
                (vec![T::zero(); h], vec![T::zero(); h], spread(&per_f), spread(&per_b))
            }
        };

        let mut d_seq = vec![vec![T::zero(); arch.filters]; steps];
        let g = &mut grads.layers.channels[c];
        direction_backward(&ct.seq, &ct.forward, &ch.gru.forward, &d_states_f, &d_final_f, &mut g.gru.forward, &mut d_seq);
        direction_backward(&ct.seq, &ct.backward, &ch.gru.backward, &d_states_b, &d_final_b, &mut g.gru.backward, &mut d_seq);

        let d_pooled = Matrix::from_fn(arch.filters, steps, |f, t| d_seq[t][f]);
        let d_fm = maxpool_backward(&ct.pool, &d_pooled);
        debug_assert_eq!(d_fm.cols(), ct.conv_width);
        conv1d_backward(&ch.conv, &ct.conv, &d_fm, &mut g.conv, &mut d_e);
    }

    if params.embedding.trainable {
        for (pos, &idx) in trace.indices.iter().enumerate() {
            if idx == PAD {
                continue;
            }
            let row = grads
                .embedding
                .entry(idx)
                .or_insert_with(|| vec![T::zero(); arch.embedding_dim]);
            for (r, g) in row.iter_mut().enumerate() {
                *g += d_e.get(r, pos);
            }
        }
    }
}

/// Dropout generator for row `row` of a batch.
pub fn dropout_rng(dropout_seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    rng.set_stream(row as u64);
    rng
}

/// Mean squared error of the batch and its exact gradient. Dropout is active
/// whenever the architecture's rate is positive, realized from
/// `dropout_seed`.
pub fn backward<T: Real>(batch: &Batch, params: &ModelParameters<T>, dropout_seed: u64) -> Result<(T, Gradients<T>)> {
    let b = batch.size();
    if b == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let scale = T::from_f64_lossy(1.0 / b as f64);
    let training = params.arch.dropout > 0.0;
    let rows: Vec<usize> = (0..b).collect();
    let partials: Vec<(T, Gradients<T>)> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros(&params.arch);
            let mut loss = T::zero();
            for &i in chunk {
                let (idx, mask) = batch.row(i);
                let mut rng = dropout_rng(dropout_seed, i);
                let trace = forward_trace(idx, mask, params, training.then_some(&mut rng));
                let diff = trace.output - T::from_f64_lossy(batch.targets[i]);
                loss += diff * diff;
                essay_backward(&trace, params, (diff + diff) * scale, &mut grads);
            }
            (loss, grads)
        })
        .collect();

    let mut total = T::zero();
    let mut grads = Gradients::zeros(&params.arch);
    for (l, g) in &partials {
        total += *l;
        grads.add_assign(g);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        let parameter = params
            .first_non_finite()
            .or_else(|| grads.first_non_finite())
            .unwrap_or_else(|| "loss".into());
        return Err(Error::Numeric { parameter });
    }
    Ok((loss, grads))
}
