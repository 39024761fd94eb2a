//! Forward computation of the scoring network.
//!
//! Each channel runs convolution, max-pooling and a bidirectional GRU over
//! the embedded essay. The channel summaries are concatenated, passed through
//! dropout (training only) and a sigmoid regression head.

pub mod conv;
pub mod gru;
pub mod pool;

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::embedding::{embed_indices, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Matrix, Real};

pub use conv::{conv1d_forward, ConvChannel, FeatureMap};
pub use gru::{bigru_forward, gru_step, BiGruOutput, GruDirection, GruParameters};
pub use pool::{maxpool, pool_width};

use conv::{conv1d_forward_masked, ConvCache};
use gru::{run_direction, DirectionTrace};
use pool::{maxpool_masked, PoolCache};

/// How a channel's bidirectional GRU outputs are reduced to one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    /// Forward state at the last real step joined with the backward state at
    /// the first real step.
    #[default]
    Last,
    /// Mean of `[→h_t, ←h_t]` over real steps.
    Mean,
}

impl FromStr for Summary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Summary::Last),
            "mean" => Ok(Summary::Mean),
            other => Err(Error::Usage(format!("unknown summary mode {other:?}"))),
        }
    }
}

/// Shape-determining hyperparameters carried with every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub embedding_dim: usize,
    pub windows: Vec<usize>,
    pub filters: usize,
    pub hidden: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub summary: Summary,
    pub dropout: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad("window sizes must be positive and non-empty");
        }
        if self.filters == 0 || self.hidden == 0 {
            return bad("filters and hidden must be positive");
        }
        if self.pool_size == 0 || self.pool_stride == 0 {
            return bad("pool_size and pool_stride must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    /// Width of the concatenated channel summaries.
    pub fn head_width(&self) -> usize {
        self.windows.len() * 2 * self.hidden
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams<T> {
    pub conv: ConvChannel<T>,
    pub gru: GruParameters<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseHead<T> {
    /// `1 × head_width`
    pub weight: Matrix<T>,
    /// `1 × 1`
    pub bias: Matrix<T>,
}

/// Every trainable tensor except the embedding matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layers<T> {
    pub channels: Vec<ChannelParams<T>>,
    pub head: DenseHead<T>,
}

impl<T: Real> Layers<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            channels: arch
                .windows
                .iter()
                .map(|&k| ChannelParams {
                    conv: ConvChannel::zeros(k, arch.filters, arch.embedding_dim),
                    gru: GruParameters::zeros(arch.filters, arch.hidden),
                })
                .collect(),
            head: DenseHead {
                weight: Matrix::zeros(1, arch.head_width()),
                bias: Matrix::zeros(1, 1),
            },
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (c, ch) in self.channels.iter().enumerate() {
            out.push((format!("channel{c}.conv.weight"), &ch.conv.weight));
            out.push((format!("channel{c}.conv.bias"), &ch.conv.bias));
            for (dir, p) in [("fwd", &ch.gru.forward), ("bwd", &ch.gru.backward)] {
                for (name, m) in p.tensors() {
                    out.push((format!("channel{c}.gru.{dir}.{name}"), m));
                }
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        for (c, ch) in self.channels.iter_mut().enumerate() {
            out.push((format!("channel{c}.conv.weight"), &mut ch.conv.weight));
            out.push((format!("channel{c}.conv.bias"), &mut ch.conv.bias));
            for (dir, p) in [("fwd", &mut ch.gru.forward), ("bwd", &mut ch.gru.backward)] {
                for (name, m) in p.tensors_mut() {
                    out.push((format!("channel{c}.gru.{dir}.{name}"), m));
                }
            }
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    pub fn cast<U: Real>(&self) -> Layers<U> {
        let mut out = Layers::<U> {
            channels: Vec::new(),
            head: DenseHead {
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        };
        for ch in &self.channels {
            let dir = |p: &GruDirection<T>| GruDirection {
                w_z: p.w_z.cast(),
                w_r: p.w_r.cast(),
                w_h: p.w_h.cast(),
                u_z: p.u_z.cast(),
                u_r: p.u_r.cast(),
                u_h: p.u_h.cast(),
            };
            out.channels.push(ChannelParams {
                conv: ConvChannel {
                    window: ch.conv.window,
                    weight: ch.conv.weight.cast(),
                    bias: ch.conv.bias.cast(),
                },
                gru: GruParameters {
                    forward: dir(&ch.gru.forward),
                    backward: dir(&ch.gru.backward),
                },
            });
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    pub embedding: EmbeddingMatrix<T>,
    pub layers: Layers<T>,
    pub arch: Architecture,
}

fn glorot<T: Real>(m: &mut Matrix<T>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = T::from_f64_lossy(rng.gen_range(-limit..=limit));
    }
}

impl<T: Real> ModelParameters<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, embedding: EmbeddingMatrix<T>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if embedding.dim() != arch.embedding_dim {
            return Err(Error::Usage(format!(
                "embedding matrix has dimension {}, architecture expects {}",
                embedding.dim(),
                arch.embedding_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Layers::zeros(&arch);
        let (d, f, h) = (arch.embedding_dim, arch.filters, arch.hidden);
        for ch in &mut layers.channels {
            glorot(&mut ch.conv.weight, d * ch.conv.window, f, &mut rng);
            for dir in [&mut ch.gru.forward, &mut ch.gru.backward] {
                for (name, m) in dir.tensors_mut() {
                    let fan_in = if name.starts_with('w') { f } else { h };
                    glorot(m, fan_in, h, &mut rng);
                }
            }
        }
        glorot(&mut layers.head.weight, arch.head_width(), 1, &mut rng);
        Ok(Self {
            embedding,
            layers,
            arch,
        })
    }

    /// Checks that every tensor matches the architecture's shapes.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = Layers::<T>::zeros(&self.arch);
        for ((name, a), (_, b)) in self.layers.tensors().into_iter().zip(expected.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Domain(format!("{name} has shape {:?}, expected {:?}", a.shape(), b.shape())));
            }
        }
        if self.layers.channels.len() != self.arch.windows.len()
            || self.layers.channels.iter().zip(&self.arch.windows).any(|(c, &k)| c.conv.window != k)
        {
            return Err(Error::Domain("channel windows disagree with architecture".into()));
        }
        if self.embedding.dim() != self.arch.embedding_dim {
            return Err(Error::Domain("embedding dimension disagrees with architecture".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        ModelParameters {
            embedding: self.embedding.cast(),
            layers: self.layers.cast(),
            arch: self.arch.clone(),
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        if !self.embedding.weights.is_finite() {
            return Some("embedding".into());
        }
        self.layers
            .tensors()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}

/// Inverted dropout scale factors: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    if p <= 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn dropout<T: Real, R: Rng + ?Sized>(v: &[T], p: f64, rng: &mut R, training: bool) -> Vec<T> {
    if !training || p <= 0.0 {
        return v.to_vec();
    }
    let mask = dropout_mask::<T, R>(v.len(), p, rng);
    v.iter().zip(mask).map(|(&x, m)| x * m).collect()
}

#[derive(Clone, Debug)]
pub struct ChannelTrace<T> {
    pub conv: ConvCache<T>,
    pub conv_width: usize,
    pub pool: PoolCache,
    pub seq: Vec<Vec<T>>,
    pub seq_mask: Vec<bool>,
    pub forward: DirectionTrace<T>,
    pub backward: DirectionTrace<T>,
    pub summary: Vec<T>,
}

/// Everything the backward pass needs from one essay's forward pass.
#[derive(Clone, Debug)]
pub struct EssayTrace<T> {
    /// Token indices, PAD-extended to at least the widest window.
    pub indices: Vec<usize>,
    pub embedded: Matrix<T>,
    pub channels: Vec<ChannelTrace<T>>,
    pub features: Vec<T>,
    pub dropout_scale: Vec<T>,
    pub dropped: Vec<T>,
    pub output: T,
}

fn real_length(mask: &[bool]) -> usize {
    let n = mask.iter().take_while(|&&m| m).count();
    debug_assert!(mask[n..].iter().all(|&m| !m), "padding must be a suffix");
    n
}

/// Full forward pass over one (possibly padded) essay, keeping intermediates.
/// `mask[i]` marks real tokens; padding must form a suffix. Dropout is
/// applied iff `dropout_rng` is given.
pub fn forward_trace<T: Real>(
    indices: &[usize],
    mask: &[bool],
    params: &ModelParameters<T>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> EssayTrace<T> {
    assert_eq!(indices.len(), mask.len(), "mask length must match essay length");
    let arch = &params.arch;
    let n = real_length(mask);
    assert!(n >= 1, "essay must contain at least one real token");

    let mut padded = indices.to_vec();
    if padded.len() < arch.max_window() {
        padded.resize(arch.max_window(), PAD);
    }
    let embedded = embed_indices(&padded, &params.embedding);

    let mut channels = Vec::with_capacity(params.layers.channels.len());
    let mut features = Vec::with_capacity(arch.head_width());
    for ch in &params.layers.channels {
        let k = ch.conv.window;
        let conv_valid = n.saturating_sub(k) + 1;
        let (fm, conv) = conv1d_forward_masked(&embedded, &ch.conv, conv_valid);
        let conv_width = fm.width();
        let (pooled, pool) = maxpool_masked(&fm, arch.pool_size, arch.pool_stride, conv_valid);
        let seq: Vec<Vec<T>> = (0..pooled.width()).map(|t| pooled.values.column(t)).collect();
        let seq_mask: Vec<bool> = (0..seq.len()).map(|t| t < pool.out_valid).collect();
        let forward = run_direction(&seq, &seq_mask, &ch.gru.forward, false);
        let backward = run_direction(&seq, &seq_mask, &ch.gru.backward, true);

        let summary: Vec<T> = match arch.summary {
            Summary::Last => forward.final_state.iter().chain(&backward.final_state).copied().collect(),
            Summary::Mean => {
                let h = arch.hidden;
                let count = T::from_f64_lossy(pool.out_valid as f64);
                let mut acc = vec![T::zero(); 2 * h];
                for t in 0..pool.out_valid {
                    for i in 0..h {
                        acc[i] += forward.states[t][i];
                        acc[h + i] += backward.states[t][i];
                    }
                }
                acc.iter().map(|&v| v / count).collect()
            }
        };
        features.extend_from_slice(&summary);
        channels.push(ChannelTrace {
            conv,
            conv_width,
            pool,
            seq,
            seq_mask,
            forward,
            backward,
            summary,
        });
    }

    let dropout_scale = match dropout_rng {
        Some(rng) => dropout_mask(features.len(), arch.dropout, rng),
        None => vec![T::one(); features.len()],
    };
    let dropped: Vec<T> = features.iter().zip(&dropout_scale).map(|(&a, &s)| a * s).collect();
    let head = &params.layers.head;
    let output = sigmoid(dot(head.weight.row(0), &dropped) + head.bias.get(0, 0));

    EssayTrace {
        indices: padded,
        embedded,
        channels,
        features,
        dropout_scale,
        dropped,
        output,
    }
}

/// Normalized score in (0, 1) for an unpadded essay.
pub fn forward<T: Real>(indices: &[usize], params: &ModelParameters<T>, dropout_rng: Option<&mut ChaCha8Rng>) -> T {
    forward_masked(indices, &vec![true; indices.len()], params, dropout_rng)
}

pub fn forward_masked<T: Real>(
    indices: &[usize],
    mask: &[bool],
    params: &ModelParameters<T>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> T {
    forward_trace(indices, mask, params, dropout_rng).output
}
