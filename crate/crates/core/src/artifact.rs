//! Binary model files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DELAES01"
//! metadata length, metadata (UTF-8 JSON: config, vocabulary, score range, timestamp)
//! tensor count
//! per tensor: name length, name, rank, dims..., f32 LE values (row-major)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ScoreRange, Vocabulary};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::network::{Layers, ModelParameters};
use crate::tensor::Matrix;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DELAES01";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    /// Unix seconds; 0 when unset.
    pub created_at: u64,
    pub range: ScoreRange,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParameters<f32>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    created_at: u64,
    score_range: ScoreRange,
    config: TrainConfig,
    vocabulary: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Artifact("truncated artifact".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl ModelArtifact {
    fn named_tensors(params: &ModelParameters<f32>) -> Vec<(String, &Matrix<f32>)> {
        let mut out = vec![("embedding".to_string(), &params.embedding.weights)];
        out.extend(params.layers.tensors());
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            created_at: self.created_at,
            score_range: self.range,
            config: self.config.clone(),
            vocabulary: self.vocab.corpus_tokens().to_vec(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        let tensors = Self::named_tensors(&self.params);
        put_u32(&mut out, tensors.len());
        for (name, m) in tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2);
            put_u32(&mut out, m.rows());
            put_u32(&mut out, m.cols());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Artifact("not a DELAES01 artifact".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let meta_len = r.u32()?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)?;
        meta.config.validate()?;
        let vocab = Vocabulary::from_tokens(meta.vocabulary)?;
        let arch = meta.config.architecture();

        let expected = {
            let mut shapes = vec![("embedding".to_string(), (vocab.len(), arch.embedding_dim))];
            shapes.extend(Layers::<f32>::zeros(&arch).tensors().into_iter().map(|(n, m)| (n, m.shape())));
            shapes
        };
        let count = r.u32()?;
        if count != expected.len() {
            return Err(Error::Artifact(format!("{count} tensors, expected {}", expected.len())));
        }
        let mut loaded = Vec::with_capacity(count);
        for (want_name, want_shape) in &expected {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Artifact("tensor name is not UTF-8".into()))?
                .to_string();
            if &name != want_name {
                return Err(Error::Artifact(format!("found tensor {name}, expected {want_name}")));
            }
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Artifact(format!("{name}: rank {rank}, expected 2")));
            }
            let shape = (r.u32()?, r.u32()?);
            if shape != *want_shape {
                return Err(Error::Artifact(format!("{name}: shape {shape:?}, expected {want_shape:?}")));
            }
            let raw = r.take(shape.0 * shape.1 * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            loaded.push(Matrix::from_vec(shape.0, shape.1, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Artifact("trailing bytes after tensors".into()));
        }

        let mut loaded = loaded.into_iter();
        let embedding = EmbeddingMatrix {
            weights: loaded.next().expect("embedding tensor"),
            trainable: meta.config.trainable_embeddings,
        };
        let mut layers = Layers::zeros(&arch);
        for ((_, dst), src) in layers.tensors_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        let params = ModelParameters { embedding, layers, arch };
        params.validate()?;
        Ok(Self {
            created_at: meta.created_at,
            range: meta.score_range,
            config: meta.config,
            vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
