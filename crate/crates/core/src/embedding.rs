//! Pre-trained word vectors and the trainable embedding matrix.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Half-width of the uniform range used for tokens without a pre-trained vector.
pub const OOV_INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Inserts a vector unless the token is already present. Returns whether it was stored.
    pub fn insert(&mut self, token: String, vector: Vec<f32>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Domain(format!(
                "vector for {token:?} has length {}, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vectors.contains_key(&token) {
            return Ok(false);
        }
        self.vectors.insert(token, vector);
        Ok(true)
    }
}

pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    load_embeddings_filtered(path, expected_dim, |_| true)
}

/// Like [`load_embeddings`] but only stores tokens accepted by `keep`. Every
/// line is still validated.
pub fn load_embeddings_filtered(
    path: &Path,
    expected_dim: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(expected_dim)?;
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    let mut line_no = 0;
    let format_err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };

    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if line_no == 1 && rest.len() == 1 && token.parse::<usize>().is_ok() {
            if let Ok(dim) = rest[0].parse::<usize>() {
                if dim != expected_dim {
                    return Err(format_err(1, format!("header dimension {dim}, expected {expected_dim}")));
                }
                continue;
            }
        }

        if rest.len() != expected_dim {
            return Err(format_err(
                line_no,
                format!("{} values for {token:?}, expected {expected_dim}", rest.len()),
            ));
        }
        let vector = rest
            .iter()
            .map(|s| {
                s.parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(line_no, format!("unparsable value {s:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        if keep(token) {
            table.insert(token.to_string(), vector)?;
        }
    }
    Ok(table)
}

/// One row per vocabulary index. Row 0 (PAD) is kept at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub weights: Matrix<T>,
    pub trainable: bool,
}

impl<T: Real> EmbeddingMatrix<T> {
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn cast<U: Real>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            weights: self.weights.cast(),
            trainable: self.trainable,
        }
    }
}

/// Copies pre-trained rows where available; other rows, UNK included, are
/// drawn uniformly from `[-0.05, 0.05]` in index order.
pub fn build_embedding_matrix<T: Real>(vocab: &Vocabulary, table: &EmbeddingTable, seed: u64) -> EmbeddingMatrix<T> {
    let d = table.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Matrix::zeros(vocab.len(), d);
    for index in 0..vocab.len() {
        if index == PAD {
            continue;
        }
        let token = vocab.token(index).expect("index in range");
        let row = weights.row_mut(index);
        match table.get(token) {
            Some(v) if index > 1 => {
                for (w, &x) in row.iter_mut().zip(v) {
                    *w = T::from_f64_lossy(x as f64);
                }
            }
            _ => {
                for w in row.iter_mut() {
                    *w = T::from_f64_lossy(rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE));
                }
            }
        }
    }
    EmbeddingMatrix {
        weights,
        trainable: true,
    }
}

/// Looks up token indices, producing a `d × m` matrix whose column `i` is the
/// row of token `i`.
pub fn embed_indices<T: Real>(indices: &[usize], matrix: &EmbeddingMatrix<T>) -> Matrix<T> {
    let d = matrix.dim();
    let mut out = Matrix::zeros(d, indices.len());
    for (col, &idx) in indices.iter().enumerate() {
        for (r, &v) in matrix.weights.row(idx).iter().enumerate() {
            out.set(r, col, v);
        }
    }
    out
}

pub fn embed<T: Real>(tokens: &[String], vocab: &Vocabulary, matrix: &EmbeddingMatrix<T>) -> Matrix<T> {
    embed_indices(&vocab.encode(tokens), matrix)
}
