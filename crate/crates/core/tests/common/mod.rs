#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use delaes::corpus::{tokenize, Essay, EssaySet, ScoreRange};
use delaes::embedding::EmbeddingTable;
use delaes::network::{forward_trace, EssayTrace, ModelParameters};
use delaes::training::backward::{backward, dropout_rng};
use delaes::training::{Batch, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KEYWORDS: [&str; 2] = ["alpha", "beta"];
pub const FILLER: [&str; 10] = ["the", "cat", "sat", "on", "a", "mat", "and", "then", "it", "slept"];
pub const SYNTHETIC_PROMPT: u8 = 1;

/// `(essay_id, text, score)`: score is how many of the two keywords occur.
pub fn synthetic_rows(n: usize, seed: u64) -> Vec<(i64, String, i64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let has = [i % 2 == 1, (i / 2) % 2 == 1];
            let len = rng.gen_range(8..14);
            let mut words: Vec<&str> = (0..len).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect();
            for (kw, present) in KEYWORDS.iter().zip(has) {
                if present {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, kw);
                }
            }
            let score = has.iter().filter(|&&p| p).count() as i64;
            (100 + i as i64, words.join(" ") + ".", score)
        })
        .collect()
}

pub fn synthetic_range() -> ScoreRange {
    ScoreRange::new(SYNTHETIC_PROMPT, 0, 2).unwrap()
}

pub fn synthetic_set(n: usize, seed: u64) -> EssaySet {
    let range = synthetic_range();
    let essays = synthetic_rows(n, seed)
        .into_iter()
        .map(|(id, text, score)| Essay {
            essay_id: id,
            prompt_id: SYNTHETIC_PROMPT,
            tokens: tokenize(&text),
            raw_score: score,
            normalized_score: range.normalize(score),
        })
        .collect();
    EssaySet::new(range, essays).unwrap()
}

/// Seeded vectors for every synthetic token; keywords get much larger
/// vectors than filler so the classes are separable in embedding space too.
pub fn synthetic_table(dim: usize) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut table = EmbeddingTable::new(dim).unwrap();
    for w in KEYWORDS.iter().chain(FILLER.iter()).chain(["."].iter()) {
        let scale = if KEYWORDS.contains(w) { 1.0f32 } else { 0.02 };
        let v = (0..dim).map(|_| rng.gen_range(-scale..scale)).collect();
        table.insert(w.to_string(), v).unwrap();
    }
    table
}

pub fn reduced_config() -> TrainConfig {
    TrainConfig {
        window_sizes: vec![2, 3],
        filters: 8,
        hidden: 8,
        embedding_dim: 16,
        batch_size: 8,
        dropout: 0.0,
        learning_rate: 0.01,
        epochs: 200,
        seed: 7,
        ..TrainConfig::default()
    }
}

pub fn write_tsv(path: &Path, rows: &[(i64, String, i64)], prompt: u8) {
    let mut s = String::from("essay_id\tessay_set\tessay\trater1_domain1\trater2_domain1\tdomain1_score\n");
    for (id, text, score) in rows {
        writeln!(s, "{id}\t{prompt}\t{text}\t{score}\t{score}\t{score}").unwrap();
    }
    fs::write(path, s).unwrap();
}

pub fn write_embeddings(path: &Path, table_dim: usize) {
    let table = synthetic_table(table_dim);
    let mut s = String::new();
    let mut words: Vec<&str> = KEYWORDS.iter().chain(FILLER.iter()).copied().collect();
    words.push(".");
    writeln!(s, "{} {}", words.len(), table_dim).unwrap();
    for w in words {
        let v: Vec<String> = table.get(w).unwrap().iter().map(|x| format!("{x}")).collect();
        writeln!(s, "{w} {}", v.join(" ")).unwrap();
    }
    fs::write(path, s).unwrap();
}

/// TSV + embedding fixture in `dir`, returning their paths.
pub fn write_fixture(dir: &Path, n: usize, dim: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("train.tsv");
    let emb = dir.join("vectors.txt");
    write_tsv(&data, &synthetic_rows(n, 5), SYNTHETIC_PROMPT);
    write_embeddings(&emb, dim);
    (data, emb)
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: String,
}

struct Probe {
    loss: f64,
    relu_on: Vec<bool>,
    argmax: Vec<usize>,
    pre: Vec<f64>,
}

fn probe(batch: &Batch, params: &ModelParameters<f64>, dropout_seed: u64) -> Probe {
    let mut p = Probe {
        loss: 0.0,
        relu_on: Vec::new(),
        argmax: Vec::new(),
        pre: Vec::new(),
    };
    for i in 0..batch.size() {
        let (idx, mask) = batch.row(i);
        let mut rng = dropout_rng(dropout_seed, i);
        let rng = (params.arch.dropout > 0.0).then_some(&mut rng);
        let trace: EssayTrace<f64> = forward_trace(idx, mask, params, rng);
        let d = trace.output - batch.targets[i];
        p.loss += d * d;
        for ch in &trace.channels {
            p.pre.extend_from_slice(ch.conv.pre.as_slice());
            p.argmax.extend_from_slice(&ch.pool.argmax);
        }
    }
    p.loss /= batch.size() as f64;
    p.relu_on = p.pre.iter().map(|&v| v > 0.0).collect();
    p
}

/// `(layer tensor index or None for the embedding, row, col)`
type Coord = (Option<usize>, usize, usize);

fn nudge(params: &mut ModelParameters<f64>, coord: Coord, delta: f64) {
    let (tensor, row, col) = coord;
    match tensor {
        None => {
            let v = params.embedding.weights.get(row, col);
            params.embedding.weights.set(row, col, v + delta);
        }
        Some(t) => {
            let mut tensors = params.layers.tensors_mut();
            let m = &mut tensors[t].1;
            let v = m.get(row, col);
            m.set(row, col, v + delta);
        }
    }
}

/// Central differences against the analytic gradient for every parameter
/// coordinate. Coordinates whose perturbation flips a ReLU or a pooling
/// winner, or moves a pre-activation lying within `kink` of zero, are skipped.
pub fn gradient_check(batch: &Batch, params: &ModelParameters<f64>, dropout_seed: u64, step: f64, kink: f64) -> GradCheck {
    let (_, grads) = backward(batch, params, dropout_seed).unwrap();
    let base = probe(batch, params, dropout_seed);

    let mut coords: Vec<(Coord, String, f64)> = Vec::new();
    let mut rows: Vec<usize> = batch.indices.iter().copied().filter(|&i| i != delaes::corpus::PAD).collect();
    rows.sort_unstable();
    rows.dedup();
    for &r in &rows {
        for c in 0..params.arch.embedding_dim {
            let g = grads.embedding.get(&r).map_or(0.0, |v| v[c]);
            coords.push(((None, r, c), format!("embedding[{r},{c}]"), g));
        }
    }
    for (t, (name, m)) in grads.layers.tensors().into_iter().enumerate() {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                coords.push(((Some(t), r, c), format!("{name}[{r},{c}]"), m.get(r, c)));
            }
        }
    }

    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let mut work = params.clone();
    for (coord, name, analytic) in coords {
        nudge(&mut work, coord, step);
        let plus = probe(batch, &work, dropout_seed);
        nudge(&mut work, coord, -2.0 * step);
        let minus = probe(batch, &work, dropout_seed);
        nudge(&mut work, coord, step);

        let flipped = plus.relu_on != minus.relu_on || plus.argmax != minus.argmax;
        let near_kink = base
            .pre
            .iter()
            .zip(plus.pre.iter().zip(&minus.pre))
            .any(|(&b, (&p, &m))| p != m && b.abs() < kink);
        if flipped || near_kink {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        out.checked += 1;
        if rel > out.max_rel {
            out.max_rel = rel;
            out.worst = format!("{name}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
    out
}

/// Seeded f64 model: d=8, windows {2,3}, 3 filters, hidden 4, embeddings and
/// biases drawn away from zero so few ReLUs sit on the kink.
pub fn tiny_model(seed: u64, dropout: f64, summary: delaes::network::Summary) -> ModelParameters<f64> {
    use delaes::embedding::EmbeddingMatrix;
    use delaes::network::Architecture;
    use delaes::tensor::Matrix;

    let arch = Architecture {
        embedding_dim: 8,
        windows: vec![2, 3],
        filters: 3,
        hidden: 4,
        pool_size: 2,
        pool_stride: 2,
        summary,
        dropout,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Matrix::from_fn(9, 8, |r, _| if r == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) });
    let embedding = EmbeddingMatrix { weights, trainable: true };
    let mut params = ModelParameters::init(arch, embedding, seed + 1).unwrap();
    for ch in &mut params.layers.channels {
        for v in ch.conv.bias.as_mut_slice() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    params.layers.head.bias.set(0, 0, 0.1);
    params
}
