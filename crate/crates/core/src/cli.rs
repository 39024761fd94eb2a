//! Command implementations behind the `delaes` binary.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifact::ModelArtifact;
use crate::corpus::{build_vocabulary, load_dataset, read_records, tokenize, Encoding, EssaySet, ScoreRange, UNK};
use crate::embedding::{load_embeddings_filtered, EmbeddingTable};
use crate::error::{Error, Result};
use crate::harness::{run_cv, CvOptions};
use crate::metrics::qwk;
use crate::network::forward;
use crate::training::{evaluate_qwk, history_csv, mix_seed, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "delaes", version, about = "CNN + bidirectional GRU essay scorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model for one prompt and write the model file.
    Train(TrainArgs),
    /// Score essays with a trained model.
    Predict(PredictArgs),
    /// Quadratic weighted kappa between prediction and gold files.
    Eval(EvalArgs),
    /// Cross-validate on one prompt.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// ASAP tab-separated essay file.
    #[arg(long)]
    pub data: PathBuf,
    /// Essay set (prompt) id.
    #[arg(long)]
    pub prompt: u8,
    /// Word vectors in text format.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// utf8 or latin1.
    #[arg(long, default_value = "latin1")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Creation timestamp stored in the model file (unix seconds).
    #[arg(long, default_value_t = 0)]
    pub created_at: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "latin1")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// essay_id,score CSV of predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// essay_id,score CSV of gold scores.
    #[arg(long)]
    pub gold: PathBuf,
    /// Score range as MIN:MAX.
    #[arg(long)]
    pub range: String,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output directory for cv_report.json and cv_folds.csv.
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings read from a key=value file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub ranges: BTreeMap<u8, (i64, i64)>,
    pub cv: CvOptions,
}

fn parse_range(value: &str) -> Result<(i64, i64)> {
    let (lo, hi) = value
        .trim()
        .split_once(':')
        .ok_or_else(|| Error::Usage(format!("range {value:?} is not MIN:MAX")))?;
    let p = |s: &str| {
        s.trim()
            .parse::<i64>()
            .map_err(|_| Error::Usage(format!("range {value:?} is not MIN:MAX")))
    };
    Ok((p(lo)?, p(hi)?))
}

/// Parses `key=value` lines on top of the defaults. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(prompt) = key.strip_prefix("score_range.") {
            let prompt: u8 = prompt
                .parse()
                .map_err(|_| Error::Usage(format!("config line {}: bad prompt id", n + 1)))?;
            cfg.ranges.insert(prompt, parse_range(value)?);
        } else if key == "rotation" {
            cfg.cv.rotation = value.parse()?;
        } else if key == "max_rounds" {
            cfg.cv.max_rounds = Some(
                value
                    .parse()
                    .map_err(|_| Error::Usage(format!("config line {}: bad max_rounds", n + 1)))?,
            );
        } else if !cfg.train.set(key, value)? {
            return Err(Error::Usage(format!("config line {}: unknown key {key}", n + 1)));
        }
    }
    Ok(cfg)
}

fn load_config(args: &DataArgs) -> Result<(ConfigFile, ScoreRange, Encoding)> {
    let mut file = match &args.config {
        Some(p) => parse_config(&fs::read_to_string(p)?)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = args.seed {
        file.train.seed = seed;
    }
    file.train.validate()?;
    let range = match file.ranges.get(&args.prompt) {
        Some(&(lo, hi)) => ScoreRange::new(args.prompt, lo, hi)?,
        None => ScoreRange::default_for(args.prompt)?,
    };
    Ok((file, range, args.encoding.parse()?))
}

fn load_table_for(path: &Path, dim: usize, set: &EssaySet) -> Result<EmbeddingTable> {
    let tokens: HashSet<&str> = set.essays.iter().flat_map(|e| e.tokens.iter().map(String::as_str)).collect();
    load_embeddings_filtered(path, dim, |t| tokens.contains(t))
}

/// Splits off one eighth (at least one essay) for validation.
fn train_val_split(set: &EssaySet, seed: u64) -> Result<(EssaySet, EssaySet)> {
    if set.len() < 2 {
        return Err(Error::Usage(format!(
            "prompt {} has {} essays; need at least 2",
            set.prompt_id,
            set.len()
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 200, 0)));
    let n_val = set.len().div_ceil(8);
    let (val, tr) = order.split_at(n_val);
    Ok((set.subset(tr), set.subset(val)))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (file, range, encoding) = load_config(&args.data)?;
    let cfg = file.train;
    let set = load_dataset(&args.data.data, args.data.prompt, range, encoding)?;
    let (train_set, val_set) = train_val_split(&set, cfg.seed)?;
    let vocab = build_vocabulary(&train_set.essays, cfg.min_count)?;
    let table = load_table_for(&args.data.embeddings, cfg.embedding_dim, &train_set)?;

    let outcome = train::<f32>(&train_set, &val_set, &vocab, &table, &cfg)?;
    let val_qwk = match outcome.best_epoch {
        Some(e) => outcome.history[e - 1].val_qwk,
        None => evaluate_qwk(&outcome.params, &vocab, &val_set)?,
    };

    let artifact = ModelArtifact {
        created_at: args.created_at,
        range,
        config: cfg,
        vocab,
        params: outcome.params,
    };
    artifact.save(&args.out)?;
    let history_path = args.history.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    fs::write(&history_path, history_csv(&outcome.history))?;
    println!("val_qwk {val_qwk:.4}");
    Ok(())
}

/// `essay_id,score` rows for every essay of the model's prompt in `data`.
pub fn predict_file(artifact: &ModelArtifact, data: &Path, encoding: Encoding) -> Result<String> {
    let records = read_records(data, encoding, false)?;
    let mut out = String::new();
    for rec in records.iter().filter(|r| r.prompt_id == artifact.range.prompt_id) {
        let mut indices = artifact.vocab.encode(&tokenize(&rec.text));
        if indices.is_empty() {
            indices.push(UNK);
        }
        let y = forward(&indices, &artifact.params, None) as f64;
        let score = artifact.range.denormalize(y)?;
        out.push_str(&format!("{},{}\n", rec.essay_id, score));
    }
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    let out = predict_file(&artifact, &args.data, args.encoding.parse()?)?;
    fs::write(&args.out, out)?;
    Ok(())
}

/// Reads `essay_id,score` pairs; a non-numeric first line is taken as a header.
pub fn read_score_pairs(path: &Path) -> Result<Vec<(i64, i64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [id, score] => id.parse::<i64>().ok().zip(score.parse::<i64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => out.push(pair),
            None if n == 0 => continue,
            None => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: "expected essay_id,score".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Aligns predictions to gold ids and returns the kappa.
pub fn eval_files(pred: &Path, gold: &Path, range: &str) -> Result<f64> {
    let (lo, hi) = parse_range(range)?;
    let range = ScoreRange::new(0, lo, hi)?;
    let pred = read_score_pairs(pred)?;
    let gold = read_score_pairs(gold)?;
    let mut by_id = BTreeMap::new();
    for &(id, s) in &pred {
        if by_id.insert(id, s).is_some() {
            return Err(Error::Usage(format!("essay id {id} appears twice in predictions")));
        }
    }
    let mut actual = Vec::with_capacity(gold.len());
    let mut predicted = Vec::with_capacity(gold.len());
    let mut seen = HashSet::new();
    for &(id, s) in &gold {
        if !seen.insert(id) {
            return Err(Error::Usage(format!("essay id {id} appears twice in gold")));
        }
        let p = by_id
            .get(&id)
            .ok_or_else(|| Error::Usage(format!("essay id {id} has no prediction")))?;
        actual.push(s);
        predicted.push(*p);
    }
    if let Some(&(id, _)) = pred.iter().find(|(id, _)| !seen.contains(id)) {
        return Err(Error::Usage(format!("essay id {id} has no gold score")));
    }
    qwk(&actual, &predicted, &range)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    println!("{:.4}", eval_files(&args.pred, &args.gold, &args.range)?);
    Ok(())
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let (file, range, encoding) = load_config(&args.data)?;
    let cfg = file.train;
    let set = load_dataset(&args.data.data, args.data.prompt, range, encoding)?;
    let table = load_table_for(&args.data.embeddings, cfg.embedding_dim, &set)?;
    let min_count = cfg.min_count;
    let report = run_cv::<f32>(
        &set,
        |essays| build_vocabulary(essays.iter().copied(), min_count),
        &table,
        &cfg,
        args.k,
        cfg.seed,
        &file.cv,
    )?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("cv_report.json"), report.to_json()?)?;
    fs::write(args.out.join("cv_folds.csv"), report.to_csv())?;
    println!("mean_qwk {:.4}", report.mean_qwk);
    println!("pooled_qwk {:.4}", report.pooled_qwk);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cv(a) => cmd_cv(a),
    }
}
