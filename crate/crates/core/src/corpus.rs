//! ASAP essay loading, tokenization, vocabularies and score scaling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const REQUIRED_COLUMNS: [&str; 4] = ["essay_id", "essay_set", "essay", "domain1_score"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub prompt_id: u8,
    pub min: i64,
    pub max: i64,
}

impl ScoreRange {
    pub fn new(prompt_id: u8, min: i64, max: i64) -> Result<Self> {
        if min >= max {
            return Err(Error::Domain(format!(
                "score range for prompt {prompt_id} needs min < max, got {min}-{max}"
            )));
        }
        Ok(Self { prompt_id, min, max })
    }

    /// Published ranges for the eight ASAP prompts.
    pub fn default_for(prompt_id: u8) -> Result<Self> {
        let (min, max) = match prompt_id {
            1 => (2, 4),
            2 => (1, 6),
            3 | 4 => (0, 3),
            5 | 6 => (0, 4),
            7 => (0, 30),
            8 => (0, 60),
            _ => return Err(Error::Domain(format!("prompt id {prompt_id} not in 1..8"))),
        };
        Self::new(prompt_id, min, max)
    }

    /// Number of distinct integer ratings.
    pub fn num_ratings(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn contains(&self, score: i64) -> bool {
        (self.min..=self.max).contains(&score)
    }

    pub fn normalize(&self, score: i64) -> f64 {
        (score - self.min) as f64 / (self.max - self.min) as f64
    }

    /// Maps a normalized prediction back onto the integer scale. Halves round
    /// away from zero.
    pub fn denormalize(&self, y: f64) -> Result<i64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("normalized score {y} outside [0,1]")));
        }
        let raw = (self.min as f64 + y * (self.max - self.min) as f64).round() as i64;
        Ok(raw.clamp(self.min, self.max))
    }
}

pub fn denormalize_score(y: f64, range: &ScoreRange) -> Result<i64> {
    range.denormalize(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Essay {
    pub essay_id: i64,
    pub prompt_id: u8,
    pub tokens: Vec<String>,
    pub raw_score: i64,
    pub normalized_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssaySet {
    pub prompt_id: u8,
    pub essays: Vec<Essay>,
    pub range: ScoreRange,
}

impl EssaySet {
    pub fn new(range: ScoreRange, essays: Vec<Essay>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &essays {
            if e.prompt_id != range.prompt_id {
                return Err(Error::Domain(format!(
                    "essay {} belongs to prompt {}, set is prompt {}",
                    e.essay_id, e.prompt_id, range.prompt_id
                )));
            }
            if !seen.insert(e.essay_id) {
                return Err(Error::Domain(format!("duplicate essay id {}", e.essay_id)));
            }
        }
        Ok(Self {
            prompt_id: range.prompt_id,
            essays,
            range,
        })
    }

    pub fn len(&self) -> usize {
        self.essays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.essays.is_empty()
    }

    /// A new set holding the essays at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> EssaySet {
        EssaySet {
            prompt_id: self.prompt_id,
            essays: indices.iter().map(|&i| self.essays[i].clone()).collect(),
            range: self.range,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Encoding {
    Utf8,
    #[default]
    Latin1,
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "utf8" | "utf-8" => Ok(Encoding::Utf8),
            "latin1" | "latin-1" | "iso-8859-1" => Ok(Encoding::Latin1),
            other => Err(Error::Usage(format!("unknown encoding {other:?}"))),
        }
    }
}

fn decode(path: &Path, bytes: &[u8], encoding: Encoding) -> Result<String> {
    match encoding {
        Encoding::Latin1 => Ok(bytes.iter().map(|&b| b as char).collect()),
        Encoding::Utf8 => String::from_utf8(bytes.to_vec()).map_err(|e| {
            let offset = e.utf8_error().valid_up_to();
            let line = bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1;
            Error::Encoding {
                path: path.to_path_buf(),
                line,
            }
        }),
    }
}

/// One data row before score validation.
#[derive(Clone, Debug, PartialEq)]
pub struct EssayRecord {
    pub essay_id: i64,
    pub prompt_id: u8,
    pub text: String,
    pub score: Option<i64>,
}

/// Reads every row of an ASAP tab-separated file. `domain1_score` is only
/// required when `require_score` is set. A zero-byte file yields no rows.
pub fn read_records(path: &Path, encoding: Encoding, require_score: bool) -> Result<Vec<EssayRecord>> {
    let bytes = fs::read(path)?;
    let text = decode(path, &bytes, encoding)?;
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));

    let format_err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header: Vec<&str> = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h.split('\t').map(str::trim).collect(),
        _ => return Ok(Vec::new()),
    };
    let column = |name: &str| header.iter().position(|h| *h == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        match column(name) {
            Some(i) => *slot = i,
            None if name == "domain1_score" && !require_score => *slot = usize::MAX,
            None => return Err(format_err(1, format!("missing column {name}"))),
        }
    }
    let [id_col, set_col, essay_col, score_col] = idx;

    let mut out = Vec::new();
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() > header.len() {
            return Err(format_err(
                line,
                format!("{} fields for {} columns (tab inside essay text?)", fields.len(), header.len()),
            ));
        }
        let field = |i: usize, name: &str| {
            fields
                .get(i)
                .map(|s| s.trim())
                .ok_or_else(|| format_err(line, format!("missing {name} field")))
        };
        let parse_int = |i: usize, name: &str| -> Result<i64> {
            let s = field(i, name)?;
            s.parse::<i64>()
                .map_err(|_| format_err(line, format!("{name} {s:?} is not an integer")))
        };
        let essay_id = parse_int(id_col, "essay_id")?;
        let set = parse_int(set_col, "essay_set")?;
        let prompt_id = u8::try_from(set).map_err(|_| format_err(line, format!("essay_set {set} out of range")))?;
        let text = field(essay_col, "essay")?.to_string();
        let score = if score_col == usize::MAX {
            None
        } else if require_score {
            Some(parse_int(score_col, "domain1_score")?)
        } else {
            field(score_col, "domain1_score").ok().and_then(|s| s.parse().ok())
        };
        out.push(EssayRecord {
            essay_id,
            prompt_id,
            text,
            score,
        });
    }
    Ok(out)
}

/// Loads the essays of one prompt, tokenized and with normalized scores.
pub fn load_dataset(path: &Path, prompt_id: u8, range: ScoreRange, encoding: Encoding) -> Result<EssaySet> {
    let records = read_records(path, encoding, true)?;
    let mut essays = Vec::new();
    for rec in records.into_iter().filter(|r| r.prompt_id == prompt_id) {
        let score = rec.score.expect("score required");
        if !range.contains(score) {
            return Err(Error::ScoreRange {
                essay_id: rec.essay_id,
                score,
                min: range.min,
                max: range.max,
            });
        }
        let tokens = tokenize(&rec.text);
        if tokens.is_empty() {
            return Err(Error::Domain(format!("essay {} has no tokens", rec.essay_id)));
        }
        essays.push(Essay {
            essay_id: rec.essay_id,
            prompt_id,
            tokens,
            raw_score: score,
            normalized_score: range.normalize(score),
        });
    }
    EssaySet::new(ScoreRange { prompt_id, ..range }, essays)
}

/// Lowercases and splits on whitespace. Punctuation characters become their
/// own tokens; anonymization markers such as `@caps1` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            flush(&mut word, &mut tokens);
            i += 1;
        } else if c == '@' && chars.get(i + 1).is_some_and(|n| n.is_ascii_alphabetic()) {
            flush(&mut word, &mut tokens);
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphabetic() {
                i += 1;
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c.is_alphanumeric() {
            word.push(c);
            i += 1;
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

/// Token ↔ index map. Index 0 is PAD and 1 is UNK; corpus tokens start at 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its corpus tokens in index order (index 2 onward).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        for t in tokens {
            if t == PAD_TOKEN || t == UNK_TOKEN || index.contains_key(&t) {
                return Err(Error::Domain(format!("token {t:?} duplicated or reserved")));
            }
            index.insert(t.clone(), all.len());
            all.push(t);
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Corpus tokens in index order, without PAD and UNK.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }
}

/// Builds a vocabulary from the given essays. Indices follow descending
/// frequency, ties broken lexicographically.
pub fn build_vocabulary<'a>(essays: impl IntoIterator<Item = &'a Essay>, min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Usage("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for essay in essays {
        for t in &essay.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn essay(id: i64, text: &str) -> Essay {
        Essay {
            essay_id: id,
            prompt_id: 1,
            tokens: tokenize(text),
            raw_score: 3,
            normalized_score: 0.5,
        }
    }

    fn write_tsv(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn tokenizer_golden_cases() {
        assert_eq!(
            tokenize("Dear editor, @caps2 says"),
            vec!["dear", "editor", ",", "@caps2", "says"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't STOP."), vec!["don", "'", "t", "stop", "."]);
        assert_eq!(tokenize("@CAPS1's @NUM12abc"), vec!["@caps1", "'", "s", "@num12", "abc"]);
        assert_eq!(tokenize("a@ b"), vec!["a", "@", "b"]);
        assert_eq!(tokenize("  x\t\ny  "), vec!["x", "y"]);
        assert_eq!(tokenize("100% (ok)!"), vec!["100", "%", "(", "ok", ")", "!"]);
    }

    proptest! {
        #[test]
        fn tokenizer_is_idempotent_on_its_output(s in "[a-zA-Z0-9@.,'!?éÉ \\t-]{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once.clone(), twice);
            prop_assert!(once.iter().all(|t| *t == t.to_lowercase() && !t.is_empty()));
        }

        #[test]
        fn denormalize_inverts_normalize(min in -5i64..20, span in 1i64..70) {
            let r = ScoreRange::new(1, min, min + span).unwrap();
            for s in r.min..=r.max {
                prop_assert_eq!(r.denormalize(r.normalize(s)).unwrap(), s);
            }
        }
    }

    #[test]
    fn default_ranges_follow_published_table() {
        let expected = [(2, 4), (1, 6), (0, 3), (0, 3), (0, 4), (0, 4), (0, 30), (0, 60)];
        for (p, (lo, hi)) in (1..=8).zip(expected) {
            let r = ScoreRange::default_for(p).unwrap();
            assert_eq!((r.min, r.max), (lo, hi));
        }
        assert!(ScoreRange::default_for(9).is_err());
        assert!(ScoreRange::new(1, 3, 3).is_err());
    }

    #[test]
    fn denormalize_examples() {
        assert_eq!(ScoreRange::new(1, 2, 4).unwrap().denormalize(0.5).unwrap(), 3);
        assert_eq!(ScoreRange::new(8, 0, 60).unwrap().denormalize(1.0).unwrap(), 60);
        assert_eq!(ScoreRange::new(7, 0, 30).unwrap().denormalize(0.3).unwrap(), 9);
        // 0.25 of 0..2 lands on 0.5 exactly and rounds away from zero
        assert_eq!(ScoreRange::new(1, 0, 2).unwrap().denormalize(0.25).unwrap(), 1);
        assert!(matches!(
            ScoreRange::new(1, 2, 4).unwrap().denormalize(1.5),
            Err(Error::Domain(_))
        ));
        assert!(ScoreRange::new(1, 2, 4).unwrap().denormalize(-0.01).is_err());
    }

    #[test]
    fn load_dataset_filters_prompt_and_normalizes() {
        let f = write_tsv(
            b"essay_id\tessay_set\tessay\trater1\tdomain1_score\n\
              1\t1\tDear newspaper, hi\t1\t3\n\
              2\t7\tSome story\t1\t9\n\
              3\t1\tAnother one\t2\t4\n",
        );
        let set = load_dataset(f.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.essays[0].normalized_score, 0.5);
        assert_eq!(set.essays[0].tokens, vec!["dear", "newspaper", ",", "hi"]);
        assert_eq!(set.essays[1].normalized_score, 1.0);

        let seven = load_dataset(f.path(), 7, ScoreRange::default_for(7).unwrap(), Encoding::Utf8).unwrap();
        assert!((seven.essays[0].normalized_score - 0.3).abs() < 1e-12);

        let none = load_dataset(f.path(), 3, ScoreRange::default_for(3).unwrap(), Encoding::Utf8).unwrap();
        assert!(none.is_empty());

        let again = load_dataset(f.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn load_dataset_errors() {
        let missing = write_tsv(b"essay_id\tessay_set\tessay\n1\t1\thello\n");
        match load_dataset(missing.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8) {
            Err(Error::Format { message, .. }) => assert!(message.contains("domain1_score")),
            other => panic!("expected format error, got {other:?}"),
        }

        let out_of_range = write_tsv(b"essay_id\tessay_set\tessay\tdomain1_score\n42\t1\thello\t9\n");
        match load_dataset(out_of_range.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8) {
            Err(Error::ScoreRange { essay_id, .. }) => assert_eq!(essay_id, 42),
            other => panic!("expected range error, got {other:?}"),
        }

        let tab = write_tsv(b"essay_id\tessay_set\tessay\tdomain1_score\n1\t1\thel\tlo\t3\n");
        match load_dataset(tab.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }

        let bad_utf8 = write_tsv(b"essay_id\tessay_set\tessay\tdomain1_score\n1\t1\tcaf\xe9\t3\n");
        assert!(matches!(
            load_dataset(bad_utf8.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Utf8),
            Err(Error::Encoding { line: 2, .. })
        ));
        let latin = load_dataset(bad_utf8.path(), 1, ScoreRange::default_for(1).unwrap(), Encoding::Latin1).unwrap();
        assert_eq!(latin.essays[0].tokens, vec!["café"]);
    }

    #[test]
    fn vocabulary_ordering_and_min_count() {
        let v = build_vocabulary(&[essay(1, "a a b")], 2).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), None);
        assert_eq!(v.index_of("b"), UNK);

        let v = build_vocabulary(&[essay(1, "b a")], 1).unwrap();
        assert_eq!((v.get("a"), v.get("b")), (Some(2), Some(3)));
        assert_eq!(v.token(PAD), Some(PAD_TOKEN));
        assert_eq!(v.token(UNK), Some(UNK_TOKEN));

        let corpus = [essay(1, "x y y z z z"), essay(2, "w x")];
        let a = build_vocabulary(&corpus, 1).unwrap();
        let b = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.corpus_tokens(), &["z", "x", "y", "w"]);

        assert!(build_vocabulary(&corpus, 0).is_err());
    }

    #[test]
    fn reserved_tokens_cannot_come_from_text() {
        let v = build_vocabulary(&[essay(1, "<pad> <unk>")], 1).unwrap();
        assert!(v.corpus_tokens().iter().all(|t| t != PAD_TOKEN && t != UNK_TOKEN));
    }
}
