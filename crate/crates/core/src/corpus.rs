//! Sentiment140 ingestion and the seeded, stratified train/test split.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of tweets drawn for the experiments.
pub const DEFAULT_SAMPLE_SIZE: usize = 10_000;
/// Fraction of the sample that goes to the training partition.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: {message}")]
    Data { row: usize, message: String },
    #[error("requested {requested} tweets but only {available} are available")]
    Capacity { requested: usize, available: usize },
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error("invalid split parameter: {0}")]
    Parameter(String),
}

/// A raw tweet with its binary polarity (0 = negative, 1 = positive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub text: String,
    pub label: u8,
}

/// The seeded train/test partition of a stratified sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub seed: u64,
    pub sample_size: usize,
    pub train: Vec<LabeledTweet>,
    pub test: Vec<LabeledTweet>,
}

impl SplitCorpus {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split corpus serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Decodes Latin-1 bytes: every byte maps to the code point of the same value.
pub fn decode_latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

/// Reads a headerless 6-column Sentiment140 CSV (target, id, date, flag, user, text).
pub fn load_sentiment140(path: impl AsRef<Path>) -> Result<Vec<LabeledTweet>, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_sentiment140(&decode_latin1(&bytes))
}

/// Parses Sentiment140 rows from already-decoded text. Row numbers in errors are 1-based.
pub fn parse_sentiment140(content: &str) -> Result<Vec<LabeledTweet>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(content.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CorpusError::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 6 {
            return Err(CorpusError::Parse {
                row,
                message: format!("expected 6 columns, found {}", record.len()),
            });
        }
        let label = match record[0].trim() {
            "0" => 0,
            "4" => 1,
            other => {
                return Err(CorpusError::Data {
                    row,
                    message: format!("target must be 0 or 4, found {other:?}"),
                })
            }
        };
        let text = &record[5];
        if text.is_empty() {
            return Err(CorpusError::Data {
                row,
                message: "empty tweet text".into(),
            });
        }
        out.push(LabeledTweet {
            text: text.to_string(),
            label,
        });
    }
    Ok(out)
}

/// Draws a class-balanced sample without replacement and splits it into train/test.
///
/// Class 0 receives the extra tweet when `sample_size` is odd. The train partition gets
/// `round(sample_size * train_fraction)` tweets, again split as evenly as possible per
/// class, and each partition is shuffled. Everything is driven by one ChaCha8 stream
/// seeded from `seed`.
pub fn sample_and_split(
    data: &[LabeledTweet],
    sample_size: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitCorpus, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::Parameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if sample_size > data.len() {
        return Err(CorpusError::Capacity {
            requested: sample_size,
            available: data.len(),
        });
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, t) in data.iter().enumerate() {
        by_class[usize::from(t.label)].push(i);
    }
    for (label, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            return Err(CorpusError::Stratification(format!("class {label} is absent")));
        }
    }

    let want = [sample_size - sample_size / 2, sample_size / 2];
    for label in 0..2 {
        if by_class[label].len() < want[label] {
            return Err(CorpusError::Stratification(format!(
                "class {label} has {} tweets, {} needed",
                by_class[label].len(),
                want[label]
            )));
        }
    }

    let n_train = (sample_size as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == sample_size {
        return Err(CorpusError::Parameter(format!(
            "sample of {sample_size} with train_fraction {train_fraction} leaves a partition empty"
        )));
    }
    let train_want = [n_train - n_train / 2, n_train / 2];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(n_train);
    let mut test_idx = Vec::with_capacity(sample_size - n_train);
    for label in 0..2 {
        let pool = &mut by_class[label];
        let (chosen, _) = pool.partial_shuffle(&mut rng, want[label]);
        train_idx.extend_from_slice(&chosen[..train_want[label]]);
        test_idx.extend_from_slice(&chosen[train_want[label]..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);

    Ok(SplitCorpus {
        seed,
        sample_size,
        train: train_idx.iter().map(|&i| data[i].clone()).collect(),
        test: test_idx.iter().map(|&i| data[i].clone()).collect(),
    })
}
