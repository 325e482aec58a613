//! Tweet normalization, tokenization, vocabulary and fixed-length encoding.
//!
//! Cleaning applies, in order: lowercase, strip `http(s)://` links up to the next
//! whitespace, strip `@mentions`, drop `#` marks (the hashtag word survives), drop
//! everything that is not `a-z` or whitespace, collapse whitespace runs, trim.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 50;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyVocabulary,
    #[error("vocab.json: {0}")]
    Format(String),
    #[error("vocab.json I/O: {0}")]
    Io(#[from] std::io::Error),
}

struct Patterns {
    url: Regex,
    mention: Regex,
    non_alpha: Regex,
    spaces: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"https?://\S*").unwrap(),
        mention: Regex::new(r"@\w+").unwrap(),
        non_alpha: Regex::new(r"[^a-z\s]").unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
    })
}

pub fn clean(text: &str) -> String {
    let p = patterns();
    let s = text.to_lowercase();
    let s = p.url.replace_all(&s, "");
    let s = p.mention.replace_all(&s, "");
    let s = s.replace('#', "");
    let s = p.non_alpha.replace_all(&s, "");
    p.spaces.replace_all(&s, " ").trim().to_string()
}

/// Ordered lowercase ASCII word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq {
            tokens: iter.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn tokenize(cleaned: &str) -> TokenSeq {
    cleaned.split(' ').filter(|t| !t.is_empty()).collect()
}

/// `clean` followed by `tokenize`.
pub fn preprocess(text: &str) -> TokenSeq {
    tokenize(&clean(text))
}

/// Token ↔ index mapping with PAD = 0 and UNK = 1 reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_of: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let mut v = Vocabulary {
            index_of: HashMap::new(),
            tokens: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    fn insert(&mut self, token: &str) -> u32 {
        if let Some(&i) = self.index_of.get(token) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.index_of.insert(token.to_string(), i);
        self.tokens.push(token.to_string());
        i
    }

    /// Builds the vocabulary from training sequences; corpus tokens get indices
    /// 2.. in order of first appearance.
    pub fn build<'a>(train_seqs: impl IntoIterator<Item = &'a TokenSeq>) -> Result<Self, TextError> {
        let mut v = Self::with_reserved();
        for seq in train_seqs {
            for t in &seq.tokens {
                v.insert(t);
            }
        }
        if v.size() == 2 {
            return Err(TextError::EmptyVocabulary);
        }
        Ok(v)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_index(&self) -> u32 {
        PAD_INDEX
    }

    pub fn unk_index(&self) -> u32 {
        UNK_INDEX
    }

    pub fn index(&self, token: &str) -> Option<u32> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps indices back to tokens, stopping at the first pad.
    pub fn decode(&self, seq: &EncodedSeq) -> TokenSeq {
        seq.indices[..seq.true_len]
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Serializes to the `vocab.json` layout with keys in index order.
    pub fn to_json(&self, max_len: usize) -> String {
        let file = VocabFile {
            pad_index: PAD_INDEX,
            unk_index: UNK_INDEX,
            tokens: OrderedTokens(&self.tokens),
            max_len,
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    /// Parses `vocab.json`, returning the vocabulary and the recorded `max_len`.
    pub fn from_json(s: &str) -> Result<(Self, usize), TextError> {
        let raw: RawVocabFile =
            serde_json::from_str(s).map_err(|e| TextError::Format(e.to_string()))?;
        if raw.pad_index != PAD_INDEX || raw.unk_index != UNK_INDEX {
            return Err(TextError::Format(format!(
                "reserved indices must be pad=0 unk=1, found pad={} unk={}",
                raw.pad_index, raw.unk_index
            )));
        }
        let mut tokens = vec![None; raw.tokens.len()];
        for (tok, &i) in &raw.tokens {
            let slot = tokens
                .get_mut(i as usize)
                .ok_or_else(|| TextError::Format(format!("index {i} of {tok:?} out of range")))?;
            if slot.replace(tok.clone()).is_some() {
                return Err(TextError::Format(format!("index {i} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .map(|t| t.expect("bijection checked above"))
            .collect();
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(TextError::Format("missing reserved tokens".into()));
        }
        let index_of = raw.tokens.into_iter().collect();
        Ok((Vocabulary { index_of, tokens }, raw.max_len))
    }

    pub fn write_json(&self, path: impl AsRef<Path>, max_len: usize) -> Result<(), TextError> {
        fs::write(path, self.to_json(max_len))?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<(Self, usize), TextError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct VocabFile<'a> {
    pad_index: u32,
    unk_index: u32,
    tokens: OrderedTokens<'a>,
    max_len: usize,
}

struct OrderedTokens<'a>(&'a [String]);

impl Serialize for OrderedTokens<'_> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (i, t) in self.0.iter().enumerate() {
            map.serialize_entry(t, &(i as u32))?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
struct RawVocabFile {
    pad_index: u32,
    unk_index: u32,
    tokens: HashMap<String, u32>,
    max_len: usize,
}

/// Fixed-length index sequence; positions at or beyond `true_len` hold PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSeq {
    pub indices: Vec<u32>,
    pub true_len: usize,
}

impl EncodedSeq {
    pub fn max_len(&self) -> usize {
        self.indices.len()
    }

    /// The non-pad prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.indices[..self.true_len]
    }
}

/// Maps tokens through `vocab` (UNK when unseen), keeps the first `max_len`, right-pads.
pub fn encode(seq: &TokenSeq, vocab: &Vocabulary, max_len: usize) -> EncodedSeq {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut indices: Vec<u32> = seq
        .tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.index(t).unwrap_or(UNK_INDEX))
        .collect();
    let true_len = indices.len();
    indices.resize(max_len, PAD_INDEX);
    EncodedSeq { indices, true_len }
}
