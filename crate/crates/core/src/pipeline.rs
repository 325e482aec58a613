//! End-to-end glue: raw tweets in, trained classifiers and confusion matrices out.

use thiserror::Error;

use crate::bilstm::{self, BiLstmConfig, BiLstmError, BiLstmModel, EpochStats, TrainRunConfig};
use crate::corpus::{LabeledTweet, SplitCorpus};
use crate::logreg::{self, LogRegConfig, LogRegError, LogRegModel, TrainOutcome};
use crate::metrics::{ConfusionMatrix, MetricsError};
use crate::textprep::{self, encode, preprocess, EncodedSeq, TextError, TokenSeq, Vocabulary};
use crate::tfidf::{TfidfError, TfidfModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Tfidf(#[from] TfidfError),
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    BiLstm(#[from] BiLstmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("vectorizer has {vectorizer} features but the classifier expects {model}")]
    Mismatch { vectorizer: usize, model: usize },
}

/// TF-IDF vectorizer plus logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalModel {
    pub vectorizer: TfidfModel,
    pub model: LogRegModel,
}

impl ClassicalModel {
    pub fn new(vectorizer: TfidfModel, model: LogRegModel) -> Result<Self, PipelineError> {
        if vectorizer.dim() != model.dim() {
            return Err(PipelineError::Mismatch {
                vectorizer: vectorizer.dim(),
                model: model.dim(),
            });
        }
        Ok(ClassicalModel { vectorizer, model })
    }

    pub fn fit(train: &[LabeledTweet], config: &LogRegConfig) -> Result<(Self, TrainOutcome), PipelineError> {
        let docs: Vec<TokenSeq> = train.iter().map(|t| preprocess(&t.text)).collect();
        let vectorizer = TfidfModel::fit(&docs)?;
        let data: Vec<_> = docs
            .iter()
            .zip(train)
            .map(|(d, t)| (vectorizer.transform(d), t.label))
            .collect();
        let outcome = logreg::train(&data, config)?;
        Ok((
            ClassicalModel {
                vectorizer,
                model: outcome.model.clone(),
            },
            outcome,
        ))
    }

    pub fn predict_proba_tokens(&self, tokens: &TokenSeq) -> Result<f64, PipelineError> {
        Ok(self.model.predict_proba(&self.vectorizer.transform(tokens))?)
    }

    pub fn predict_proba(&self, text: &str) -> Result<f64, PipelineError> {
        self.predict_proba_tokens(&preprocess(text))
    }

    pub fn evaluate(&self, data: &[LabeledTweet]) -> Result<ConfusionMatrix, PipelineError> {
        let mut cm = ConfusionMatrix::default();
        for t in data {
            cm.record(logreg::label_of(self.predict_proba(&t.text)?), t.label);
        }
        Ok(cm)
    }
}

/// BiLSTM plus the vocabulary and sequence length it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub model: BiLstmModel,
    pub vocab: Vocabulary,
}

/// A split encoded for the neural path.
#[derive(Debug, Clone)]
pub struct EncodedSplit {
    pub vocab: Vocabulary,
    pub train: Vec<(EncodedSeq, u8)>,
    pub test: Vec<(EncodedSeq, u8)>,
    /// Training tweets that cleaned down to nothing and were left out of training.
    pub dropped_empty_train: usize,
}

/// Builds the vocabulary from the training split and encodes both partitions.
/// Tweets with no tokens after cleaning cannot drive the recurrence and are excluded
/// from the training set; they stay in the test set, where inference is defined.
pub fn encode_split(split: &SplitCorpus, max_len: usize) -> Result<EncodedSplit, PipelineError> {
    let train_tokens: Vec<TokenSeq> = split.train.iter().map(|t| preprocess(&t.text)).collect();
    let vocab = Vocabulary::build(&train_tokens)?;
    let mut dropped = 0;
    let train = train_tokens
        .iter()
        .zip(&split.train)
        .filter_map(|(toks, t)| {
            if toks.is_empty() {
                dropped += 1;
                None
            } else {
                Some((encode(toks, &vocab, max_len), t.label))
            }
        })
        .collect();
    let test = split
        .test
        .iter()
        .map(|t| (encode(&preprocess(&t.text), &vocab, max_len), t.label))
        .collect();
    Ok(EncodedSplit {
        vocab,
        train,
        test,
        dropped_empty_train: dropped,
    })
}

impl NeuralModel {
    /// Encodes the split, initializes with `init_seed`, and trains.
    pub fn fit(
        split: &SplitCorpus,
        arch: BiLstmConfig,
        init_seed: u64,
        run: &TrainRunConfig,
        on_epoch: impl FnMut(&EpochStats),
    ) -> Result<(Self, Vec<EpochStats>, EncodedSplit), PipelineError> {
        let encoded = encode_split(split, arch.max_len)?;
        let config = BiLstmConfig {
            vocab: encoded.vocab.size(),
            ..arch
        };
        let model = BiLstmModel::init(config, init_seed)?;
        let (model, history) = bilstm::train(model, &encoded.train, &encoded.test, run, on_epoch)?;
        Ok((
            NeuralModel {
                model,
                vocab: encoded.vocab.clone(),
            },
            history,
            encoded,
        ))
    }

    pub fn max_len(&self) -> usize {
        self.model.config.max_len
    }

    pub fn encode(&self, tokens: &TokenSeq) -> EncodedSeq {
        textprep::encode(tokens, &self.vocab, self.max_len())
    }

    pub fn predict_proba_tokens(&self, tokens: &TokenSeq) -> Result<f64, PipelineError> {
        Ok(self.model.predict_proba(&[self.encode(tokens)])?[0])
    }

    pub fn predict_proba(&self, text: &str) -> Result<f64, PipelineError> {
        self.predict_proba_tokens(&preprocess(text))
    }

    pub fn evaluate(&self, data: &[LabeledTweet]) -> Result<ConfusionMatrix, PipelineError> {
        let seqs: Vec<EncodedSeq> = data.iter().map(|t| self.encode(&preprocess(&t.text))).collect();
        let preds = bilstm::predict_labels(&self.model, &seqs)?;
        let mut cm = ConfusionMatrix::default();
        for (p, t) in preds.into_iter().zip(data) {
            cm.record(p, t.label);
        }
        Ok(cm)
    }
}
