//! Tweet sentiment classification from scratch.
//!
//! Two classifiers share one preprocessing pipeline:
//!
//! * a classical path: [`textprep`] → [`tfidf`] → [`logreg`]
//! * a neural path: [`textprep`] → [`bilstm`] (built on the kernels in [`ndnum`])
//!
//! [`corpus`] handles Sentiment140 ingestion and the seeded stratified split,
//! [`metrics`] the confusion matrix, scores and learning curves, and
//! [`modelstore`] the manifest + binary artifact format. [`api`] holds the
//! JSON wire types shared by the inference service and its client.

pub mod api;
pub mod bilstm;
pub mod corpus;
pub mod logreg;
pub mod metrics;
pub mod modelstore;
pub mod ndnum;
pub mod pipeline;
pub mod textprep;
pub mod tfidf;

pub use corpus::{LabeledTweet, SplitCorpus};
pub use textprep::{EncodedSeq, TokenSeq, Vocabulary};
