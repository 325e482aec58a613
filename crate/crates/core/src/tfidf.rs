//! TF-IDF vectorizer.
//!
//! `tf(t, d) = count(t, d) / |d|`, `idf(t) = ln(N / df(t))`, weight = `tf * idf`.
//! No smoothing and, by default, no length normalization. `|d|` counts every token
//! of the document, including tokens outside the fitted feature space.

use std::collections::HashMap;

use thiserror::Error;

use crate::textprep::TokenSeq;

#[derive(Debug, Error, PartialEq)]
pub enum TfidfError {
    #[error("cannot fit TF-IDF: every training document is empty")]
    EmptyCorpus,
    #[error("inconsistent TF-IDF state: {0}")]
    Inconsistent(String),
}

/// Sparse vector with entries sorted by index; zero weights are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub entries: Vec<(u32, f64)>,
    pub dim: usize,
}

impl SparseVec {
    pub fn empty(dim: usize) -> Self {
        SparseVec {
            entries: Vec::new(),
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i as usize]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    features: Vec<String>,
    feature_of: HashMap<String, u32>,
    idf: Vec<f64>,
    n_docs: usize,
    /// Scale each transformed vector to unit Euclidean length. Off by default.
    pub l2_normalize: bool,
}

impl TfidfModel {
    pub fn fit(train_docs: &[TokenSeq]) -> Result<Self, TfidfError> {
        let mut features = Vec::new();
        let mut feature_of: HashMap<String, u32> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        let mut seen_in_doc: Vec<usize> = Vec::new();
        for (d, doc) in train_docs.iter().enumerate() {
            for t in &doc.tokens {
                let f = *feature_of.entry(t.clone()).or_insert_with(|| {
                    features.push(t.clone());
                    df.push(0);
                    seen_in_doc.push(usize::MAX);
                    (features.len() - 1) as u32
                }) as usize;
                if seen_in_doc[f] != d {
                    seen_in_doc[f] = d;
                    df[f] += 1;
                }
            }
        }
        if features.is_empty() {
            return Err(TfidfError::EmptyCorpus);
        }
        let n = train_docs.len() as f64;
        let idf = df.iter().map(|&c| (n / c as f64).ln()).collect();
        Ok(TfidfModel {
            features,
            feature_of,
            idf,
            n_docs: train_docs.len(),
            l2_normalize: false,
        })
    }

    /// Rebuilds a fitted model from its persisted parts.
    pub fn from_parts(features: Vec<String>, idf: Vec<f64>, n_docs: usize) -> Result<Self, TfidfError> {
        if features.len() != idf.len() {
            return Err(TfidfError::Inconsistent(format!(
                "{} features but {} idf weights",
                features.len(),
                idf.len()
            )));
        }
        let bound = (n_docs as f64).ln();
        if let Some(w) = idf.iter().find(|w| !(w.is_finite() && **w >= 0.0 && **w <= bound + 1e-12)) {
            return Err(TfidfError::Inconsistent(format!(
                "idf weight {w} outside [0, ln {n_docs}]"
            )));
        }
        let mut feature_of = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if feature_of.insert(f.clone(), i as u32).is_some() {
                return Err(TfidfError::Inconsistent(format!("duplicate feature {f:?}")));
            }
        }
        Ok(TfidfModel {
            features,
            feature_of,
            idf,
            n_docs,
            l2_normalize: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn feature_index(&self, token: &str) -> Option<u32> {
        self.feature_of.get(token).copied()
    }

    pub fn transform(&self, doc: &TokenSeq) -> SparseVec {
        if doc.is_empty() {
            return SparseVec::empty(self.dim());
        }
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for t in &doc.tokens {
            if let Some(f) = self.feature_index(t) {
                *counts.entry(f).or_default() += 1;
            }
        }
        let total = doc.len() as f64;
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(f, c)| (f, c as f64 / total * self.idf[f as usize]))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        entries.sort_unstable_by_key(|&(f, _)| f);
        let mut v = SparseVec {
            entries,
            dim: self.dim(),
        };
        if self.l2_normalize {
            let n = v.norm();
            if n > 0.0 {
                v.entries.iter_mut().for_each(|(_, w)| *w /= n);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        tokens.iter().copied().collect()
    }

    /// Literal transcription of the three formulas over dense loops.
    fn oracle(corpus: &[TokenSeq], doc: &TokenSeq, term: &str) -> f64 {
        if !corpus.iter().any(|d| d.tokens.iter().any(|t| t == term)) {
            return 0.0;
        }
        let f_td = doc.tokens.iter().filter(|t| *t == term).count() as f64;
        let denom: f64 = doc.tokens.len() as f64;
        let tf = if denom == 0.0 { 0.0 } else { f_td / denom };
        let n = corpus.len() as f64;
        let containing = corpus.iter().filter(|d| d.tokens.iter().any(|t| t == term)).count() as f64;
        tf * (n / containing).ln()
    }

    #[test]
    fn idf_values() {
        let docs = [seq(&["x", "a"]), seq(&["a"]), seq(&["a"]), seq(&["a"])];
        let m = TfidfModel::fit(&docs).unwrap();
        let x = m.feature_index("x").unwrap() as usize;
        let a = m.feature_index("a").unwrap() as usize;
        assert!((m.idf()[x] - 4f64.ln()).abs() < 1e-15);
        assert!((m.idf()[x] - 1.3863).abs() < 1e-4);
        assert_eq!(m.idf()[a], 0.0);

        let m = TfidfModel::fit(&[seq(&["a", "b"]), seq(&["a"])]).unwrap();
        assert_eq!(m.features(), &["a".to_string(), "b".to_string()]);
        assert_eq!(m.idf()[0], 0.0);
        assert!((m.idf()[1] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn transform_hand_example() {
        let m = TfidfModel::from_parts(vec!["good".into(), "bad".into()], vec![0.5, 1.0], 3).unwrap();
        let v = m.transform(&seq(&["good", "good", "bad"]));
        assert!((v.get(0) - 2.0 / 3.0 * 0.5).abs() < 1e-15);
        assert!((v.get(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!(m.transform(&seq(&[])).is_empty());
        assert!(m.transform(&seq(&["nope", "never"])).is_empty());
    }

    #[test]
    fn out_of_space_tokens_count_in_denominator() {
        let m = TfidfModel::from_parts(vec!["good".into()], vec![1.0], 3).unwrap();
        let v = m.transform(&seq(&["good", "unseen"]));
        assert_eq!(v.get(0), 0.5);
    }

    #[test]
    fn fit_rejects_all_empty() {
        assert_eq!(TfidfModel::fit(&[seq(&[]), seq(&[])]), Err(TfidfError::EmptyCorpus));
    }

    #[test]
    fn l2_normalization_flag() {
        let mut m = TfidfModel::fit(&[seq(&["a", "b"]), seq(&["c"]), seq(&["a"])]).unwrap();
        m.l2_normalize = true;
        let v = m.transform(&seq(&["a", "b", "c"]));
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<TokenSeq>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 0..8),
            1..=10,
        )
        .prop_map(|docs| docs.into_iter().map(|d| d.into_iter().collect()).collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(corpus in corpus_strategy(), probe in proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e", "f", "z"]), 0..8)) {
            prop_assume!(corpus.iter().any(|d| !d.is_empty()));
            let m = TfidfModel::fit(&corpus).unwrap();
            let probe: TokenSeq = probe.into_iter().collect();
            for doc in corpus.iter().chain(std::iter::once(&probe)) {
                let v = m.transform(doc);
                prop_assert!(v.entries.iter().all(|&(i, w)| (i as usize) < v.dim && w != 0.0 && w.is_finite()));
                for (f, term) in m.features().iter().enumerate() {
                    let want = oracle(&corpus, doc, term);
                    prop_assert!((v.get(f as u32) - want).abs() <= 1e-12, "term {} got {} want {}", term, v.get(f as u32), want);
                }
            }
        }

        #[test]
        fn duplicating_tokens_is_invariant(corpus in corpus_strategy()) {
            prop_assume!(corpus.iter().any(|d| !d.is_empty()));
            let m = TfidfModel::fit(&corpus).unwrap();
            for doc in &corpus {
                let doubled: TokenSeq = doc.tokens.iter().flat_map(|t| [t.clone(), t.clone()]).collect();
                let a = m.transform(doc);
                let b = m.transform(&doubled);
                prop_assert_eq!(a.entries.len(), b.entries.len());
                for (x, y) in a.entries.iter().zip(&b.entries) {
                    prop_assert_eq!(x.0, y.0);
                    prop_assert!((x.1 - y.1).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn ubiquitous_terms_weigh_nothing(mut corpus in corpus_strategy()) {
            for d in corpus.iter_mut() { d.tokens.push("everywhere".into()); }
            let m = TfidfModel::fit(&corpus).unwrap();
            let f = m.feature_index("everywhere").unwrap();
            for d in &corpus { prop_assert_eq!(m.transform(d).get(f), 0.0); }
        }
    }
}
