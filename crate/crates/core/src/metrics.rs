//! Confusion matrix, accuracy / precision / recall / F1, and learning curves.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilstm::EpochStats;
use crate::corpus::SplitCorpus;
use crate::logreg::LogRegConfig;
use crate::pipeline::{ClassicalModel, PipelineError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {truth} labels")]
    Shape { preds: usize, truth: usize },
    #[error("{0}")]
    Domain(String),
    #[error("learning-curve size {size} exceeds the {available} training examples")]
    Capacity { size: usize, available: usize },
    #[error(transparent)]
    Pipeline(#[from] Box<PipelineError>),
    #[error("curve CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, pred: u8, truth: u8) {
        match (pred, truth) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn transpose(&self) -> Self {
        ConfusionMatrix {
            tp: self.tp,
            tn: self.tn,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

pub fn confusion(preds: &[u8], truth: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != truth.len() {
        return Err(MetricsError::Shape {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Domain("no predictions to compare".into()));
    }
    if let Some(bad) = preds.iter().chain(truth).find(|&&v| v > 1) {
        return Err(MetricsError::Domain(format!("label {bad} is not 0 or 1")));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        cm.record(p, t);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DegenerateFlags {
    /// No positive predictions: precision reported as 0.
    pub precision: bool,
    /// No positive labels: recall reported as 0.
    pub recall: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate_flags: DegenerateFlags,
    pub confusion: ConfusionJson,
}

/// Confusion counts as they appear in the JSON report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionJson {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl From<ConfusionMatrix> for ConfusionJson {
    fn from(c: ConfusionMatrix) -> Self {
        ConfusionJson {
            tp: c.tp,
            tn: c.tn,
            fp: c.fp,
            fn_: c.fn_,
        }
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Domain("empty confusion matrix".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (precision, p_degenerate) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, r_degenerate) = ratio(cm.tp, cm.tp + cm.fn_);
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1: f1_score(precision, recall),
        degenerate_flags: DegenerateFlags {
            precision: p_degenerate,
            recall: r_degenerate,
        },
        confusion: (*cm).into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    BySampleSize,
    ByEpoch,
}

impl CurveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::BySampleSize => "by_sample_size",
            CurveKind::ByEpoch => "by_epoch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

impl CurvePoint {
    pub fn gap(&self) -> f64 {
        self.train_accuracy - self.validation_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

pub const CURVE_CSV_HEADER: &str = "kind,x,train_accuracy,validation_accuracy";

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6}",
                self.kind.as_str(),
                p.x,
                p.train_accuracy,
                p.validation_accuracy
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CURVE_CSV_HEADER => {}
            _ => {
                return Err(MetricsError::Csv {
                    line: 1,
                    message: format!("expected header {CURVE_CSV_HEADER:?}"),
                })
            }
        }
        let mut kind = None;
        let mut points = Vec::new();
        for (i, line) in lines {
            let bad = |message: String| MetricsError::Csv { line: i + 1, message };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            }
            let k = match cols[0] {
                "by_sample_size" => CurveKind::BySampleSize,
                "by_epoch" => CurveKind::ByEpoch,
                other => return Err(bad(format!("unknown kind {other:?}"))),
            };
            if kind.is_some_and(|prev| prev != k) {
                return Err(bad("mixed curve kinds".into()));
            }
            kind = Some(k);
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
            points.push(CurvePoint {
                x: cols[1].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                train_accuracy: num(cols[2])?,
                validation_accuracy: num(cols[3])?,
            });
        }
        let kind = kind.ok_or(MetricsError::Csv {
            line: 2,
            message: "no data rows".into(),
        })?;
        Ok(LearningCurve { kind, points })
    }
}

/// Training sizes 1,000 to 7,000 in steps of 1,000.
pub fn default_curve_sizes() -> Vec<usize> {
    (1..=7).map(|k| k * 1_000).collect()
}

/// Fits the classical pipeline on growing prefixes of a seeded shuffle of the training
/// split. Train accuracy is measured on the examples actually used; validation
/// accuracy on the test split.
pub fn ml_learning_curve(
    corpus: &SplitCorpus,
    sizes: &[usize],
    seed: u64,
    config: &LogRegConfig,
) -> Result<LearningCurve, MetricsError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes.first() == Some(&0) {
        return Err(MetricsError::Domain("sizes must be positive and strictly increasing".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > corpus.train.len()) {
        return Err(MetricsError::Capacity {
            size: s,
            available: corpus.train.len(),
        });
    }
    let mut shuffled = corpus.train.clone();
    shuffled.shuffle(&mut crate::ndnum::seeded_rng(seed));
    let mut points = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let subset = &shuffled[..s];
        let (model, _) = ClassicalModel::fit(subset, config).map_err(Box::new)?;
        let train_report = report(&model.evaluate(subset).map_err(Box::new)?)?;
        let test_report = report(&model.evaluate(&corpus.test).map_err(Box::new)?)?;
        points.push(CurvePoint {
            x: s,
            train_accuracy: train_report.accuracy,
            validation_accuracy: test_report.accuracy,
        });
    }
    Ok(LearningCurve {
        kind: CurveKind::BySampleSize,
        points,
    })
}

pub fn dl_learning_curve(history: &[EpochStats]) -> LearningCurve {
    LearningCurve {
        kind: CurveKind::ByEpoch,
        points: history
            .iter()
            .enumerate()
            .map(|(i, e)| CurvePoint {
                x: i + 1,
                train_accuracy: e.train_accuracy,
                validation_accuracy: e.validation_accuracy,
            })
            .collect(),
    }
}
