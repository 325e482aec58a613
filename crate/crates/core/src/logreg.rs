//! L2-penalized binary logistic regression over sparse TF-IDF features, trained by
//! full-batch gradient descent with halve-on-increase backtracking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tfidf::SparseVec;

#[derive(Debug, Error, PartialEq)]
pub enum LogRegError {
    #[error("feature dimension {got} does not match model dimension {expected}")]
    Shape { expected: usize, got: usize },
    #[error("cost of an empty data set is undefined")]
    EmptyData,
    #[error("training data contains a single class")]
    DegenerateData,
    #[error("objective became non-finite at iteration {0}")]
    Divergence(usize),
    #[error("label {0} is not 0 or 1")]
    Label(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2_lambda: 1.0,
            learning_rate: 1.0,
            max_iters: 1000,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub theta: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
}

/// Overflow-free logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const LOG_CLAMP: f64 = 1e-15;

impl LogRegModel {
    pub fn zeros(dim: usize, l2_lambda: f64) -> Self {
        LogRegModel {
            theta: vec![0.0; dim],
            bias: 0.0,
            l2_lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, x: &SparseVec) -> Result<(), LogRegError> {
        if x.dim != self.theta.len() {
            return Err(LogRegError::Shape {
                expected: self.theta.len(),
                got: x.dim,
            });
        }
        Ok(())
    }

    pub fn decision(&self, x: &SparseVec) -> Result<f64, LogRegError> {
        self.check(x)?;
        Ok(x.dot(&self.theta) + self.bias)
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Result<f64, LogRegError> {
        self.decision(x).map(sigmoid)
    }

    pub fn predict(&self, x: &SparseVec) -> Result<u8, LogRegError> {
        self.predict_proba(x).map(label_of)
    }

    /// Mean binary cross-entropy plus `λ/(2m)·‖θ‖²` (bias unpenalized).
    pub fn cost(&self, data: &[(SparseVec, u8)]) -> Result<f64, LogRegError> {
        if data.is_empty() {
            return Err(LogRegError::EmptyData);
        }
        let mut total = 0.0;
        for (x, y) in data {
            let h = self.predict_proba(x)?;
            total += match *y {
                1 => -h.max(LOG_CLAMP).ln(),
                0 => -(1.0 - h).max(LOG_CLAMP).ln(),
                other => return Err(LogRegError::Label(other)),
            };
        }
        let m = data.len() as f64;
        Ok(total / m + self.penalty(m))
    }

    fn penalty(&self, m: f64) -> f64 {
        self.l2_lambda / (2.0 * m) * self.theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Gradient of [`cost`](Self::cost) with respect to `(θ, bias)`.
    pub fn gradient(&self, data: &[(SparseVec, u8)]) -> Result<(Vec<f64>, f64), LogRegError> {
        if data.is_empty() {
            return Err(LogRegError::EmptyData);
        }
        let m = data.len() as f64;
        let mut g = vec![0.0; self.theta.len()];
        let mut gb = 0.0;
        for (x, y) in data {
            let r = self.predict_proba(x)? - f64::from(*y);
            for &(i, w) in &x.entries {
                g[i as usize] += r * w;
            }
            gb += r;
        }
        for (gi, t) in g.iter_mut().zip(&self.theta) {
            *gi = *gi / m + self.l2_lambda / m * t;
        }
        Ok((g, gb / m))
    }
}

pub fn label_of(probability: f64) -> u8 {
    u8::from(probability >= 0.5)
}

/// Result of [`train`]: the model and the accepted objective value per iteration.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LogRegModel,
    pub objective: Vec<f64>,
    pub converged: bool,
}

pub fn train(train_data: &[(SparseVec, u8)], config: &LogRegConfig) -> Result<TrainOutcome, LogRegError> {
    let dim = train_data.first().map(|(x, _)| x.dim).ok_or(LogRegError::EmptyData)?;
    let has = |c: u8| train_data.iter().any(|(_, y)| *y == c);
    if let Some((_, bad)) = train_data.iter().find(|(_, y)| *y > 1) {
        return Err(LogRegError::Label(*bad));
    }
    if !(has(0) && has(1)) {
        return Err(LogRegError::DegenerateData);
    }

    let mut model = LogRegModel::zeros(dim, config.l2_lambda);
    let mut current = model.cost(train_data)?;
    let mut objective = vec![current];
    let mut lr = config.learning_rate;
    let mut converged = false;
    for iter in 0..config.max_iters {
        let (g, gb) = model.gradient(train_data)?;
        let gmax = g.iter().fold(gb.abs(), |acc, v| acc.max(v.abs()));
        if gmax < config.tol {
            converged = true;
            break;
        }
        loop {
            let candidate = LogRegModel {
                theta: model.theta.iter().zip(&g).map(|(t, d)| t - lr * d).collect(),
                bias: model.bias - lr * gb,
                l2_lambda: model.l2_lambda,
            };
            let c = candidate.cost(train_data)?;
            if !c.is_finite() {
                if lr < f64::MIN_POSITIVE {
                    return Err(LogRegError::Divergence(iter));
                }
                lr *= 0.5;
                continue;
            }
            if c <= current {
                model = candidate;
                current = c;
                objective.push(c);
                break;
            }
            lr *= 0.5;
            if lr < 1e-20 {
                // No descent step exists at machine precision: a stationary point.
                return Ok(TrainOutcome {
                    model,
                    objective,
                    converged: true,
                });
            }
        }
    }
    Ok(TrainOutcome {
        model,
        objective,
        converged,
    })
}
