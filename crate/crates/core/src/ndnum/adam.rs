use serde::{Deserialize, Serialize};

use super::{NdError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, hyper: AdamHyper) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            step_count: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<(), NdError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NdError::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(NdError::Shape(format!(
                "tensor {k}: parameter {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[k].shape()
            )));
        }
    }
    state.step_count += 1;
    let AdamHyper {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new([&p], AdamHyper::default());
        adam_step(&mut [&mut p], &[&g], &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = c and v̂ = c² after one step, so the update is lr·c/(|c| + ε).
        for c in [3.0, -0.02, 1e-3] {
            let mut p = Tensor::scalar(1.0);
            let g = Tensor::scalar(c);
            let hyper = AdamHyper::default();
            let mut s = AdamState::new([&p], hyper);
            adam_step(&mut [&mut p], &[&g], &mut s).unwrap();
            let want = 1.0 - hyper.learning_rate * c / (c.abs() + hyper.epsilon);
            assert!((p.data()[0] - want).abs() < 1e-15);
            assert!(((1.0 - p.data()[0]).abs() - hyper.learning_rate).abs() < 1e-7);
        }
    }

    #[test]
    fn second_moment_nonnegative_and_deterministic() {
        let run = || {
            let mut p = Tensor::from_vec(&[4], vec![0.5, -0.5, 0.25, 2.0]).unwrap();
            let mut s = AdamState::new([&p], AdamHyper::default());
            for k in 0..10 {
                let g = Tensor::from_vec(&[4], (0..4).map(|i| ((i + k) as f64).sin()).collect()).unwrap();
                adam_step(&mut [&mut p], &[&g], &mut s).unwrap();
            }
            assert!(s.v[0].data().iter().all(|&v| v >= 0.0));
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new([&p], AdamHyper::default());
        assert!(adam_step(&mut [&mut p], &[&g], &mut s).is_err());
    }
}
