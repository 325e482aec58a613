use rand::Rng;

use super::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, NdError, Tensor};
use crate::logreg::sigmoid;

/// Looks up one table row per index. Output is `indices.len() × emb_dim`.
pub fn embedding_forward(indices: &[u32], table: &Tensor) -> Result<Tensor, NdError> {
    let (vocab, dim) = table.as_matrix()?;
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        if i as usize >= vocab {
            return Err(NdError::Shape(format!("index {i} outside a vocabulary of {vocab}")));
        }
        out.extend_from_slice(table.row(i as usize));
    }
    Tensor::from_vec(&[indices.len(), dim], out)
}

/// Adds each upstream row into the gradient row of its index.
pub fn embedding_backward(indices: &[u32], upstream: &Tensor, grad_table: &mut Tensor) -> Result<(), NdError> {
    let (vocab, dim) = grad_table.as_matrix()?;
    if upstream.shape() != [indices.len(), dim] {
        return Err(NdError::Shape(format!(
            "upstream {:?} does not match {} positions × {dim}",
            upstream.shape(),
            indices.len()
        )));
    }
    for (pos, &i) in indices.iter().enumerate() {
        if i as usize >= vocab {
            return Err(NdError::Shape(format!("index {i} outside a vocabulary of {vocab}")));
        }
        for (g, u) in grad_table.row_mut(i as usize).iter_mut().zip(upstream.row(pos)) {
            *g += u;
        }
    }
    Ok(())
}

/// Inverted-dropout mask: every entry is either 0 or `1/(1-p)`. `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scale: Option<Vec<f64>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask { scale: None }
    }

    /// Draws a mask for `n` elements. Consumes one uniform draw per element when
    /// training with `p > 0`, nothing otherwise.
    pub fn sample<R: Rng + ?Sized>(n: usize, p: f64, training: bool, rng: &mut R) -> Result<Self, NdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NdError::Domain(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(Self::identity());
        }
        let keep = 1.0 / (1.0 - p);
        let scale = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(DropoutMask { scale: Some(scale) })
    }

    pub fn is_identity(&self) -> bool {
        self.scale.is_none()
    }

    /// Multiplies in place; used for both the forward pass and the backward pass.
    pub fn apply(&self, values: &mut [f64]) {
        if let Some(s) = &self.scale {
            assert_eq!(s.len(), values.len(), "dropout mask length mismatch");
            values.iter_mut().zip(s).for_each(|(v, m)| *v *= m);
        }
    }

    pub fn backward(&self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        self.apply(g.data_mut());
        g
    }
}

pub fn dropout<R: Rng + ?Sized>(x: &Tensor, p: f64, training: bool, rng: &mut R) -> Result<(Tensor, DropoutMask), NdError> {
    let mask = DropoutMask::sample(x.len(), p, training, rng)?;
    let mut y = x.clone();
    mask.apply(y.data_mut());
    Ok((y, mask))
}

/// `y = x · wᵀ + b` for `x: rows × in`, `w: out × in`, `b: out`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
    let (rows, input) = x.as_matrix()?;
    let (out, w_in) = w.as_matrix()?;
    if w_in != input || b.shape() != [out] {
        return Err(NdError::Shape(format!(
            "affine: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    matmul_nt_acc(rows, input, out, x.data(), w.data(), &mut y);
    Tensor::from_vec(&[rows, out], y)
}

/// Accumulates `grad_w`/`grad_b` and returns the gradient for `x` (`rows × in`).
pub fn affine_backward(
    x: &Tensor,
    w: &Tensor,
    grad_y: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Result<Tensor, NdError> {
    let (rows, input) = x.as_matrix()?;
    let (out, _) = w.as_matrix()?;
    if grad_y.len() != rows * out || grad_w.shape() != w.shape() || grad_b.len() != out {
        return Err(NdError::Shape("affine backward: gradient shapes disagree".into()));
    }
    matmul_tn_acc(rows, out, input, grad_y.data(), x.data(), grad_w.data_mut());
    for r in 0..rows {
        for (gb, g) in grad_b.data_mut().iter_mut().zip(&grad_y.data()[r * out..(r + 1) * out]) {
            *gb += g;
        }
    }
    let mut gx = vec![0.0; rows * input];
    matmul_nn_acc(rows, out, input, grad_y.data(), w.data(), &mut gx);
    Tensor::from_vec(&[rows, input], gx)
}

/// Stable binary cross-entropy on a logit: `max(z,0) − z·y + ln(1 + e^{−|z|})`.
/// Returns `(loss, ∂loss/∂z)`.
pub fn bce_with_logits(logit: f64, y: u8) -> Result<(f64, f64), NdError> {
    if !logit.is_finite() {
        return Err(NdError::Domain(format!("non-finite logit {logit}")));
    }
    if y > 1 {
        return Err(NdError::Domain(format!("label {y} is not 0 or 1")));
    }
    let yf = f64::from(y);
    let loss = logit.max(0.0) - logit * yf + (-logit.abs()).exp().ln_1p();
    Ok((loss, sigmoid(logit) - yf))
}
