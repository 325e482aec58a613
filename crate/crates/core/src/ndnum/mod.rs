//! Dense numerical core for the neural path.
//!
//! Everything is `f64`. Kernels take explicit caches and explicit RNGs, so the
//! same inputs and seed always produce the same bits.

mod adam;
mod layers;
pub(crate) mod lstm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use layers::{
    affine_backward, affine_forward, bce_with_logits, dropout, embedding_backward, embedding_forward,
    DropoutMask,
};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmCache, LstmCellParams};

#[derive(Debug, Error, PartialEq)]
pub enum NdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state error: {0}")]
    State(String),
}

/// The generator used for every random draw: ChaCha8 seeded with `seed_from_u64`.
pub type NetRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> NetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NdError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NdError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor; a rank-1 tensor is one row.
    pub fn as_matrix(&self) -> Result<(usize, usize), NdError> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => Err(NdError::Shape(format!("expected rank 1 or 2, got {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().unwrap();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = *self.shape.last().unwrap();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c[m×n] = alpha · op(a) · op(b) + beta · c`, with `op(a)` of shape `m×k` and
/// `op(b)` of shape `k×n` described by row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(a.len() >= last(m, k, rsa, csa), "gemm: lhs too short");
    assert!(b.len() >= last(k, n, rsb, csb), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above bound every strided access inside the slices, and
    // `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m×n] += a[m×k] · bᵀ` where `b` is stored `n×k`.
pub(crate) fn matmul_nt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, a, (k as isize, 1), b, (1, k as isize), 1.0, c);
}

/// `c[n×k] += aᵀ · b` where `a` is stored `m×n` and `b` is `m×k`.
pub(crate) fn matmul_tn_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(n, m, k, a, (1, n as isize), b, (k as isize, 1), 1.0, c);
}

/// `c[m×k] += a[m×n] · b[n×k]`.
pub(crate) fn matmul_nn_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, n, k, a, (n as isize, 1), b, (k as isize, 1), 1.0, c);
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Relative error with a floor on the denominator so that entries whose true value
    /// is below the finite-difference noise level (~1e-10) are compared absolutely.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
    }

    pub fn central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
        (f(h) - f(-h)) / (2.0 * h)
    }
}
