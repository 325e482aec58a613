//! LSTM cell with one bias vector per gate. Gate inputs are the concatenation
//! `z = [h_prev, x]`:
//!
//! ```text
//! f = σ(W_f z + b_f)      i = σ(W_i z + b_i)      g = tanh(W_c z + b_c)
//! c = f ⊙ c_prev + i ⊙ g  o = σ(W_o z + b_o)      h = o ⊙ tanh(c)
//! ```
//!
//! Kernels operate on a batch of rows; rank-1 inputs are treated as a single row.

use super::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, NdError, Tensor};
use crate::logreg::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

pub const GATE_TENSOR_NAMES: [&str; 8] = ["W_f", "W_i", "W_c", "W_o", "b_f", "b_i", "b_c", "b_o"];

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, hidden + input]);
        let b = || Tensor::zeros(&[hidden]);
        LstmCellParams {
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            b_f: b(),
            b_i: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_f.len()
    }

    pub fn input(&self) -> usize {
        self.w_f.shape()[1] - self.hidden()
    }

    /// Tensors in the fixed order W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    pub fn from_tensors(t: [Tensor; 8]) -> Result<Self, NdError> {
        let [w_f, w_i, w_c, w_o, b_f, b_i, b_c, b_o] = t;
        let p = LstmCellParams {
            w_f,
            w_i,
            w_c,
            w_o,
            b_f,
            b_i,
            b_c,
            b_o,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NdError> {
        let ws = [&self.w_f, &self.w_i, &self.w_c, &self.w_o];
        let bs = [&self.b_f, &self.b_i, &self.b_c, &self.b_o];
        let h = self.b_f.len();
        if bs.iter().any(|b| b.shape() != [h]) {
            return Err(NdError::Shape("gate biases must share one length".into()));
        }
        let ws0 = self.w_f.shape();
        if ws0.len() != 2 || ws0[0] != h || ws0[1] < h || ws.iter().any(|w| w.shape() != ws0) {
            return Err(NdError::Shape(format!(
                "gate weights must all be {h} × (hidden + input), found {ws0:?}"
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Intermediates of one forward call, consumed by the matching backward call.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub(crate) rows: usize,
    pub(crate) rank1: bool,
    pub(crate) z: Vec<f64>,
    pub(crate) f: Vec<f64>,
    pub(crate) i: Vec<f64>,
    pub(crate) g: Vec<f64>,
    pub(crate) o: Vec<f64>,
    pub(crate) c_prev: Vec<f64>,
    pub(crate) tanh_c: Vec<f64>,
}

impl LstmCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Row-slice forward: `x` is `rows × input`, `h_prev`/`c_prev` are `rows × hidden`.
/// Writes `h` and `c` (both `rows × hidden`).
pub(crate) fn forward_rows(
    params: &LstmCellParams,
    rows: usize,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    h: &mut [f64],
    c: &mut [f64],
) -> LstmCache {
    let hd = params.hidden();
    let input = params.input();
    let k = hd + input;
    let mut z = vec![0.0; rows * k];
    for r in 0..rows {
        z[r * k..r * k + hd].copy_from_slice(&h_prev[r * hd..(r + 1) * hd]);
        z[r * k + hd..(r + 1) * k].copy_from_slice(&x[r * input..(r + 1) * input]);
    }
    let pre = |w: &Tensor, b: &Tensor| {
        let mut out = Vec::with_capacity(rows * hd);
        for _ in 0..rows {
            out.extend_from_slice(b.data());
        }
        matmul_nt_acc(rows, k, hd, &z, w.data(), &mut out);
        out
    };
    let mut f = pre(&params.w_f, &params.b_f);
    let mut i = pre(&params.w_i, &params.b_i);
    let mut g = pre(&params.w_c, &params.b_c);
    let mut o = pre(&params.w_o, &params.b_o);
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut tanh_c = vec![0.0; rows * hd];
    for n in 0..rows * hd {
        c[n] = f[n] * c_prev[n] + i[n] * g[n];
        tanh_c[n] = c[n].tanh();
        h[n] = o[n] * tanh_c[n];
    }
    LstmCache {
        rows,
        rank1: false,
        z,
        f,
        i,
        g,
        o,
        c_prev: c_prev[..rows * hd].to_vec(),
        tanh_c,
    }
}

/// Row-slice backward. Accumulates parameter gradients into `grads` and writes the
/// gradients for `x`, `h_prev`, `c_prev` into the given buffers (overwriting).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_rows(
    params: &LstmCellParams,
    cache: &LstmCache,
    grad_h: &[f64],
    grad_c: &[f64],
    grads: &mut LstmCellParams,
    grad_x: &mut [f64],
    grad_h_prev: &mut [f64],
    grad_c_prev: &mut [f64],
) {
    let rows = cache.rows;
    let hd = params.hidden();
    let input = params.input();
    let k = hd + input;
    let n = rows * hd;
    let mut da_f = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    for e in 0..n {
        let (f, i, g, o, t) = (cache.f[e], cache.i[e], cache.g[e], cache.o[e], cache.tanh_c[e]);
        let dh = grad_h[e];
        let dc = grad_c[e] + dh * o * (1.0 - t * t);
        da_o[e] = dh * t * o * (1.0 - o);
        da_f[e] = dc * cache.c_prev[e] * f * (1.0 - f);
        da_i[e] = dc * g * i * (1.0 - i);
        da_g[e] = dc * i * (1.0 - g * g);
        grad_c_prev[e] = dc * f;
    }
    let mut dz = vec![0.0; rows * k];
    for (da, w, gw, gb) in [
        (&da_f, &params.w_f, &mut grads.w_f, &mut grads.b_f),
        (&da_i, &params.w_i, &mut grads.w_i, &mut grads.b_i),
        (&da_g, &params.w_c, &mut grads.w_c, &mut grads.b_c),
        (&da_o, &params.w_o, &mut grads.w_o, &mut grads.b_o),
    ] {
        matmul_tn_acc(rows, hd, k, da, &cache.z, gw.data_mut());
        let gbd = gb.data_mut();
        for r in 0..rows {
            for (acc, v) in gbd.iter_mut().zip(&da[r * hd..(r + 1) * hd]) {
                *acc += v;
            }
        }
        matmul_nn_acc(rows, hd, k, da, w.data(), &mut dz);
    }
    for r in 0..rows {
        grad_h_prev[r * hd..(r + 1) * hd].copy_from_slice(&dz[r * k..r * k + hd]);
        grad_x[r * input..(r + 1) * input].copy_from_slice(&dz[r * k + hd..(r + 1) * k]);
    }
}

fn rows_of(t: &Tensor, width: usize, what: &str) -> Result<(usize, bool), NdError> {
    match t.shape() {
        [n] if *n == width => Ok((1, true)),
        [r, n] if *n == width => Ok((*r, false)),
        s => Err(NdError::Shape(format!("{what}: expected width {width}, got shape {s:?}"))),
    }
}

fn shaped(data: Vec<f64>, rows: usize, width: usize, rank1: bool) -> Tensor {
    let shape: Vec<usize> = if rank1 { vec![width] } else { vec![rows, width] };
    Tensor::from_vec(&shape, data).expect("kernel output sized by construction")
}

/// One LSTM step. Returns `(h_t, c_t, cache)` with the rank of `x_t`.
pub fn lstm_cell_forward(
    x_t: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &LstmCellParams,
) -> Result<(Tensor, Tensor, LstmCache), NdError> {
    params.validate()?;
    let hd = params.hidden();
    let (rows, rank1) = rows_of(x_t, params.input(), "x_t")?;
    for (t, what) in [(h_prev, "h_prev"), (c_prev, "c_prev")] {
        if rows_of(t, hd, what)? != (rows, rank1) {
            return Err(NdError::Shape(format!("{what} does not match the batch of x_t")));
        }
    }
    let mut h = vec![0.0; rows * hd];
    let mut c = vec![0.0; rows * hd];
    let mut cache = forward_rows(params, rows, x_t.data(), h_prev.data(), c_prev.data(), &mut h, &mut c);
    cache.rank1 = rank1;
    Ok((shaped(h, rows, hd, rank1), shaped(c, rows, hd, rank1), cache))
}

/// Backward through one step: `(grad_x, grad_h_prev, grad_c_prev, grad_params)`.
pub fn lstm_cell_backward(
    grad_h: &Tensor,
    grad_c: &Tensor,
    cache: &LstmCache,
    params: &LstmCellParams,
) -> Result<(Tensor, Tensor, Tensor, LstmCellParams), NdError> {
    params.validate()?;
    let hd = params.hidden();
    let input = params.input();
    if cache.z.len() != cache.rows * (hd + input) || cache.f.len() != cache.rows * hd {
        return Err(NdError::State("cache was produced for different cell parameters".into()));
    }
    for (t, what) in [(grad_h, "grad_h"), (grad_c, "grad_c")] {
        if rows_of(t, hd, what)?.0 != cache.rows {
            return Err(NdError::State(format!("{what} batch does not match the cached forward call")));
        }
    }
    let mut grads = LstmCellParams::zeros(input, hd);
    let mut gx = vec![0.0; cache.rows * input];
    let mut gh = vec![0.0; cache.rows * hd];
    let mut gc = vec![0.0; cache.rows * hd];
    backward_rows(params, cache, grad_h.data(), grad_c.data(), &mut grads, &mut gx, &mut gh, &mut gc);
    let r1 = cache.rank1;
    Ok((
        shaped(gx, cache.rows, input, r1),
        shaped(gh, cache.rows, hd, r1),
        shaped(gc, cache.rows, hd, r1),
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{central_diff, rel_err};
    use super::super::{seeded_rng, NetRng};
    use super::*;
    use rand::Rng;

    fn random_tensor(rng: &mut NetRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_params(rng: &mut NetRng, input: usize, hidden: usize) -> LstmCellParams {
        let mut p = LstmCellParams::zeros(input, hidden);
        for t in p.tensors_mut() {
            let shape = t.shape().to_vec();
            *t = random_tensor(rng, &shape);
        }
        p
    }

    /// Scalar transliteration of the gate equations, one unit at a time.
    fn oracle_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmCellParams) -> (Vec<f64>, Vec<f64>) {
        let hd = h_prev.len();
        let mut concat = h_prev.to_vec();
        concat.extend_from_slice(x);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let affine = |w: &Tensor, b: &Tensor, u: usize| {
            let mut s = b.data()[u];
            for (j, zj) in concat.iter().enumerate() {
                s += w.data()[u * concat.len() + j] * zj;
            }
            s
        };
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for u in 0..hd {
            let f = sig(affine(&p.w_f, &p.b_f, u));
            let i = sig(affine(&p.w_i, &p.b_i, u));
            let cand = affine(&p.w_c, &p.b_c, u).tanh();
            c[u] = f * c_prev[u] + i * cand;
            let o = sig(affine(&p.w_o, &p.b_o, u));
            h[u] = o * c[u].tanh();
        }
        (h, c)
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmCellParams::zeros(2, 3);
        let (h, c, cache) = lstm_cell_forward(
            &Tensor::from_vec(&[2], vec![0.4, -2.0]).unwrap(),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[3]),
            &p,
        )
        .unwrap();
        assert_eq!(h.data(), &[0.0; 3]);
        assert_eq!(c.data(), &[0.0; 3]);
        assert!(cache.f.iter().chain(&cache.i).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_carry_half_the_cell() {
        let p = LstmCellParams::zeros(2, 3);
        let c_prev = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.3]).unwrap();
        let (h, c, _) = lstm_cell_forward(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &c_prev, &p).unwrap();
        for u in 0..3 {
            let half = 0.5 * c_prev.data()[u];
            assert!((c.data()[u] - half).abs() < 1e-15);
            assert!((h.data()[u] - 0.5 * half.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = seeded_rng(11);
        for _ in 0..10 {
            let p = random_params(&mut rng, 4, 3);
            let x = random_tensor(&mut rng, &[4]);
            let h0 = random_tensor(&mut rng, &[3]);
            let c0 = random_tensor(&mut rng, &[3]);
            let (h, c, _) = lstm_cell_forward(&x, &h0, &c0, &p).unwrap();
            let (oh, oc) = oracle_step(x.data(), h0.data(), c0.data(), &p);
            for u in 0..3 {
                assert!((h.data()[u] - oh[u]).abs() < 1e-12);
                assert!((c.data()[u] - oc[u]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let mut rng = seeded_rng(3);
        let p = random_params(&mut rng, 5, 4);
        let x = random_tensor(&mut rng, &[3, 5]);
        let h0 = random_tensor(&mut rng, &[3, 4]);
        let c0 = random_tensor(&mut rng, &[3, 4]);
        let (h, _, _) = lstm_cell_forward(&x, &h0, &c0, &p).unwrap();
        for r in 0..3 {
            let (oh, _) = oracle_step(x.row(r), h0.row(r), c0.row(r), &p);
            for u in 0..4 {
                assert!((h.row(r)[u] - oh[u]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = LstmCellParams::zeros(2, 3);
        let r = lstm_cell_forward(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &p);
        assert!(matches!(r, Err(NdError::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded_rng(1);
        let p = random_params(&mut rng, 2, 3);
        let (_, _, cache) = lstm_cell_forward(
            &random_tensor(&mut rng, &[2]),
            &random_tensor(&mut rng, &[3]),
            &random_tensor(&mut rng, &[3]),
            &p,
        )
        .unwrap();
        let (gx, gh, gc, gp) = lstm_cell_backward(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &cache, &p).unwrap();
        assert!(gx.data().iter().chain(gh.data()).chain(gc.data()).all(|&v| v == 0.0));
        assert!(gp.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn output_bias_gradient_vanishes_without_cell_state() {
        let p = LstmCellParams::zeros(2, 3);
        let (_, _, cache) = lstm_cell_forward(
            &Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap(),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[3]),
            &p,
        )
        .unwrap();
        let ones = Tensor::from_vec(&[3], vec![1.0; 3]).unwrap();
        let (_, _, _, gp) = lstm_cell_backward(&ones, &Tensor::zeros(&[3]), &cache, &p).unwrap();
        assert!(gp.b_o.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let small = LstmCellParams::zeros(2, 3);
        let big = LstmCellParams::zeros(4, 3);
        let (_, _, cache) =
            lstm_cell_forward(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &small).unwrap();
        let r = lstm_cell_backward(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &cache, &big);
        assert!(matches!(r, Err(NdError::State(_))));
        let r = lstm_cell_backward(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3]), &cache, &small);
        assert!(matches!(r, Err(NdError::State(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        for trial in 0..5 {
            let (input, hidden, rows) = (3 + trial % 3, 3 + trial % 2, 2);
            let p = random_params(&mut rng, input, hidden);
            let x = random_tensor(&mut rng, &[rows, input]);
            let h0 = random_tensor(&mut rng, &[rows, hidden]);
            let c0 = random_tensor(&mut rng, &[rows, hidden]);
            // Scalar loss L = <a, h> + <b, c> with random projections.
            let a = random_tensor(&mut rng, &[rows, hidden]);
            let b = random_tensor(&mut rng, &[rows, hidden]);
            let loss = |p: &LstmCellParams, x: &Tensor, h0: &Tensor, c0: &Tensor| {
                let (h, c, _) = lstm_cell_forward(x, h0, c0, p).unwrap();
                let dot = |u: &Tensor, v: &Tensor| u.data().iter().zip(v.data()).map(|(s, t)| s * t).sum::<f64>();
                dot(&h, &a) + dot(&c, &b)
            };
            let (_, _, cache) = lstm_cell_forward(&x, &h0, &c0, &p).unwrap();
            let (gx, gh, gc, gp) = lstm_cell_backward(&a, &b, &cache, &p).unwrap();
            let step = 1e-5;

            for (which, analytic) in [(0, &gx), (1, &gh), (2, &gc)] {
                for e in 0..analytic.len() {
                    let fd = central_diff(
                        |d| {
                            let (mut x2, mut h2, mut c2) = (x.clone(), h0.clone(), c0.clone());
                            [&mut x2, &mut h2, &mut c2][which].data_mut()[e] += d;
                            loss(&p, &x2, &h2, &c2)
                        },
                        step,
                    );
                    let r = rel_err(analytic.data()[e], fd);
                    assert!(r < 1e-4, "input {which} entry {e}: rel {r}");
                }
            }
            for t in 0..8 {
                for e in 0..p.tensors()[t].len() {
                    let fd = central_diff(
                        |d| {
                            let mut p2 = p.clone();
                            p2.tensors_mut()[t].data_mut()[e] += d;
                            loss(&p2, &x, &h0, &c0)
                        },
                        step,
                    );
                    let r = rel_err(gp.tensors()[t].data()[e], fd);
                    assert!(r < 1e-4, "{} entry {e}: rel {r}", GATE_TENSOR_NAMES[t]);
                }
            }
        }
    }
}
