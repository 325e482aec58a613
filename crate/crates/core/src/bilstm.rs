//! Stacked bidirectional LSTM sentiment classifier.
//!
//! embedding → N × (forward LSTM ‖ backward LSTM) → dropout → affine(2H → 1) logit.
//!
//! Recurrence only visits the `true_len` real positions of each sequence, so trailing
//! pads never influence a logit. Within a batch, sequences are sorted by length
//! (longest first) so that at every time step the still-active sequences form a
//! prefix and one matrix product serves the whole step. The backward direction reads
//! position `len - 1 - s` at step `s`.
//!
//! Dropout is applied to the output of every layer that feeds another layer and to
//! the final `[h_fwd(last) ⊕ h_bwd(first)]` representation, in training mode only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logreg::sigmoid;
use crate::ndnum::{
    adam_step, bce_with_logits, lstm::backward_rows, lstm::forward_rows, seeded_rng, AdamHyper, AdamState,
    DropoutMask, LstmCache, LstmCellParams, NdError, NetRng, Tensor,
};
use crate::textprep::EncodedSeq;

#[derive(Debug, Error, PartialEq)]
pub enum BiLstmError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("sequence {0} of the batch is empty; training needs at least one token")]
    DegenerateInput(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLstmConfig {
    pub vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl BiLstmConfig {
    /// The architecture of the reference experiments for a given vocabulary size.
    pub fn reference(vocab: usize) -> Self {
        BiLstmConfig {
            vocab,
            emb_dim: 128,
            hidden: 128,
            num_layers: 2,
            dropout: 0.3,
            max_len: 50,
        }
    }

    pub fn validate(&self) -> Result<(), BiLstmError> {
        if self.vocab < 2 || self.emb_dim == 0 || self.hidden == 0 || self.num_layers == 0 || self.max_len == 0 {
            return Err(BiLstmError::Config(format!("{self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(BiLstmError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.emb_dim
        } else {
            2 * self.hidden
        }
    }
}

/// Trainable parameter count with one bias per gate and a single-logit head.
pub fn parameter_count(config: &BiLstmConfig) -> usize {
    let h = config.hidden;
    let lstm: usize = (0..config.num_layers)
        .map(|l| 2 * 4 * (h * (config.layer_input(l) + h) + h))
        .sum();
    config.vocab * config.emb_dim + lstm + (2 * h + 1)
}

/// The count under the dual-bias-per-gate convention with a two-logit head, as used by
/// common deep-learning frameworks.
pub fn dual_bias_two_head_parameter_count(config: &BiLstmConfig) -> usize {
    let extra_biases = config.num_layers * 2 * 4 * config.hidden;
    let extra_head_unit = 2 * config.hidden + 1;
    parameter_count(config) + extra_biases + extra_head_unit
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmModel {
    pub embedding: Tensor,
    pub layers: Vec<BiLayer>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub config: BiLstmConfig,
}

impl BiLstmModel {
    pub fn zeros(config: BiLstmConfig) -> Result<Self, BiLstmError> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| BiLayer {
                forward: LstmCellParams::zeros(config.layer_input(l), config.hidden),
                backward: LstmCellParams::zeros(config.layer_input(l), config.hidden),
            })
            .collect();
        Ok(BiLstmModel {
            embedding: Tensor::zeros(&[config.vocab, config.emb_dim]),
            layers,
            head_w: Tensor::zeros(&[1, 2 * config.hidden]),
            head_b: Tensor::zeros(&[1]),
            config,
        })
    }

    /// Weights uniform in `[-1/√hidden, 1/√hidden]`, biases zero, pad embedding row zero.
    pub fn init(config: BiLstmConfig, seed: u64) -> Result<Self, BiLstmError> {
        use rand::Rng;
        let mut model = Self::zeros(config)?;
        let mut rng = seeded_rng(seed);
        let k = 1.0 / (config.hidden as f64).sqrt();
        let mut fill = |t: &mut Tensor| {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-k..=k));
        };
        fill(&mut model.embedding);
        for layer in &mut model.layers {
            for cell in [&mut layer.forward, &mut layer.backward] {
                for w in [&mut cell.w_f, &mut cell.w_i, &mut cell.w_c, &mut cell.w_o] {
                    fill(w);
                }
            }
        }
        fill(&mut model.head_w);
        model
            .embedding
            .row_mut(crate::textprep::PAD_INDEX as usize)
            .fill(0.0);
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every parameter tensor in the fixed persistence order: embedding; per layer,
    /// per direction (forward, backward) W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o;
    /// head_w; head_b.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for layer in &self.layers {
            out.extend(layer.forward.tensors());
            out.extend(layer.backward.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embedding".to_string()];
        for l in 0..self.layers.len() {
            for dir in ["forward", "backward"] {
                for g in crate::ndnum::lstm::GATE_TENSOR_NAMES {
                    out.push(format!("layer{}.{dir}.{g}", l + 1));
                }
            }
        }
        out.push("head_w".into());
        out.push("head_b".into());
        out
    }

    /// Rebuilds a model from tensors in [`tensors`](Self::tensors) order.
    pub fn from_tensors(config: BiLstmConfig, tensors: Vec<Tensor>) -> Result<Self, BiLstmError> {
        let mut model = Self::zeros(config)?;
        let expected = model.tensors().len();
        if tensors.len() != expected {
            return Err(BiLstmError::Config(format!("expected {expected} tensors, got {}", tensors.len())));
        }
        for (k, (slot, t)) in model.tensors_mut().into_iter().zip(tensors).enumerate() {
            if slot.shape() != t.shape() {
                return Err(BiLstmError::Nd(NdError::Shape(format!(
                    "tensor {k}: expected {:?}, got {:?}",
                    slot.shape(),
                    t.shape()
                ))));
            }
            *slot = t;
        }
        Ok(model)
    }

    /// Inference-mode logits.
    pub fn predict_logits(&self, batch: &[EncodedSeq]) -> Result<Vec<f64>, BiLstmError> {
        let mut unused = seeded_rng(0);
        self.forward(batch, false, &mut unused)
    }

    pub fn predict_proba(&self, batch: &[EncodedSeq]) -> Result<Vec<f64>, BiLstmError> {
        Ok(self.predict_logits(batch)?.into_iter().map(sigmoid).collect())
    }

    /// One logit per sequence. In training mode, empty sequences are rejected and
    /// dropout masks are drawn from `rng`.
    pub fn forward(&self, batch: &[EncodedSeq], training: bool, rng: &mut NetRng) -> Result<Vec<f64>, BiLstmError> {
        Ok(self.run_forward(batch, training, rng)?.logits)
    }

    /// Mean BCE-with-logits over the batch and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &[EncodedSeq],
        labels: &[u8],
        training: bool,
        rng: &mut NetRng,
    ) -> Result<(f64, Vec<f64>, BiLstmModel), BiLstmError> {
        if labels.len() != batch.len() {
            return Err(NdError::Shape(format!("{} sequences but {} labels", batch.len(), labels.len())).into());
        }
        let pass = self.run_forward(batch, training, rng)?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; batch.len()];
        for (b, (&z, &y)) in pass.logits.iter().zip(labels).enumerate() {
            let (l, g) = bce_with_logits(z, y)?;
            loss += l * scale;
            dlogits[b] = g * scale;
        }
        let grads = self.run_backward(&pass, &dlogits)?;
        Ok((loss, pass.logits, grads))
    }

    fn check_batch(&self, batch: &[EncodedSeq], training: bool) -> Result<(), BiLstmError> {
        if batch.is_empty() {
            return Err(BiLstmError::EmptyBatch);
        }
        for (b, seq) in batch.iter().enumerate() {
            if seq.true_len > seq.indices.len() {
                return Err(NdError::Shape(format!("sequence {b}: true_len beyond its indices")).into());
            }
            if let Some(&bad) = seq.tokens().iter().find(|&&i| i as usize >= self.config.vocab) {
                return Err(NdError::Shape(format!(
                    "sequence {b}: index {bad} outside a vocabulary of {}",
                    self.config.vocab
                ))
                .into());
            }
            if training && seq.true_len == 0 {
                return Err(BiLstmError::DegenerateInput(b));
            }
        }
        Ok(())
    }

    fn run_forward(&self, batch: &[EncodedSeq], training: bool, rng: &mut NetRng) -> Result<ForwardPass, BiLstmError> {
        self.check_batch(batch, training)?;
        let h = self.config.hidden;
        let p = self.config.dropout;
        let layout = Layout::new(batch);

        // Layer-0 input: embedding rows for every real position, packed in sorted order.
        let emb = self.config.emb_dim;
        let mut input = vec![0.0; layout.total_rows * emb];
        for (slot, &orig) in layout.order.iter().enumerate() {
            for (t, &tok) in batch[orig].tokens().iter().enumerate() {
                let r = layout.row(slot, t);
                input[r * emb..(r + 1) * emb].copy_from_slice(self.embedding.row(tok as usize));
            }
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        let mut width = emb;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut output = vec![0.0; layout.total_rows * 2 * h];
            let fwd = run_direction(&layer.forward, &layout, &input, width, &mut output, Direction::Forward);
            let bwd = run_direction(&layer.backward, &layout, &input, width, &mut output, Direction::Backward);
            let out_mask = if l + 1 < self.layers.len() {
                let mask = DropoutMask::sample(output.len(), p, training, rng)?;
                mask.apply(&mut output);
                mask
            } else {
                DropoutMask::identity()
            };
            input = output;
            layers.push(LayerPass {
                input_width: width,
                fwd,
                bwd,
                out_mask,
            });
            width = 2 * h;
        }
        let last_output = input;

        // Final representation per sorted slot: [h_fwd at len-1 ⊕ h_bwd at 0].
        let n = batch.len();
        let mut rep = vec![0.0; n * 2 * h];
        for slot in 0..n {
            let len = layout.lens[slot];
            if len == 0 {
                continue;
            }
            let last = layout.row(slot, len - 1);
            let first = layout.row(slot, 0);
            rep[slot * 2 * h..slot * 2 * h + h].copy_from_slice(&last_output[last * 2 * h..last * 2 * h + h]);
            rep[slot * 2 * h + h..(slot + 1) * 2 * h].copy_from_slice(&last_output[first * 2 * h + h..(first + 1) * 2 * h]);
        }
        let rep_mask = DropoutMask::sample(rep.len(), p, training, rng)?;
        rep_mask.apply(&mut rep);

        let mut logits = vec![0.0; n];
        let w = self.head_w.data();
        for slot in 0..n {
            let z: f64 = rep[slot * 2 * h..(slot + 1) * 2 * h].iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                + self.head_b.data()[0];
            logits[layout.order[slot]] = z;
        }
        Ok(ForwardPass {
            layout,
            indices: batch.iter().map(|s| s.tokens().to_vec()).collect(),
            layers,
            rep,
            rep_mask,
            logits,
        })
    }

    fn run_backward(&self, pass: &ForwardPass, dlogits: &[f64]) -> Result<BiLstmModel, BiLstmError> {
        let h = self.config.hidden;
        let layout = &pass.layout;
        let n = dlogits.len();
        let mut grads = BiLstmModel::zeros(self.config)?;

        // Head.
        let mut drep = vec![0.0; n * 2 * h];
        for slot in 0..n {
            let dz = dlogits[layout.order[slot]];
            grads.head_b.data_mut()[0] += dz;
            let gw = grads.head_w.data_mut();
            for j in 0..2 * h {
                gw[j] += dz * pass.rep[slot * 2 * h + j];
                drep[slot * 2 * h + j] = dz * self.head_w.data()[j];
            }
        }
        pass.rep_mask.apply(&mut drep);

        // Gradient of the last layer's output: only the two final states are read.
        let mut dout = vec![0.0; layout.total_rows * 2 * h];
        for slot in 0..n {
            let len = layout.lens[slot];
            if len == 0 {
                continue;
            }
            let last = layout.row(slot, len - 1);
            let first = layout.row(slot, 0);
            for j in 0..h {
                dout[last * 2 * h + j] += drep[slot * 2 * h + j];
                dout[first * 2 * h + h + j] += drep[slot * 2 * h + h + j];
            }
        }

        for (l, lp) in pass.layers.iter().enumerate().rev() {
            lp.out_mask.apply(&mut dout);
            let mut din = vec![0.0; layout.total_rows * lp.input_width];
            let gl = &mut grads.layers[l];
            backprop_direction(&self.layers[l].forward, &lp.fwd, layout, &dout, &mut din, lp.input_width, Direction::Forward, &mut gl.forward);
            backprop_direction(&self.layers[l].backward, &lp.bwd, layout, &dout, &mut din, lp.input_width, Direction::Backward, &mut gl.backward);
            dout = din;
        }

        // Embedding rows.
        let emb = self.config.emb_dim;
        for (slot, &orig) in layout.order.iter().enumerate() {
            for (t, &tok) in pass.indices[orig].iter().enumerate() {
                let r = layout.row(slot, t);
                for (g, d) in grads.embedding.row_mut(tok as usize).iter_mut().zip(&dout[r * emb..(r + 1) * emb]) {
                    *g += d;
                }
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Backward,
}

/// Packing of a batch: slots are sequences sorted by decreasing length; rows of a
/// packed matrix are (slot, position) pairs laid out slot by slot.
#[derive(Debug)]
struct Layout {
    order: Vec<usize>,
    lens: Vec<usize>,
    offsets: Vec<usize>,
    total_rows: usize,
    /// Number of sequences still active at each step.
    active: Vec<usize>,
}

impl Layout {
    fn new(batch: &[EncodedSeq]) -> Self {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| batch[b].true_len.cmp(&batch[a].true_len).then(a.cmp(&b)));
        let lens: Vec<usize> = order.iter().map(|&i| batch[i].true_len).collect();
        let mut offsets = Vec::with_capacity(lens.len());
        let mut total = 0;
        for &l in &lens {
            offsets.push(total);
            total += l;
        }
        let steps = lens.first().copied().unwrap_or(0);
        let active = (0..steps).map(|s| lens.iter().take_while(|&&l| l > s).count()).collect();
        Layout {
            order,
            lens,
            offsets,
            total_rows: total,
            active,
        }
    }

    fn row(&self, slot: usize, pos: usize) -> usize {
        self.offsets[slot] + pos
    }

    fn position(&self, slot: usize, step: usize, dir: Direction) -> usize {
        match dir {
            Direction::Forward => step,
            Direction::Backward => self.lens[slot] - 1 - step,
        }
    }
}

struct LayerPass {
    input_width: usize,
    fwd: Vec<LstmCache>,
    bwd: Vec<LstmCache>,
    out_mask: DropoutMask,
}

struct ForwardPass {
    layout: Layout,
    indices: Vec<Vec<u32>>,
    layers: Vec<LayerPass>,
    rep: Vec<f64>,
    rep_mask: DropoutMask,
    logits: Vec<f64>,
}

fn run_direction(
    params: &LstmCellParams,
    layout: &Layout,
    input: &[f64],
    width: usize,
    output: &mut [f64],
    dir: Direction,
) -> Vec<LstmCache> {
    let h = params.hidden();
    let col = if dir == Direction::Forward { 0 } else { h };
    let first = layout.active.first().copied().unwrap_or(0);
    let mut h_state = vec![0.0; first * h];
    let mut c_state = vec![0.0; first * h];
    let mut caches = Vec::with_capacity(layout.active.len());
    let mut x = Vec::new();
    for (step, &n) in layout.active.iter().enumerate() {
        x.clear();
        for slot in 0..n {
            let r = layout.row(slot, layout.position(slot, step, dir));
            x.extend_from_slice(&input[r * width..(r + 1) * width]);
        }
        let mut h_new = vec![0.0; n * h];
        let mut c_new = vec![0.0; n * h];
        caches.push(forward_rows(params, n, &x, &h_state, &c_state, &mut h_new, &mut c_new));
        for slot in 0..n {
            let r = layout.row(slot, layout.position(slot, step, dir));
            output[r * 2 * h + col..r * 2 * h + col + h].copy_from_slice(&h_new[slot * h..(slot + 1) * h]);
        }
        h_state = h_new;
        c_state = c_new;
    }
    caches
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &LstmCellParams,
    caches: &[LstmCache],
    layout: &Layout,
    dout: &[f64],
    din: &mut [f64],
    width: usize,
    dir: Direction,
    grads: &mut LstmCellParams,
) {
    let h = params.hidden();
    let col = if dir == Direction::Forward { 0 } else { h };
    let mut dh_carry: Vec<f64> = Vec::new();
    let mut dc_carry: Vec<f64> = Vec::new();
    for (step, cache) in caches.iter().enumerate().rev() {
        let n = layout.active[step];
        let mut dh = vec![0.0; n * h];
        let mut dc = vec![0.0; n * h];
        dh[..dh_carry.len()].copy_from_slice(&dh_carry);
        dc[..dc_carry.len()].copy_from_slice(&dc_carry);
        for slot in 0..n {
            let r = layout.row(slot, layout.position(slot, step, dir));
            for (acc, v) in dh[slot * h..(slot + 1) * h].iter_mut().zip(&dout[r * 2 * h + col..r * 2 * h + col + h]) {
                *acc += v;
            }
        }
        let mut gx = vec![0.0; n * width];
        let mut gh = vec![0.0; n * h];
        let mut gc = vec![0.0; n * h];
        backward_rows(params, cache, &dh, &dc, grads, &mut gx, &mut gh, &mut gc);
        for slot in 0..n {
            let r = layout.row(slot, layout.position(slot, step, dir));
            for (acc, v) in din[r * width..(r + 1) * width].iter_mut().zip(&gx[slot * width..(slot + 1) * width]) {
                *acc += v;
            }
        }
        dh_carry = gh;
        dc_carry = gc;
    }
}

/// Training schedule and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 6,
            batch_size: 64,
            seed: 42,
            adam: AdamHyper::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made while the epoch ran.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

/// Inference-mode accuracy over labeled sequences, evaluated in chunks.
pub fn accuracy(model: &BiLstmModel, data: &[(EncodedSeq, u8)]) -> Result<f64, BiLstmError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_labels(model, data.iter().map(|(s, _)| s))?;
    let correct = preds.iter().zip(data).filter(|(p, (_, y))| *p == y).count();
    Ok(correct as f64 / data.len() as f64)
}

pub fn predict_labels<'a>(model: &BiLstmModel, seqs: impl IntoIterator<Item = &'a EncodedSeq>) -> Result<Vec<u8>, BiLstmError> {
    let seqs: Vec<EncodedSeq> = seqs.into_iter().cloned().collect();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(256) {
        out.extend(model.predict_logits(chunk)?.into_iter().map(|z| u8::from(z >= 0.0)));
    }
    Ok(out)
}

/// Mini-batch Adam training with a seeded shuffle per epoch. The same seed drives the
/// shuffles and dropout masks (ChaCha stream 1, leaving stream 0 to initialization).
pub fn train(
    mut model: BiLstmModel,
    train_data: &[(EncodedSeq, u8)],
    validation: &[(EncodedSeq, u8)],
    cfg: &TrainRunConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(BiLstmModel, Vec<EpochStats>), BiLstmError> {
    use rand::seq::SliceRandom;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(BiLstmError::Config("epochs and batch_size must be at least 1".into()));
    }
    if train_data.is_empty() {
        return Err(BiLstmError::EmptyBatch);
    }
    let mut rng = seeded_rng(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.tensors(), cfg.adam);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seqs: Vec<EncodedSeq> = chunk.iter().map(|&i| train_data[i].0.clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_data[i].1).collect();
            let (loss, logits, grads) = model.loss_and_gradients(&seqs, &labels, true, &mut rng)?;
            if !loss.is_finite() {
                return Err(BiLstmError::Divergence { epoch, batch: bi + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += logits.iter().zip(&labels).filter(|(z, y)| u8::from(**z >= 0.0) == **y).count();
            let grad_refs = grads.tensors();
            adam_step(&mut model.tensors_mut(), &grad_refs, &mut adam)?;
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy: correct as f64 / train_data.len() as f64,
            validation_accuracy: accuracy(&model, validation)?,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((model, history))
}
