//! The trainable scorer: a small pluggable feed-forward encoder plus a
//! context-k FFNN decoder.
//!
//! Architecture: per frame, the encoder projects the input feature vector to
//! a `hidden_dim`-wide representation `h_t` (optionally through one tanh
//! layer). The decoder embeds the last `k` emitted labels (sentinel slots use
//! a frozen all-zero embedding row), passes them through two tanh layers, sums
//! the result with `h_t` and feeds a softmax output layer over the label
//! vocabulary. A separate softmax head on `h_t` serves the auxiliary
//! frame-classification loss used for encoder pretraining.
//!
//! All arithmetic is in double precision; gradients are exact, verified
//! against central finite differences.

use thiserror::Error;

use crate::lexicon::LabelId;
use crate::math::{log1mexp, log_softmax_in_place, Mat};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context size must be 1 or 2, got {0}")]
    InvalidContextSize(usize),
    #[error("invalid dimensions: {0}")]
    BadDims(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("label id {0} out of range")]
    InvalidLabel(LabelId),
    #[error("context of length {got} exceeds context size {k}")]
    ContextTooLong { got: usize, k: usize },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("checkpoint line {line}: {reason}")]
    BadCheckpoint { line: usize, reason: String },
}

/// Shape of the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub ffnn_dim: usize,
    pub vocab_size: usize,
    pub context_size: usize,
    pub encoder_hidden: bool,
}

impl ModelDims {
    /// Desk-scale reference dimensions.
    pub fn reference(input_dim: usize, vocab_size: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden_dim: 64,
            embed_dim: 16,
            ffnn_dim: 64,
            vocab_size,
            context_size: 1,
            encoder_hidden: false,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(1..=2).contains(&self.context_size) {
            return Err(ModelError::InvalidContextSize(self.context_size));
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("ffnn_dim", self.ffnn_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(ModelError::BadDims(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// All trainable tensors; also the shape of gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensors {
    pub enc_w: Mat,
    pub enc_b: Mat,
    pub enc2_w: Option<Mat>,
    pub enc2_b: Option<Mat>,
    pub embed: Mat,
    pub ff1_w: Mat,
    pub ff1_b: Mat,
    pub ff2_w: Mat,
    pub ff2_b: Mat,
    pub out_w: Mat,
    pub out_b: Mat,
    pub aux_w: Mat,
    pub aux_b: Mat,
}

impl Tensors {
    pub(crate) fn zeros(d: &ModelDims) -> Tensors {
        Tensors {
            enc_w: Mat::zeros(d.hidden_dim, d.input_dim),
            enc_b: Mat::zeros(1, d.hidden_dim),
            enc2_w: d.encoder_hidden.then(|| Mat::zeros(d.hidden_dim, d.hidden_dim)),
            enc2_b: d.encoder_hidden.then(|| Mat::zeros(1, d.hidden_dim)),
            embed: Mat::zeros(d.vocab_size + 1, d.embed_dim),
            ff1_w: Mat::zeros(d.ffnn_dim, d.context_size * d.embed_dim),
            ff1_b: Mat::zeros(1, d.ffnn_dim),
            ff2_w: Mat::zeros(d.hidden_dim, d.ffnn_dim),
            ff2_b: Mat::zeros(1, d.hidden_dim),
            out_w: Mat::zeros(d.vocab_size, d.hidden_dim),
            out_b: Mat::zeros(1, d.vocab_size),
            aux_w: Mat::zeros(d.vocab_size, d.hidden_dim),
            aux_b: Mat::zeros(1, d.vocab_size),
        }
    }

    pub(crate) fn named(&self) -> Vec<(&'static str, &Mat)> {
        let mut v = vec![("enc_w", &self.enc_w), ("enc_b", &self.enc_b)];
        if let (Some(w), Some(b)) = (&self.enc2_w, &self.enc2_b) {
            v.push(("enc2_w", w));
            v.push(("enc2_b", b));
        }
        v.extend([
            ("embed", &self.embed),
            ("ff1_w", &self.ff1_w),
            ("ff1_b", &self.ff1_b),
            ("ff2_w", &self.ff2_w),
            ("ff2_b", &self.ff2_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("aux_w", &self.aux_w),
            ("aux_b", &self.aux_b),
        ]);
        v
    }

    pub(crate) fn named_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        let mut v: Vec<(&'static str, &mut Mat)> =
            vec![("enc_w", &mut self.enc_w), ("enc_b", &mut self.enc_b)];
        if let (Some(w), Some(b)) = (self.enc2_w.as_mut(), self.enc2_b.as_mut()) {
            v.push(("enc2_w", w));
            v.push(("enc2_b", b));
        }
        v.extend([
            ("embed", &mut self.embed),
            ("ff1_w", &mut self.ff1_w),
            ("ff1_b", &mut self.ff1_b),
            ("ff2_w", &mut self.ff2_w),
            ("ff2_b", &mut self.ff2_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
            ("aux_w", &mut self.aux_w),
            ("aux_b", &mut self.aux_b),
        ]);
        v
    }
}

/// All parameters of the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    dims: ModelDims,
    pub(crate) t: Tensors,
}

impl ScorerParams {
    pub(crate) fn from_parts(dims: ModelDims, t: Tensors) -> ScorerParams {
        ScorerParams { dims, t }
    }

    pub(crate) fn into_parts(self) -> (ModelDims, Tensors) {
        (self.dims, self.t)
    }
}

/// Gradients shaped like [`ScorerParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) t: Tensors,
}

impl Gradients {
    pub fn zeros_like(params: &ScorerParams) -> Gradients {
        Gradients {
            t: Tensors::zeros(&params.dims),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.t.named_mut() {
            m.scale(s);
        }
    }

    /// self += scale * other
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for ((_, a), (_, b)) in self.t.named_mut().into_iter().zip(other.t.named()) {
            a.scaled_add(b, scale);
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.t.named().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    pub fn tensor_names(&self) -> Vec<&'static str> {
        self.t.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Largest absolute entry, for divergence diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.t
            .named()
            .iter()
            .flat_map(|(_, m)| m.data().iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

/// The loss attached to one frame sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameLoss {
    /// Cross entropy of `label` under the decoder distribution (smoothable).
    Target { label: LabelId },
    /// `-log(1 - p(prev))`: the cost of leaving a looping label.
    NonLoop { prev: LabelId },
    /// Focal cross entropy of `label` under the auxiliary encoder head.
    Aux { label: LabelId, gamma: f64 },
}

/// One training sample: a frame's feature vector, its label context and the
/// loss to apply.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub features: Vec<f64>,
    pub context: Vec<Option<LabelId>>,
    pub loss: FrameLoss,
    pub weight: f64,
}

/// Log distributions over the vocabulary for every context at one frame;
/// row `c` for context label `c`, last row for the sentinel.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    rows: Mat,
}

impl ScoreTable {
    pub fn contexts(&self) -> usize {
        self.rows.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, ctx: Option<LabelId>) -> &[f64] {
        match ctx {
            Some(l) => self.rows.row(l as usize),
            None => self.rows.row(self.rows.rows() - 1),
        }
    }
}

/// Split a context's distribution into HMM (loop, non-loop) log
/// probabilities for a label that is currently looping. When the loop
/// probability is exactly one, the non-loop part is log-zero.
pub fn hmm_transition_split(row: &[f64], prev_label: LabelId) -> (f64, f64) {
    let loop_lp = row[prev_label as usize].min(0.0);
    (loop_lp, log1mexp(loop_lp))
}

fn tanh_vec(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
    v
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, &y) in a.iter_mut().zip(b.iter()) {
        *x += y;
    }
}

struct DecoderTrace {
    embedded: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    rows: Vec<usize>,
}

struct EncoderTrace {
    hidden: Option<Vec<f64>>,
    h: Vec<f64>,
}

impl ScorerParams {
    /// Deterministic initialization: every tensor uniform in `[-r, r]` with
    /// `r = 1/sqrt(fan-in)`, then the sentinel embedding row zeroed.
    pub fn init(seed: u64, dims: ModelDims) -> Result<ScorerParams, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensors::zeros(&dims);
        let fan_in = |name: &str| -> usize {
            match name {
                "enc_w" | "enc_b" => dims.input_dim,
                "enc2_w" | "enc2_b" => dims.hidden_dim,
                "embed" => dims.embed_dim,
                "ff1_w" | "ff1_b" => dims.context_size * dims.embed_dim,
                "ff2_w" | "ff2_b" => dims.ffnn_dim,
                _ => dims.hidden_dim,
            }
        };
        for (name, m) in t.named_mut() {
            let r = 1.0 / (fan_in(name) as f64).sqrt();
            for v in m.data_mut().iter_mut() {
                *v = rng.gen_range(-r..r);
            }
        }
        let sentinel = dims.vocab_size;
        t.embed.row_mut(sentinel).fill(0.0);
        Ok(ScorerParams { dims, t })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn context_size(&self) -> usize {
        self.dims.context_size
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        self.t.named()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        self.t.named_mut()
    }

    fn encode_frame(&self, x: &[f64]) -> EncoderTrace {
        let mut pre = self.t.enc_w.matvec(x);
        add_assign(&mut pre, self.t.enc_b.row(0));
        match (&self.t.enc2_w, &self.t.enc2_b) {
            (Some(w2), Some(b2)) => {
                let u = tanh_vec(pre);
                let mut h = w2.matvec(&u);
                add_assign(&mut h, b2.row(0));
                EncoderTrace { hidden: Some(u), h }
            }
            _ => EncoderTrace { hidden: None, h: pre },
        }
    }

    /// Encode a `T x input_dim` feature matrix into `T x hidden_dim`.
    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        for row in features {
            if row.len() != self.dims.input_dim {
                return Err(ModelError::DimMismatch {
                    expected: self.dims.input_dim,
                    got: row.len(),
                });
            }
        }
        Ok(features.iter().map(|x| self.encode_frame(x).h).collect())
    }

    /// Embedding row index for one context slot.
    fn slot_row(&self, slot: Option<LabelId>) -> Result<usize, ModelError> {
        match slot {
            Some(l) => {
                if (l as usize) < self.dims.vocab_size {
                    Ok(l as usize)
                } else {
                    Err(ModelError::InvalidLabel(l))
                }
            }
            None => Ok(self.dims.vocab_size),
        }
    }

    /// Left-pad `ctx` with sentinels to `context_size` slots and run the
    /// decoder FFNN.
    fn decode_context(&self, ctx: &[Option<LabelId>]) -> Result<DecoderTrace, ModelError> {
        let k = self.dims.context_size;
        if ctx.len() > k {
            return Err(ModelError::ContextTooLong { got: ctx.len(), k });
        }
        let de = self.dims.embed_dim;
        let mut rows = vec![self.dims.vocab_size; k];
        let offset = k - ctx.len();
        for (i, &slot) in ctx.iter().enumerate() {
            rows[offset + i] = self.slot_row(slot)?;
        }
        let mut embedded = vec![0.0; k * de];
        for (i, &row) in rows.iter().enumerate() {
            embedded[i * de..(i + 1) * de].copy_from_slice(self.t.embed.row(row));
        }
        let mut pre1 = self.t.ff1_w.matvec(&embedded);
        add_assign(&mut pre1, self.t.ff1_b.row(0));
        let f1 = tanh_vec(pre1);
        let mut pre2 = self.t.ff2_w.matvec(&f1);
        add_assign(&mut pre2, self.t.ff2_b.row(0));
        let f2 = tanh_vec(pre2);
        Ok(DecoderTrace { embedded, f1, f2, rows })
    }

    fn output_logits(&self, h: &[f64], f2: &[f64]) -> Vec<f64> {
        let combined: Vec<f64> = h.iter().zip(f2.iter()).map(|(a, b)| a + b).collect();
        let mut z = self.t.out_w.matvec(&combined);
        add_assign(&mut z, self.t.out_b.row(0));
        z
    }

    /// Normalized log distribution over the vocabulary for one frame and one
    /// label context (at most `context_size` labels, oldest first; missing
    /// slots use the sentinel).
    pub fn score_step(
        &self,
        h_t: &[f64],
        ctx: &[Option<LabelId>],
    ) -> Result<Vec<f64>, ModelError> {
        let trace = self.decode_context(ctx)?;
        let mut z = self.output_logits(h_t, &trace.f2);
        log_softmax_in_place(&mut z);
        Ok(z)
    }

    /// Score every context of a k=1 model at one frame in a single batched
    /// pass: row `c` equals `score_step(h_t, [Some(c)])`, last row the
    /// sentinel.
    pub fn score_all_contexts(&self, h_t: &[f64]) -> Result<ScoreTable, ModelError> {
        ContextCache::new(self)?.frame_table(self, h_t)
    }

    /// Auxiliary head: log distribution over the vocabulary from `h_t` alone.
    pub fn aux_log_probs(&self, h_t: &[f64]) -> Vec<f64> {
        let mut z = self.t.aux_w.matvec(h_t);
        add_assign(&mut z, self.t.aux_b.row(0));
        log_softmax_in_place(&mut z);
        z
    }
}

/// Cached decoder FFNN outputs for all k=1 contexts; reused across frames of
/// an utterance so each frame costs one batched table build.
pub struct ContextCache {
    f2: Vec<Vec<f64>>,
}

impl ContextCache {
    pub fn new(params: &ScorerParams) -> Result<ContextCache, ModelError> {
        if params.dims.context_size != 1 {
            return Err(ModelError::Unsupported(
                "batched context scoring requires context size 1".into(),
            ));
        }
        let v = params.dims.vocab_size;
        let mut f2 = Vec::with_capacity(v + 1);
        for c in 0..=v {
            let ctx = if c < v { vec![Some(c as LabelId)] } else { vec![None] };
            f2.push(params.decode_context(&ctx)?.f2);
        }
        Ok(ContextCache { f2 })
    }

    pub fn frame_table(&self, params: &ScorerParams, h_t: &[f64]) -> Result<ScoreTable, ModelError> {
        let v = params.dims.vocab_size;
        let mut rows = Mat::zeros(v + 1, v);
        for (c, f2) in self.f2.iter().enumerate() {
            let mut z = params.output_logits(h_t, f2);
            log_softmax_in_place(&mut z);
            rows.row_mut(c).copy_from_slice(&z);
        }
        Ok(ScoreTable { rows })
    }
}

/// Exact gradient of the summed weighted loss over `samples`, with label
/// smoothing `smoothing` applied to `Target` losses. Returns the loss value
/// and gradients for every parameter; the sentinel embedding row's gradient
/// is identically zero.
pub fn backward(
    params: &ScorerParams,
    samples: &[FrameSample],
    smoothing: f64,
) -> Result<(f64, Gradients), ModelError> {
    let dims = params.dims;
    let v = dims.vocab_size;
    let de = dims.embed_dim;
    let mut grads = Gradients::zeros_like(params);
    let mut total_loss = 0.0;

    for sample in samples {
        if sample.features.len() != dims.input_dim {
            return Err(ModelError::DimMismatch {
                expected: dims.input_dim,
                got: sample.features.len(),
            });
        }
        let enc = params.encode_frame(&sample.features);
        let w = sample.weight;
        // dL/dh accumulated from whichever head the sample drives
        let mut dh = vec![0.0; dims.hidden_dim];

        match sample.loss {
            FrameLoss::Target { label } | FrameLoss::NonLoop { prev: label } => {
                if label as usize >= v {
                    return Err(ModelError::InvalidLabel(label));
                }
                let trace = params.decode_context(&sample.context)?;
                let mut lp = params.output_logits(&enc.h, &trace.f2);
                log_softmax_in_place(&mut lp);
                let y = label as usize;

                // dL/dz and the loss value
                let mut dz = vec![0.0; v];
                match sample.loss {
                    FrameLoss::Target { .. } => {
                        let eps = smoothing;
                        let mut loss = -(1.0 - eps) * lp[y];
                        if eps > 0.0 {
                            let mean: f64 = lp.iter().sum::<f64>() / v as f64;
                            loss -= eps * mean;
                        }
                        total_loss += w * loss;
                        for j in 0..v {
                            let q = if j == y { 1.0 - eps + eps / v as f64 } else { eps / v as f64 };
                            dz[j] = w * (lp[j].exp() - q);
                        }
                    }
                    FrameLoss::NonLoop { .. } => {
                        let lp_y = lp[y].min(0.0);
                        total_loss += -w * log1mexp(lp_y);
                        let p_y = lp_y.exp();
                        let scale = w * p_y / (1.0 - p_y);
                        for j in 0..v {
                            let delta = if j == y { 1.0 } else { 0.0 };
                            dz[j] = scale * (delta - lp[j].exp());
                        }
                    }
                    FrameLoss::Aux { .. } => unreachable!(),
                }

                // output layer
                let combined: Vec<f64> =
                    enc.h.iter().zip(trace.f2.iter()).map(|(a, b)| a + b).collect();
                grads.t.out_w.add_outer(&dz, &combined, 1.0);
                add_assign(grads.t.out_b.row_mut(0), &dz);
                let dcomb = params.t.out_w.matvec_t(&dz);
                add_assign(&mut dh, &dcomb);

                // decoder FFNN
                let du2: Vec<f64> = dcomb
                    .iter()
                    .zip(trace.f2.iter())
                    .map(|(&d, &f)| d * (1.0 - f * f))
                    .collect();
                grads.t.ff2_w.add_outer(&du2, &trace.f1, 1.0);
                add_assign(grads.t.ff2_b.row_mut(0), &du2);
                let df1 = params.t.ff2_w.matvec_t(&du2);
                let du1: Vec<f64> = df1
                    .iter()
                    .zip(trace.f1.iter())
                    .map(|(&d, &f)| d * (1.0 - f * f))
                    .collect();
                grads.t.ff1_w.add_outer(&du1, &trace.embedded, 1.0);
                add_assign(grads.t.ff1_b.row_mut(0), &du1);
                let dembed = params.t.ff1_w.matvec_t(&du1);
                for (slot, &row) in trace.rows.iter().enumerate() {
                    if row == v {
                        continue; // sentinel row stays frozen
                    }
                    add_assign(
                        grads.t.embed.row_mut(row),
                        &dembed[slot * de..(slot + 1) * de],
                    );
                }
            }
            FrameLoss::Aux { label, gamma } => {
                if label as usize >= v {
                    return Err(ModelError::InvalidLabel(label));
                }
                let lp = params.aux_log_probs(&enc.h);
                let y = label as usize;
                let p_y = lp[y].exp();
                if p_y >= 1.0 {
                    continue; // focal loss and its gradient both vanish
                }
                let focal = (1.0 - p_y).powf(gamma);
                total_loss += w * focal * (-lp[y]);
                // d/dz_j of (1-p_y)^g * (-log p_y)
                let coeff = if gamma == 0.0 {
                    1.0
                } else {
                    gamma * (1.0 - p_y).powf(gamma - 1.0) * p_y * (-lp[y]) + focal
                };
                let mut dz = vec![0.0; v];
                for j in 0..v {
                    let delta = if j == y { 1.0 } else { 0.0 };
                    dz[j] = -w * coeff * (delta - lp[j].exp());
                }
                grads.t.aux_w.add_outer(&dz, &enc.h, 1.0);
                add_assign(grads.t.aux_b.row_mut(0), &dz);
                let dha = params.t.aux_w.matvec_t(&dz);
                add_assign(&mut dh, &dha);
            }
        }

        // encoder backprop
        match (&params.t.enc2_w, enc.hidden.as_ref()) {
            (Some(w2), Some(u)) => {
                grads.t.enc2_w.as_mut().unwrap().add_outer(&dh, u, 1.0);
                add_assign(grads.t.enc2_b.as_mut().unwrap().row_mut(0), &dh);
                let du: Vec<f64> = w2
                    .matvec_t(&dh)
                    .iter()
                    .zip(u.iter())
                    .map(|(&d, &uu)| d * (1.0 - uu * uu))
                    .collect();
                grads.t.enc_w.add_outer(&du, &sample.features, 1.0);
                add_assign(grads.t.enc_b.row_mut(0), &du);
            }
            _ => {
                grads.t.enc_w.add_outer(&dh, &sample.features, 1.0);
                add_assign(grads.t.enc_b.row_mut(0), &dh);
            }
        }
    }

    Ok((total_loss, grads))
}

/// Adapter exposing a model over pre-encoded frames as a
/// [`crate::topology::FrameScorer`]. Panics on out-of-range context labels,
/// which cannot come out of a well-formed alignment graph.
pub struct ModelScorer<'a> {
    params: &'a ScorerParams,
    h: &'a [Vec<f64>],
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ScorerParams, h: &'a [Vec<f64>]) -> ModelScorer<'a> {
        ModelScorer { params, h }
    }
}

impl crate::topology::FrameScorer for ModelScorer<'_> {
    fn context_size(&self) -> usize {
        self.params.context_size()
    }

    fn log_probs(&self, t: usize, ctx: &[Option<LabelId>]) -> Vec<f64> {
        self.params
            .score_step(&self.h[t], ctx)
            .expect("context from an alignment graph is valid")
    }
}

// ── Checkpoint serialization ─────────────────────────────────────────────

pub const CHECKPOINT_MAGIC: &str = "PTK1";

/// Render parameters in the text checkpoint format; round-trips bit-exactly
/// through [`parse_checkpoint`].
pub fn write_checkpoint(params: &ScorerParams) -> String {
    let d = params.dims;
    let mut out = format!(
        "{CHECKPOINT_MAGIC} k={} V={} De={} Dh={} Din={}\n",
        d.context_size, d.vocab_size, d.embed_dim, d.hidden_dim, d.input_dim
    );
    for (name, m) in params.t.named() {
        out.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
        for i in 0..m.rows() {
            let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<ScorerParams, ModelError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ModelError::BadCheckpoint {
        line: 1,
        reason: "empty checkpoint".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&CHECKPOINT_MAGIC) {
        return Err(ModelError::BadCheckpoint {
            line: 1,
            reason: format!("bad magic {:?}", fields.first()),
        });
    }
    let mut header_vals = std::collections::HashMap::new();
    for f in &fields[1..] {
        let (key, value) = f.split_once('=').ok_or(ModelError::BadCheckpoint {
            line: 1,
            reason: format!("bad header field {f:?}"),
        })?;
        let value: usize = value.parse().map_err(|_| ModelError::BadCheckpoint {
            line: 1,
            reason: format!("bad header value {f:?}"),
        })?;
        header_vals.insert(key.to_string(), value);
    }
    let get = |k: &str| {
        header_vals.get(k).copied().ok_or(ModelError::BadCheckpoint {
            line: 1,
            reason: format!("missing header field {k}"),
        })
    };
    let (k, v, de, dh, din) = (get("k")?, get("V")?, get("De")?, get("Dh")?, get("Din")?);

    let mut tensors: Vec<(String, Mat)> = Vec::new();
    while let Some((idx, raw)) = lines.next() {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(ModelError::BadCheckpoint {
                line: idx + 1,
                reason: format!("expected tensor header, got {raw:?}"),
            });
        }
        let rows: usize = fields[1].parse().map_err(|_| ModelError::BadCheckpoint {
            line: idx + 1,
            reason: "bad row count".into(),
        })?;
        let cols: usize = fields[2].parse().map_err(|_| ModelError::BadCheckpoint {
            line: idx + 1,
            reason: "bad column count".into(),
        })?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ridx, row) = lines.next().ok_or(ModelError::BadCheckpoint {
                line: idx + 1,
                reason: "truncated tensor block".into(),
            })?;
            for cell in row.split_whitespace() {
                let value: f64 = cell.parse().map_err(|_| ModelError::BadCheckpoint {
                    line: ridx + 1,
                    reason: format!("bad value {cell:?}"),
                })?;
                data.push(value);
            }
        }
        if data.len() != rows * cols {
            return Err(ModelError::BadCheckpoint {
                line: idx + 1,
                reason: format!(
                    "tensor {} has {} values, expected {}",
                    fields[0],
                    data.len(),
                    rows * cols
                ),
            });
        }
        tensors.push((fields[0].to_string(), Mat::from_vec(rows, cols, data)));
    }

    let mut take = |name: &str| -> Option<Mat> {
        tensors
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| tensors.remove(i).1)
    };
    let require = |m: Option<Mat>, name: &str| {
        m.ok_or_else(|| ModelError::BadCheckpoint {
            line: 0,
            reason: format!("missing tensor {name}"),
        })
    };
    let enc_w = require(take("enc_w"), "enc_w")?;
    let enc_b = require(take("enc_b"), "enc_b")?;
    let enc2_w = take("enc2_w");
    let enc2_b = take("enc2_b");
    let embed = require(take("embed"), "embed")?;
    let ff1_w = require(take("ff1_w"), "ff1_w")?;
    let ff1_b = require(take("ff1_b"), "ff1_b")?;
    let ff2_w = require(take("ff2_w"), "ff2_w")?;
    let ff2_b = require(take("ff2_b"), "ff2_b")?;
    let out_w = require(take("out_w"), "out_w")?;
    let out_b = require(take("out_b"), "out_b")?;
    let aux_w = require(take("aux_w"), "aux_w")?;
    let aux_b = require(take("aux_b"), "aux_b")?;
    if !tensors.is_empty() {
        return Err(ModelError::BadCheckpoint {
            line: 0,
            reason: format!("unknown tensor {:?}", tensors[0].0),
        });
    }

    let dims = ModelDims {
        input_dim: din,
        hidden_dim: dh,
        embed_dim: de,
        ffnn_dim: ff1_w.rows(),
        vocab_size: v,
        context_size: k,
        encoder_hidden: enc2_w.is_some(),
    };
    dims.validate()?;
    let t = Tensors {
        enc_w,
        enc_b,
        enc2_w,
        enc2_b,
        embed,
        ff1_w,
        ff1_b,
        ff2_w,
        ff2_b,
        out_w,
        out_b,
        aux_w,
        aux_b,
    };
    // shape checks against the header
    let expected = Tensors::zeros(&dims);
    for ((name, got), (_, want)) in t.named().into_iter().zip(expected.named()) {
        if got.rows() != want.rows() || got.cols() != want.cols() {
            return Err(ModelError::BadCheckpoint {
                line: 0,
                reason: format!(
                    "tensor {name} has shape {}x{}, expected {}x{}",
                    got.rows(),
                    got.cols(),
                    want.rows(),
                    want.cols()
                ),
            });
        }
    }
    if t.embed.row(v).iter().any(|&x| x != 0.0) {
        return Err(ModelError::BadCheckpoint {
            line: 0,
            reason: "sentinel embedding row is not zero".into(),
        });
    }
    Ok(ScorerParams { dims, t })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden_dim: 5,
            embed_dim: 4,
            ffnn_dim: 6,
            vocab_size: 4,
            context_size: 1,
            encoder_hidden: false,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ScorerParams::init(1, tiny_dims()).unwrap();
        let b = ScorerParams::init(1, tiny_dims()).unwrap();
        assert_eq!(a, b);
        let c = ScorerParams::init(2, tiny_dims()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sentinel_row_is_zero() {
        let p = ScorerParams::init(7, tiny_dims()).unwrap();
        assert!(p.t.embed.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_rejects_bad_context_size() {
        let mut d = tiny_dims();
        d.context_size = 3;
        assert!(matches!(
            ScorerParams::init(0, d),
            Err(ModelError::InvalidContextSize(3))
        ));
    }

    #[test]
    fn distributions_normalize() {
        let p = ScorerParams::init(3, tiny_dims()).unwrap();
        let h = p.encode(&[vec![0.3, -1.0, 2.0]]).unwrap();
        for ctx in [vec![], vec![Some(2)], vec![None]] {
            let lp = p.score_step(&h[0], &ctx).unwrap();
            let total: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let aux = p.aux_log_probs(&h[0]);
        let total: f64 = aux.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_zero_weights_gives_bias() {
        let mut p = ScorerParams::init(3, tiny_dims()).unwrap();
        p.t.enc_w.fill(0.0);
        let h = p.encode(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]).unwrap();
        assert_eq!(h[0], p.t.enc_b.row(0).to_vec());
        assert_eq!(h[1], p.t.enc_b.row(0).to_vec());
        let empty: Vec<Vec<f64>> = vec![];
        assert!(p.encode(&empty).unwrap().is_empty());
    }

    #[test]
    fn encode_matches_manual_product() {
        let p = ScorerParams::init(9, tiny_dims()).unwrap();
        let x = vec![0.1, -0.7, 1.3];
        let h = p.encode(&[x.clone()]).unwrap();
        for i in 0..5 {
            let mut manual = p.t.enc_b.at(0, i);
            for j in 0..3 {
                manual += p.t.enc_w.at(i, j) * x[j];
            }
            assert!((h[0][i] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_dim_mismatch() {
        let p = ScorerParams::init(0, tiny_dims()).unwrap();
        assert!(matches!(
            p.encode(&[vec![1.0, 2.0]]),
            Err(ModelError::DimMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn zero_params_ignore_context() {
        let mut p = ScorerParams::init(5, tiny_dims()).unwrap();
        for (name, m) in p.tensors_mut() {
            if name != "out_b" {
                m.fill(0.0);
            }
        }
        let h = p.encode(&[vec![0.5, 0.5, 0.5]]).unwrap();
        let a = p.score_step(&h[0], &[Some(0)]).unwrap();
        let b = p.score_step(&h[0], &[Some(3)]).unwrap();
        assert_eq!(a, b);
        let mut want = p.t.out_b.row(0).to_vec();
        log_softmax_in_place(&mut want);
        assert_eq!(a, want);
    }

    #[test]
    fn score_all_contexts_matches_score_step() {
        let p = ScorerParams::init(11, tiny_dims()).unwrap();
        let h = p.encode(&[vec![1.0, 0.0, -1.0]]).unwrap();
        let table = p.score_all_contexts(&h[0]).unwrap();
        assert_eq!(table.contexts(), 5);
        assert_eq!(table.vocab_size(), 4);
        for c in 0..4u32 {
            let direct = p.score_step(&h[0], &[Some(c)]).unwrap();
            assert_eq!(table.row(Some(c)), direct.as_slice());
        }
        let direct = p.score_step(&h[0], &[None]).unwrap();
        assert_eq!(table.row(None), direct.as_slice());
        // purity
        let again = p.score_all_contexts(&h[0]).unwrap();
        assert_eq!(again.row(Some(1)), table.row(Some(1)));
    }

    #[test]
    fn score_all_contexts_requires_k1() {
        let mut d = tiny_dims();
        d.context_size = 2;
        let p = ScorerParams::init(0, d).unwrap();
        let h = p.encode(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            p.score_all_contexts(&h[0]),
            Err(ModelError::Unsupported(_))
        ));
    }

    #[test]
    fn k2_context_padding() {
        let mut d = tiny_dims();
        d.context_size = 2;
        let p = ScorerParams::init(4, d).unwrap();
        let h = p.encode(&[vec![0.2, 0.4, 0.6]]).unwrap();
        // a single-label context left-pads with the sentinel
        let short = p.score_step(&h[0], &[Some(1)]).unwrap();
        let padded = p.score_step(&h[0], &[None, Some(1)]).unwrap();
        assert_eq!(short, padded);
        assert!(p.score_step(&h[0], &[Some(0), Some(1), Some(2)]).is_err());
    }

    #[test]
    fn transition_split_examples() {
        let uniform = vec![0.5f64.ln(), 0.5f64.ln()];
        let (lp, nl) = hmm_transition_split(&uniform, 0);
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
        assert!((nl - 0.5f64.ln()).abs() < 1e-15);

        let sure = vec![0.0, f64::NEG_INFINITY];
        let (lp, nl) = hmm_transition_split(&sure, 0);
        assert_eq!(lp, 0.0);
        assert_eq!(nl, f64::NEG_INFINITY);

        let p = ScorerParams::init(13, tiny_dims()).unwrap();
        let h = p.encode(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let row = p.score_step(&h[0], &[Some(2)]).unwrap();
        let (lp, nl) = hmm_transition_split(&row, 1);
        assert!((lp.exp() + nl.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_weight_zero_gradient() {
        let p = ScorerParams::init(17, tiny_dims()).unwrap();
        let samples = vec![FrameSample {
            features: vec![0.5, -0.5, 1.0],
            context: vec![Some(1)],
            loss: FrameLoss::Target { label: 2 },
            weight: 0.0,
        }];
        let (loss, grads) = backward(&p, &samples, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn backward_weight_is_linear() {
        let p = ScorerParams::init(19, tiny_dims()).unwrap();
        let mk = |w: f64| FrameSample {
            features: vec![0.5, -0.5, 1.0],
            context: vec![Some(1)],
            loss: FrameLoss::Target { label: 2 },
            weight: w,
        };
        let (l1, g1) = backward(&p, &[mk(1.0), mk(1.0)], 0.2).unwrap();
        let (l2, g2) = backward(&p, &[mk(2.0)], 0.2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.t.named().into_iter().zip(g2.t.named()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for hidden in [false, true] {
            let mut d = tiny_dims();
            d.encoder_hidden = hidden;
            d.context_size = if hidden { 2 } else { 1 };
            let p = ScorerParams::init(23, d).unwrap();
            let text = write_checkpoint(&p);
            let q = parse_checkpoint(&text).unwrap();
            assert_eq!(p, q);
            assert_eq!(write_checkpoint(&q), text);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let p = ScorerParams::init(29, tiny_dims()).unwrap();
        let text = write_checkpoint(&p);
        assert!(parse_checkpoint(&text.replace("PTK1", "PTK9")).is_err());
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(&truncated).is_err());
    }
}
