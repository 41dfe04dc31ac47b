//! Frame-wise cross-entropy training: chunk batches, label smoothing,
//! emission-position loss boosting, an auxiliary focal encoder loss, an
//! Adam-style optimizer with Newbob learning-rate scheduling, and a
//! simplified scheduled-sampling refeed pass.
//!
//! Training runs in phases over a fixed epoch budget: encoder pretraining on
//! the auxiliary loss alone, joint training at constant LR, joint training
//! under Newbob decay, and an optional scheduled-sampling phase with the LR
//! reset. Everything is deterministic given the seed: shuffles, batch order
//! and gradient reduction order are all fixed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::alignment_io::{
    frame_targets, make_chunks, AlignmentIoError, Chunk, EmitPosition, FrameAlignment,
    TransitionKind,
};
use crate::lexicon::{Augmentation, LabelId, LabelVocabulary, Lexicon, LexiconError};
use crate::model::{
    backward, parse_checkpoint, write_checkpoint, FrameLoss, FrameSample, Gradients, ModelDims,
    ModelError, ScorerParams,
};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("chunk targets are inconsistent with the topology: {0}")]
    Inconsistent(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("train state line {line}: {reason}")]
    BadState { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alignment(#[from] AlignmentIoError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

/// All training hyperparameters. Defaults follow the reference recipe;
/// see the config self-checks in the acceptance suite.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub topology: Topology,
    pub augmentation: Augmentation,
    pub u_pos: EmitPosition,
    pub chunk_size: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub boost: f64,
    pub focal_gamma: f64,
    pub aux_weight: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub min_lr: f64,
    pub newbob_threshold: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub const_lr_epochs: usize,
    pub sampling_rate: f64,
    pub sampling_epochs: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub ffnn_dim: usize,
    pub hidden_dim: usize,
    pub context_size: usize,
    pub encoder_hidden: bool,
    pub nesterov: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            topology: Topology::Rna,
            augmentation: Augmentation::Eow,
            u_pos: EmitPosition::SegEnd,
            chunk_size: 128,
            batch_size: 2,
            label_smoothing: 0.2,
            boost: 5.0,
            focal_gamma: 1.0,
            aux_weight: 1.0,
            learning_rate: 0.001,
            lr_decay: 0.9,
            min_lr: 2e-5,
            newbob_threshold: 0.001,
            epochs: 22,
            pretrain_epochs: 3,
            const_lr_epochs: 5,
            sampling_rate: 0.5,
            sampling_epochs: 0,
            seed: 0,
            embed_dim: 16,
            ffnn_dim: 64,
            hidden_dim: 64,
            context_size: 1,
            encoder_hidden: true,
            nesterov: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::InvalidConfig("label_smoothing must be in [0, 1)".into()));
        }
        if self.boost < 1.0 {
            return Err(TrainError::InvalidConfig("boost must be >= 1".into()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay < 1.0) {
            return Err(TrainError::InvalidConfig("lr_decay must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.sampling_rate) {
            return Err(TrainError::InvalidConfig("sampling_rate must be in [0, 1]".into()));
        }
        if self.chunk_size == 0 || self.chunk_size % 2 != 0 {
            return Err(TrainError::InvalidConfig("chunk_size must be even and positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |reason: String| TrainError::InvalidConfig(reason);
        macro_rules! parse {
            ($field:expr, $ty:ty) => {
                $field = value
                    .parse::<$ty>()
                    .map_err(|_| bad(format!("bad value {value:?} for {key}")))?
            };
        }
        match key {
            "topology" => {
                self.topology = match value {
                    "rna" => Topology::Rna,
                    "hmm" => Topology::Hmm,
                    _ => return Err(bad(format!("unknown topology {value:?}"))),
                }
            }
            "augment" => {
                self.augmentation = match value {
                    "none" => Augmentation::None,
                    "eow" => Augmentation::Eow,
                    "sow_eow" => Augmentation::SowEow,
                    _ => return Err(bad(format!("unknown augmentation {value:?}"))),
                }
            }
            "u_pos" => {
                self.u_pos = match value {
                    "seg_beg" => EmitPosition::SegBegin,
                    "seg_mid" => EmitPosition::SegMid,
                    "seg_end" => EmitPosition::SegEnd,
                    _ => return Err(bad(format!("unknown u_pos {value:?}"))),
                }
            }
            "chunk_size" => parse!(self.chunk_size, usize),
            "batch_size" => parse!(self.batch_size, usize),
            "label_smoothing" => parse!(self.label_smoothing, f64),
            "boost" => parse!(self.boost, f64),
            "focal_gamma" => parse!(self.focal_gamma, f64),
            "aux_weight" => parse!(self.aux_weight, f64),
            "learning_rate" => parse!(self.learning_rate, f64),
            "lr_decay" => parse!(self.lr_decay, f64),
            "min_lr" => parse!(self.min_lr, f64),
            "newbob_threshold" => parse!(self.newbob_threshold, f64),
            "epochs" => parse!(self.epochs, usize),
            "pretrain_epochs" => parse!(self.pretrain_epochs, usize),
            "const_lr_epochs" => parse!(self.const_lr_epochs, usize),
            "sampling_rate" => parse!(self.sampling_rate, f64),
            "sampling_epochs" => parse!(self.sampling_epochs, usize),
            "seed" => parse!(self.seed, u64),
            "embed_dim" => parse!(self.embed_dim, usize),
            "ffnn_dim" => parse!(self.ffnn_dim, usize),
            "hidden_dim" => parse!(self.hidden_dim, usize),
            "context_size" => parse!(self.context_size, usize),
            "encoder_hidden" => parse!(self.encoder_hidden, bool),
            "nesterov" => parse!(self.nesterov, bool),
            _ => return Err(bad(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key=value` config file on top of the defaults.
    pub fn from_kv_text(text: &str) -> Result<TrainConfig, TrainError> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(TrainError::Config {
                line,
                reason: format!("expected key=value, got {trimmed:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| TrainError::Config { line, reason: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.epochs + self.sampling_epochs
    }
}

/// One utterance of a training corpus.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub features: Vec<Vec<f64>>,
    pub alignment: FrameAlignment,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    /// Tab-separated `epoch train_loss dev_loss lr` line.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6e}",
            self.epoch, self.train_loss, self.dev_loss, self.lr
        )
    }
}

// ── Chunk losses ─────────────────────────────────────────────────────────

pub(crate) struct ChunkSamples {
    pub samples: Vec<FrameSample>,
    /// Per frame: the frame whose emission supplied this frame's newest
    /// context label (None while the context is the sentinel).
    pub ctx_supplier: Vec<Option<usize>>,
    /// Per frame: index of its `Target` sample, if one was built.
    pub target_sample: Vec<Option<usize>>,
}

fn ctx_window(hist: &[LabelId], k: usize) -> Vec<Option<LabelId>> {
    hist[hist.len().saturating_sub(k)..]
        .iter()
        .map(|&l| Some(l))
        .collect()
}

/// Build the frame samples of one chunk: the output losses implied by the
/// topology plus the auxiliary focal samples. Contexts start from the
/// chunk's carry-in (the sentinel) and are derived left to right from the
/// targets. `special` is the blank/silence id (the last vocabulary id);
/// silence stays out of the context history.
pub(crate) fn chunk_samples(
    chunk: &Chunk,
    cfg: &TrainConfig,
    special: LabelId,
    aux_only: bool,
) -> Result<ChunkSamples, TrainError> {
    let k = cfg.context_size;
    let total = chunk.len();
    let mut out = ChunkSamples {
        samples: Vec::with_capacity(total * 2),
        ctx_supplier: vec![None; total],
        target_sample: vec![None; total],
    };
    let mut hist: Vec<LabelId> = Vec::new();
    if let Some(c) = chunk.carry_in {
        hist.push(c);
    }
    let mut hist_frames: Vec<Option<usize>> = hist.iter().map(|_| None).collect();

    let want_output = !aux_only;
    match chunk.topology {
        Topology::Rna => {
            for (t, ft) in chunk.targets.iter().enumerate() {
                if want_output {
                    out.ctx_supplier[t] = hist_frames.last().copied().flatten();
                    out.target_sample[t] = Some(out.samples.len());
                    out.samples.push(FrameSample {
                        features: chunk.features[t].clone(),
                        context: ctx_window(&hist, k),
                        loss: FrameLoss::Target { label: ft.label },
                        weight: ft.weight,
                    });
                }
                match ft.kind {
                    TransitionKind::Emit => {
                        hist.push(ft.label);
                        hist_frames.push(Some(t));
                    }
                    TransitionKind::Blank => {}
                    TransitionKind::Loop => {
                        return Err(TrainError::Inconsistent(
                            "loop target in an RNA chunk".into(),
                        ))
                    }
                }
            }
        }
        Topology::Hmm => {
            let mut seg_ctx: Vec<Option<LabelId>> = ctx_window(&hist, k);
            let mut seg_supplier: Option<usize> = None;
            let mut prev: Option<(LabelId, Vec<Option<LabelId>>)> = None;
            for (t, ft) in chunk.targets.iter().enumerate() {
                match ft.kind {
                    TransitionKind::Emit => {
                        let ctx_now = ctx_window(&hist, k);
                        if want_output {
                            if let Some((pl, pctx)) = &prev {
                                out.samples.push(FrameSample {
                                    features: chunk.features[t].clone(),
                                    context: pctx.clone(),
                                    loss: FrameLoss::NonLoop { prev: *pl },
                                    weight: ft.weight,
                                });
                            }
                            out.ctx_supplier[t] = hist_frames.last().copied().flatten();
                            out.target_sample[t] = Some(out.samples.len());
                            out.samples.push(FrameSample {
                                features: chunk.features[t].clone(),
                                context: ctx_now.clone(),
                                loss: FrameLoss::Target { label: ft.label },
                                weight: ft.weight,
                            });
                        }
                        seg_ctx = ctx_now.clone();
                        seg_supplier = hist_frames.last().copied().flatten();
                        prev = Some((ft.label, ctx_now));
                        if ft.label != special {
                            hist.push(ft.label);
                            hist_frames.push(Some(t));
                        }
                    }
                    TransitionKind::Loop => {
                        if want_output {
                            out.ctx_supplier[t] = seg_supplier;
                            out.target_sample[t] = Some(out.samples.len());
                            out.samples.push(FrameSample {
                                features: chunk.features[t].clone(),
                                context: seg_ctx.clone(),
                                loss: FrameLoss::Target { label: ft.label },
                                weight: ft.weight,
                            });
                        }
                    }
                    TransitionKind::Blank => {
                        return Err(TrainError::Inconsistent(
                            "blank target in an HMM chunk".into(),
                        ))
                    }
                }
            }
        }
    }

    if cfg.aux_weight > 0.0 {
        for (t, ft) in chunk.targets.iter().enumerate() {
            out.samples.push(FrameSample {
                features: chunk.features[t].clone(),
                context: Vec::new(),
                loss: FrameLoss::Aux {
                    label: ft.aux_label,
                    gamma: cfg.focal_gamma,
                },
                weight: cfg.aux_weight,
            });
        }
    }
    Ok(out)
}

/// Weighted frame-wise CE loss of one chunk (mean over frames) and its
/// exact gradients.
pub fn ce_loss_chunk(
    params: &ScorerParams,
    chunk: &Chunk,
    cfg: &TrainConfig,
) -> Result<(f64, Gradients), TrainError> {
    chunk_loss(params, chunk, cfg, false)
}

fn special_of(params: &ScorerParams) -> LabelId {
    (params.vocab_size() - 1) as LabelId
}

fn chunk_loss(
    params: &ScorerParams,
    chunk: &Chunk,
    cfg: &TrainConfig,
    aux_only: bool,
) -> Result<(f64, Gradients), TrainError> {
    let built = chunk_samples(chunk, cfg, special_of(params), aux_only)?;
    let (loss, mut grads) = backward(params, &built.samples, cfg.label_smoothing)?;
    let scale = 1.0 / chunk.len().max(1) as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}

/// Pick `count` distinct frames uniformly; result is sorted.
pub(crate) fn select_frames(rng: &mut ChaCha8Rng, total: usize, count: usize) -> Vec<usize> {
    let count = count.min(total);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    let mut chosen = idx[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

fn sample_from_log_dist(rng: &mut ChaCha8Rng, log_probs: &[f64]) -> LabelId {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return i as LabelId;
        }
    }
    (log_probs.len() - 1) as LabelId
}

/// Scheduled-sampling refeed: compute ground-truth-context distributions
/// (pass 1), replace the newest context label of a `sampling_rate` fraction
/// of frames with a draw from the distribution at the frame that supplied
/// that label, then recompute the CE loss against the original targets with
/// the mixed contexts (pass 2). Gradients flow through pass 2 only.
pub fn scheduled_sampling_refeed(
    params: &ScorerParams,
    chunk: &Chunk,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients), TrainError> {
    let mut built = chunk_samples(chunk, cfg, special_of(params), false)?;
    let total = chunk.len();
    let count = (cfg.sampling_rate * total as f64).round() as usize;
    let selected = select_frames(rng, total, count);
    if !selected.is_empty() {
        let h = params.encode(&chunk.features)?;
        for &t in &selected {
            let Some(supplier) = built.ctx_supplier[t] else {
                continue; // sentinel context has no supplying frame
            };
            let Some(si) = built.target_sample[t] else { continue };
            let sup_sample = built.target_sample[supplier]
                .ok_or_else(|| TrainError::Inconsistent("supplier frame lost".into()))?;
            let dist = params.score_step(&h[supplier], &built.samples[sup_sample].context)?;
            let draw = sample_from_log_dist(rng, &dist);
            let ctx = &mut built.samples[si].context;
            if let Some(last) = ctx.last_mut() {
                *last = Some(draw);
            }
        }
    }
    let (loss, mut grads) = backward(params, &built.samples, cfg.label_smoothing)?;
    let scale = 1.0 / total.max(1) as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}

// ── Optimizer and schedule ───────────────────────────────────────────────

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_step(state: &mut TrainState, grads: &Gradients, nesterov: bool) {
    state.adam_t += 1;
    let t = state.adam_t;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let lr = state.lr;
    let g_named = grads.t.named();
    let m_named = state.m.named_mut();
    let v_named = state.v.named_mut();
    let p_named = state.params.t.named_mut();
    for (((_, p), (_, g)), ((_, m), (_, v))) in p_named
        .into_iter()
        .zip(g_named)
        .zip(m_named.into_iter().zip(v_named))
    {
        let pd = p.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let g = gd[i];
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * g;
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            let dir = if nesterov {
                ADAM_BETA1 * m_hat + (1.0 - ADAM_BETA1) * g / bc1
            } else {
                m_hat
            };
            pd[i] -= lr * dir / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Newbob: decay the LR when the relative dev-loss improvement over the
/// previous epoch falls below the threshold; floor at `min_lr`.
pub(crate) fn newbob_next_lr(lr: f64, prev_dev: f64, dev: f64, cfg: &TrainConfig) -> f64 {
    if !prev_dev.is_finite() || prev_dev <= 0.0 {
        return lr;
    }
    let rel = (prev_dev - dev) / prev_dev;
    if rel < cfg.newbob_threshold {
        (lr * cfg.lr_decay).max(cfg.min_lr)
    } else {
        lr
    }
}

// ── Train state ──────────────────────────────────────────────────────────

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ScorerParams,
    pub(crate) m: crate::model::Tensors,
    pub(crate) v: crate::model::Tensors,
    pub adam_t: u64,
    pub lr: f64,
    pub epoch: usize,
    pub best_dev: f64,
    pub prev_dev: f64,
    pub(crate) rng: ChaCha8Rng,
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.m == other.m
            && self.v == other.v
            && self.adam_t == other.adam_t
            && self.lr == other.lr
            && self.epoch == other.epoch
            && self.best_dev.to_bits() == other.best_dev.to_bits()
            && self.prev_dev.to_bits() == other.prev_dev.to_bits()
            && self.rng == other.rng
    }
}

pub const STATE_MAGIC: &str = "PTKSTATE1";

impl TrainState {
    /// Serialize to text; round-trips bit-exactly through
    /// [`TrainState::from_text`].
    pub fn to_text(&self) -> String {
        let seed_hex: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let mut out = format!(
            "{STATE_MAGIC}\nadam_t={}\nlr={:.16e}\nepoch={}\nbest_dev={:.16e}\nprev_dev={:.16e}\nrng_seed={}\nrng_pos={}\nrng_stream={}\n",
            self.adam_t,
            self.lr,
            self.epoch,
            self.best_dev,
            self.prev_dev,
            seed_hex,
            self.rng.get_word_pos(),
            self.rng.get_stream(),
        );
        let dims = *self.params.dims();
        out.push_str("%params\n");
        out.push_str(&write_checkpoint(&self.params));
        out.push_str("%m\n");
        out.push_str(&write_checkpoint(&ScorerParams::from_parts(dims, self.m.clone())));
        out.push_str("%v\n");
        out.push_str(&write_checkpoint(&ScorerParams::from_parts(dims, self.v.clone())));
        out
    }

    pub fn from_text(text: &str) -> Result<TrainState, TrainError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        let mut header = String::new();
        let mut current: Option<(String, String)> = None;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix('%') {
                if let Some(done) = current.take() {
                    sections.push(done);
                }
                current = Some((name.to_string(), String::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push_str(line);
                body.push('\n');
            } else {
                header.push_str(line);
                header.push('\n');
            }
        }
        if let Some(done) = current.take() {
            sections.push(done);
        }

        let mut lines = header.lines().enumerate();
        let bad = |line: usize, reason: String| TrainError::BadState { line, reason };
        let (_, magic) = lines.next().ok_or_else(|| bad(1, "empty state".into()))?;
        if magic != STATE_MAGIC {
            return Err(bad(1, format!("bad magic {magic:?}")));
        }
        let mut scalars = std::collections::HashMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(idx + 1, format!("expected key=value, got {line:?}")))?;
            scalars.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            scalars
                .get(k)
                .cloned()
                .ok_or_else(|| bad(0, format!("missing scalar {k}")))
        };
        let adam_t: u64 = get("adam_t")?.parse().map_err(|_| bad(0, "bad adam_t".into()))?;
        let lr: f64 = get("lr")?.parse().map_err(|_| bad(0, "bad lr".into()))?;
        let epoch: usize = get("epoch")?.parse().map_err(|_| bad(0, "bad epoch".into()))?;
        let best_dev: f64 = get("best_dev")?.parse().map_err(|_| bad(0, "bad best_dev".into()))?;
        let prev_dev: f64 = get("prev_dev")?.parse().map_err(|_| bad(0, "bad prev_dev".into()))?;
        let seed_hex = get("rng_seed")?;
        if seed_hex.len() != 64 {
            return Err(bad(0, "rng_seed must be 64 hex chars".into()));
        }
        let mut seed = [0u8; 32];
        for i in 0..32 {
            seed[i] = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| bad(0, "bad rng_seed".into()))?;
        }
        let pos: u128 = get("rng_pos")?.parse().map_err(|_| bad(0, "bad rng_pos".into()))?;
        let stream: u64 = get("rng_stream")?.parse().map_err(|_| bad(0, "bad rng_stream".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(pos);

        let section = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| b.as_str())
                .ok_or_else(|| bad(0, format!("missing section %{name}")))
        };
        let params = parse_checkpoint(section("params")?)?;
        let m = parse_checkpoint(section("m")?)?.into_parts().1;
        let v = parse_checkpoint(section("v")?)?.into_parts().1;
        Ok(TrainState {
            params,
            m,
            v,
            adam_t,
            lr,
            epoch,
            best_dev,
            prev_dev,
            rng,
        })
    }
}

/// Phase of one epoch in the fixed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pretrain,
    Joint,
    Sampling,
}

/// Prepared corpus plus config: runs epochs against a [`TrainState`].
pub struct Trainer {
    cfg: TrainConfig,
    vocab: LabelVocabulary,
    dims: ModelDims,
    train_chunks: Vec<Chunk>,
    dev_chunks: Vec<Chunk>,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
    pub vocab: LabelVocabulary,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, lexicon: &Lexicon, corpus: &Corpus) -> Result<Trainer, TrainError> {
        cfg.validate()?;
        let lex = lexicon.augmented(cfg.augmentation)?;
        let vocab = LabelVocabulary::build(&lex, cfg.topology, cfg.augmentation);
        let chunks_of = |utts: &[Utterance]| -> Result<Vec<Chunk>, TrainError> {
            let mut chunks = Vec::new();
            for utt in utts {
                if utt.features.is_empty() {
                    continue;
                }
                let targets = frame_targets(&utt.alignment, &vocab, cfg.u_pos, cfg.boost)?;
                chunks.extend(make_chunks(&utt.utt_id, &utt.features, &targets, cfg.chunk_size)?);
            }
            Ok(chunks)
        };
        let train_chunks = chunks_of(&corpus.train)?;
        let dev_chunks = chunks_of(&corpus.dev)?;
        if train_chunks.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let input_dim = train_chunks[0].features[0].len();
        let dims = ModelDims {
            input_dim,
            hidden_dim: cfg.hidden_dim,
            embed_dim: cfg.embed_dim,
            ffnn_dim: cfg.ffnn_dim,
            vocab_size: vocab.len(),
            context_size: cfg.context_size,
            encoder_hidden: cfg.encoder_hidden,
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            vocab,
            dims,
            train_chunks,
            dev_chunks,
        })
    }

    pub fn vocab(&self) -> &LabelVocabulary {
        &self.vocab
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn num_train_chunks(&self) -> usize {
        self.train_chunks.len()
    }

    /// Fresh state: seeded parameters, zero moments, the schedule RNG on its
    /// own stream.
    pub fn init_state(&self) -> Result<TrainState, TrainError> {
        let params = ScorerParams::init(self.cfg.seed, self.dims)?;
        let m = crate::model::Tensors::zeros(&self.dims);
        let v = crate::model::Tensors::zeros(&self.dims);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1);
        Ok(TrainState {
            params,
            m,
            v,
            adam_t: 0,
            lr: self.cfg.learning_rate,
            epoch: 0,
            best_dev: f64::INFINITY,
            prev_dev: f64::INFINITY,
            rng,
        })
    }

    fn phase(&self, epoch: usize) -> Phase {
        if epoch < self.cfg.pretrain_epochs {
            Phase::Pretrain
        } else if epoch < self.cfg.pretrain_epochs + self.cfg.epochs {
            Phase::Joint
        } else {
            Phase::Sampling
        }
    }

    /// Mean loss over the dev chunks under the given phase's objective.
    fn dev_loss(&self, params: &ScorerParams, aux_only: bool) -> Result<f64, TrainError> {
        if self.dev_chunks.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for chunk in &self.dev_chunks {
            let built = chunk_samples(chunk, &self.cfg, special_of(params), aux_only)?;
            let (loss, _) = backward(params, &built.samples, self.cfg.label_smoothing)?;
            total += loss / chunk.len().max(1) as f64;
        }
        Ok(total / self.dev_chunks.len() as f64)
    }

    /// Run at most `max_epochs` more epochs (bounded by the config's total).
    pub fn run_epochs(
        &self,
        state: &mut TrainState,
        max_epochs: usize,
    ) -> Result<Vec<EpochRecord>, TrainError> {
        let mut log = Vec::new();
        let mut ran = 0;
        while state.epoch < self.cfg.total_epochs() && ran < max_epochs {
            log.push(self.one_epoch(state)?);
            ran += 1;
        }
        Ok(log)
    }

    fn one_epoch(&self, state: &mut TrainState) -> Result<EpochRecord, TrainError> {
        let epoch = state.epoch;
        let phase = self.phase(epoch);
        if epoch > 0 && phase != self.phase(epoch - 1) {
            // objectives differ across phases; never compare dev losses
            // over the boundary
            state.prev_dev = f64::INFINITY;
            if phase == Phase::Sampling {
                // the sampling phase restarts the schedule
                state.lr = self.cfg.learning_rate;
            }
        }
        let aux_only = phase == Phase::Pretrain;

        let mut order: Vec<usize> = (0..self.train_chunks.len()).collect();
        order.shuffle(&mut state.rng);

        let lr_used = state.lr;
        let mut train_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&state.params);
            let mut batch_loss = 0.0;
            for &ci in batch {
                let chunk = &self.train_chunks[ci];
                let (loss, g) = match phase {
                    Phase::Sampling => {
                        scheduled_sampling_refeed(&state.params, chunk, &self.cfg, &mut state.rng)?
                    }
                    _ => chunk_loss(&state.params, chunk, &self.cfg, aux_only)?,
                };
                batch_loss += loss;
                grads.accumulate(&g, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    batch: batch_idx,
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            train_loss_sum += batch_loss;
            adam_step(state, &grads, self.cfg.nesterov);
        }
        let train_loss = train_loss_sum / self.train_chunks.len() as f64;
        let dev_loss = self.dev_loss(&state.params, aux_only)?;

        // Newbob after the constant-LR window, comparing consecutive epochs
        let newbob_from = self.cfg.pretrain_epochs + self.cfg.const_lr_epochs;
        if phase != Phase::Pretrain && epoch >= newbob_from && dev_loss.is_finite() {
            state.lr = newbob_next_lr(state.lr, state.prev_dev, dev_loss, &self.cfg);
        }
        if dev_loss.is_finite() {
            state.prev_dev = dev_loss;
            state.best_dev = state.best_dev.min(dev_loss);
        }
        state.epoch += 1;
        Ok(EpochRecord {
            epoch: state.epoch,
            train_loss,
            dev_loss,
            lr: lr_used,
        })
    }
}

/// Train from scratch to the configured epoch budget.
pub fn train(
    cfg: &TrainConfig,
    lexicon: &Lexicon,
    corpus: &Corpus,
) -> Result<TrainOutcome, TrainError> {
    let trainer = Trainer::new(cfg, lexicon, corpus)?;
    let mut state = trainer.init_state()?;
    let log = trainer.run_epochs(&mut state, usize::MAX)?;
    Ok(TrainOutcome {
        state,
        log,
        vocab: trainer.vocab.clone(),
    })
}
