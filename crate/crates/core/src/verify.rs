//! Randomized verification batteries: exact-DP oracles, distribution
//! normalization, finite-difference gradient checks and the decoder-vs-
//! brute-force cross-check. The CLI's `oracle-check` runs these; the
//! acceptance suite asserts them.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::alignment_io::{Chunk, FrameTarget, TransitionKind};
use crate::lexicon::{Augmentation, LabelId, LabelVocabulary, Lexicon, PrefixTree};
use crate::lm::parse_arpa;
use crate::math::{log_softmax_in_place, logsumexp};
use crate::model::{hmm_transition_split, ModelDims, ScorerParams};
use crate::search::{
    decode_utterance, exhaustive_decode, score_word_sequence, BeamConfig, DecodeMode,
};
use crate::topology::{
    build_alignment_graph, collapse_alignment, enumerate_alignments, forward_score, score_path,
    viterbi_alignment, FrameScorer, SilenceMode, Topology,
};
use crate::training::{ce_loss_chunk, TrainConfig};

/// Constant distribution over a vocabulary of the given size.
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl FrameScorer for UniformScorer {
    fn context_size(&self) -> usize {
        1
    }
    fn log_probs(&self, _t: usize, _ctx: &[Option<LabelId>]) -> Vec<f64> {
        vec![-(self.vocab_size as f64).ln(); self.vocab_size]
    }
}

/// Random normalized (frame, context, label) table; context row V is the
/// sentinel.
pub struct TableScorer {
    pub table: Vec<Vec<Vec<f64>>>,
}

impl TableScorer {
    pub fn random(rng: &mut ChaCha8Rng, frames: usize, vocab_size: usize) -> TableScorer {
        let mut table = Vec::with_capacity(frames);
        for _ in 0..frames {
            let mut rows = Vec::with_capacity(vocab_size + 1);
            for _ in 0..=vocab_size {
                let mut logits: Vec<f64> =
                    (0..vocab_size).map(|_| rng.gen_range(-2.0..2.0)).collect();
                log_softmax_in_place(&mut logits);
                rows.push(logits);
            }
            table.push(rows);
        }
        TableScorer { table }
    }
}

impl FrameScorer for TableScorer {
    fn context_size(&self) -> usize {
        1
    }
    fn log_probs(&self, t: usize, ctx: &[Option<LabelId>]) -> Vec<f64> {
        let rows = &self.table[t];
        let row = match ctx.last().copied().flatten() {
            Some(l) => l as usize,
            None => rows.len() - 1,
        };
        rows[row].clone()
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let mut v = 1u64;
    for i in 0..k.min(n - k) {
        v = v * (n - i) as u64 / (i + 1) as u64;
    }
    v
}

/// Vocabulary with `speech` base phonemes under the given topology.
fn bare_vocab(speech: usize, topology: Topology) -> LabelVocabulary {
    let text: String = (0..speech).map(|i| format!("W{i}\tp{i:02}\n")).collect();
    let lex = Lexicon::parse(&text).unwrap();
    LabelVocabulary::build(&lex, topology, Augmentation::None)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Forward/Viterbi DP against brute-force enumeration, plus closed-form
/// path counts, over small random cases.
pub fn topology_battery(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0usize;
    for topology in [Topology::Rna, Topology::Hmm] {
        for vocab_size in 2..=4usize {
            let vocab = bare_vocab(vocab_size - 1, topology);
            for s_len in 1..=3usize {
                for frames in s_len..=6usize {
                    for _ in 0..20 {
                        let a: Vec<LabelId> = (0..s_len)
                            .map(|_| rng.gen_range(0..vocab_size - 1) as LabelId)
                            .collect();
                        let g =
                            build_alignment_graph(&a, &vocab, topology, SilenceMode::None)
                                .map_err(|e| format!("graph build failed: {e}"))?;
                        let paths = enumerate_alignments(&g, frames)
                            .map_err(|e| format!("enumeration failed: {e}"))?;
                        let want = match topology {
                            Topology::Rna => binomial(frames, s_len),
                            Topology::Hmm => binomial(frames - 1, s_len - 1),
                        };
                        if paths.len() as u64 != want {
                            return Err(format!(
                                "{topology:?} S={s_len} T={frames}: {} paths, expected {want}",
                                paths.len()
                            ));
                        }
                        let scorer = TableScorer::random(&mut rng, frames, vocab_size);
                        let scores: Vec<f64> = paths
                            .iter()
                            .map(|p| score_path(&g, &scorer, p).unwrap().value())
                            .collect();
                        let fwd = forward_score(&g, &scorer, frames).value();
                        let brute = logsumexp(&scores);
                        if !rel_close(fwd.exp(), brute.exp(), 1e-9) {
                            return Err(format!(
                                "{topology:?} S={s_len} T={frames}: forward {fwd} vs enumeration {brute}"
                            ));
                        }
                        let (vp, vs) = viterbi_alignment(&g, &scorer, frames);
                        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        if !rel_close(vs.value().exp(), best.exp(), 1e-9) {
                            return Err(format!(
                                "{topology:?} S={s_len} T={frames}: viterbi {} vs max {best}",
                                vs.value()
                            ));
                        }
                        for p in &paths {
                            if collapse_alignment(p, topology).unwrap() != a {
                                return Err(format!(
                                    "{topology:?} S={s_len} T={frames}: path does not collapse to its labels"
                                ));
                            }
                        }
                        let _ = vp;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} topology oracle cases"))
}

/// Distribution normalization within 1e-12 over random (params, frame,
/// context) triples, including the HMM loop/non-loop split.
pub fn normalization_battery(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    for set in 0..20 {
        let k = if set % 4 == 3 { 2 } else { 1 };
        let dims = ModelDims {
            input_dim: 3,
            hidden_dim: 5,
            embed_dim: 4,
            ffnn_dim: 6,
            vocab_size: rng.gen_range(2..=6),
            context_size: k,
            encoder_hidden: set % 2 == 1,
        };
        let params = ScorerParams::init(rng.gen(), dims).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h = params.encode(&[x]).map_err(|e| e.to_string())?;
            let v = dims.vocab_size as u32;
            let mut ctx = Vec::new();
            for _ in 0..k {
                let slot = rng.gen_range(0..=v);
                ctx.push((slot < v).then_some(slot));
            }
            let lp = params.score_step(&h[0], &ctx).map_err(|e| e.to_string())?;
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(format!("distribution sums to {total}, not 1"));
            }
            let prev = rng.gen_range(0..v);
            let (lp_loop, lp_non) = hmm_transition_split(&lp, prev);
            let split = lp_loop.exp() + lp_non.exp();
            if (split - 1.0).abs() > 1e-12 {
                return Err(format!("loop/non-loop split sums to {split}, not 1"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} normalization triples"))
}

fn random_chunk(
    rng: &mut ChaCha8Rng,
    topology: Topology,
    speech: usize,
    special: LabelId,
    input_dim: usize,
    frames: usize,
    boost: f64,
) -> Chunk {
    let mut targets = Vec::with_capacity(frames);
    match topology {
        Topology::Rna => {
            for _ in 0..frames {
                let emit = rng.gen_bool(0.5);
                let label = if emit {
                    rng.gen_range(0..speech) as LabelId
                } else {
                    special
                };
                targets.push(FrameTarget {
                    label,
                    kind: if emit { TransitionKind::Emit } else { TransitionKind::Blank },
                    weight: if emit { boost } else { 1.0 },
                    aux_label: rng.gen_range(0..=speech) as LabelId,
                });
            }
        }
        Topology::Hmm => {
            let mut t = 0;
            let mut prev_was_sil = true;
            while t < frames {
                let len = rng.gen_range(1..=2).min(frames - t);
                let silence = !prev_was_sil && rng.gen_bool(0.25);
                prev_was_sil = silence;
                let label = if silence {
                    special
                } else {
                    rng.gen_range(0..speech) as LabelId
                };
                for i in 0..len {
                    targets.push(FrameTarget {
                        label,
                        kind: if i == 0 { TransitionKind::Emit } else { TransitionKind::Loop },
                        weight: if i == 0 { boost } else { 1.0 },
                        aux_label: label,
                    });
                }
                t += len;
            }
        }
    }
    let features = (0..frames)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    Chunk {
        utt_id: "fd".into(),
        start: 0,
        features,
        targets,
        topology,
        carry_in: None,
    }
}

/// Analytic gradients against central finite differences over random small
/// configurations: both topologies, k in {1,2}, smoothing and boost on and
/// off, focal aux loss on and off.
pub fn gradient_battery(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut blocks_checked = 0usize;
    for case in 0..50usize {
        let topology = if case % 2 == 0 { Topology::Rna } else { Topology::Hmm };
        let k = 1 + (case / 2) % 2;
        let smoothing = if (case / 4) % 2 == 0 { 0.0 } else { 0.2 };
        let boost = if (case / 8) % 2 == 0 { 1.0 } else { 5.0 };
        let aux_weight = if (case / 16) % 2 == 0 { 0.0 } else { 0.7 };
        let gamma = if case % 5 == 0 { 2.0 } else { 1.0 };
        let speech = 3usize;
        let dims = ModelDims {
            input_dim: 3,
            hidden_dim: 4,
            embed_dim: 3,
            ffnn_dim: 4,
            vocab_size: speech + 1,
            context_size: k,
            encoder_hidden: case % 3 == 0,
        };
        let cfg = TrainConfig {
            topology,
            context_size: k,
            label_smoothing: smoothing,
            boost,
            aux_weight,
            focal_gamma: gamma,
            ..TrainConfig::default()
        };
        let params = ScorerParams::init(seed.wrapping_add(case as u64), dims)
            .map_err(|e| e.to_string())?;
        let chunk = random_chunk(
            &mut rng,
            topology,
            speech,
            speech as LabelId,
            dims.input_dim,
            5,
            boost,
        );
        let (_, analytic) = ce_loss_chunk(&params, &chunk, &cfg).map_err(|e| e.to_string())?;

        let loss_of = |p: &ScorerParams| -> Result<f64, String> {
            Ok(ce_loss_chunk(p, &chunk, &cfg).map_err(|e| e.to_string())?.0)
        };
        for (name, tensor) in params.tensors() {
            let rows = tensor.rows();
            let cols = tensor.cols();
            let sentinel_row = (name == "embed").then_some(dims.vocab_size);
            let mut fd_sq = 0.0f64;
            let mut diff_sq = 0.0f64;
            let analytic_block = analytic
                .tensor(name)
                .ok_or_else(|| format!("missing gradient block {name}"))?;
            for r in 0..rows {
                if Some(r) == sentinel_row {
                    continue; // frozen row: analytic gradient is defined as zero
                }
                for c in 0..cols {
                    let mut plus = params.clone();
                    bump(&mut plus, name, r, c, STEP);
                    let mut minus = params.clone();
                    bump(&mut minus, name, r, c, -STEP);
                    let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * STEP);
                    let d = analytic_block.at(r, c) - fd;
                    fd_sq += fd * fd;
                    diff_sq += d * d;
                }
            }
            let rel = diff_sq.sqrt() / fd_sq.sqrt().max(1e-10);
            if rel > TOL {
                return Err(format!(
                    "case {case} ({topology:?}, k={k}, eps={smoothing}, boost={boost}, aux={aux_weight}): block {name} relative error {rel:.3e}"
                ));
            }
            blocks_checked += 1;
        }
    }
    Ok(format!("{blocks_checked} gradient blocks within 1e-4"))
}

fn bump(params: &mut ScorerParams, name: &str, r: usize, c: usize, delta: f64) {
    for (n, m) in params.tensors_mut() {
        if n == name {
            *m.at_mut(r, c) += delta;
            return;
        }
    }
    panic!("unknown tensor {name}");
}

fn random_bigram_arpa(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let mut unigrams = Vec::new();
    unigrams.push(("<s>".to_string(), -99.0, rng.gen_range(-0.6..0.0)));
    for w in words {
        unigrams.push((w.clone(), rng.gen_range(-1.5..-0.2), rng.gen_range(-0.6..0.0)));
    }
    unigrams.push(("</s>".to_string(), rng.gen_range(-1.5..-0.2), 0.0));
    let mut bigrams = Vec::new();
    let mut contexts = vec!["<s>".to_string()];
    contexts.extend(words.iter().cloned());
    let mut targets: Vec<String> = words.to_vec();
    targets.push("</s>".to_string());
    for c in &contexts {
        for t in &targets {
            if rng.gen_bool(0.6) {
                bigrams.push((c.clone(), t.clone(), rng.gen_range(-1.2..-0.1)));
            }
        }
    }
    let mut out = String::from("\\data\\\n");
    out.push_str(&format!("ngram 1={}\n", unigrams.len()));
    out.push_str(&format!("ngram 2={}\n\n\\1-grams:\n", bigrams.len()));
    for (w, p, b) in &unigrams {
        out.push_str(&format!("{p:.6}\t{w}\t{b:.6}\n"));
    }
    out.push_str("\n\\2-grams:\n");
    for (c, t, p) in &bigrams {
        out.push_str(&format!("{p:.6}\t{c} {t}\n"));
    }
    out.push_str("\\end\\\n");
    out
}

/// Unpruned Viterbi beam search against the exhaustive decoder on random
/// tiny tasks, plus the full-sum-versus-Viterbi score ordering of the
/// winning word sequence.
pub fn search_battery(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = 0usize;
    for trial in 0..100usize {
        let topology = if trial % 2 == 0 { Topology::Rna } else { Topology::Hmm };
        let augment = [Augmentation::Eow, Augmentation::None, Augmentation::SowEow][trial % 3];
        let lm_scale = [0.0, 0.5, 1.0][trial % 3];
        let k = if trial % 10 == 9 { 2 } else { 1 };

        let n_words = rng.gen_range(1..=3);
        let mut lex_text = String::new();
        for w in 0..n_words {
            let len = rng.gen_range(1..=3);
            let pron: Vec<String> =
                (0..len).map(|_| format!("p{}", rng.gen_range(0..3))).collect();
            lex_text.push_str(&format!("w{w}\t{}\n", pron.join(" ")));
        }
        let lex = Lexicon::parse(&lex_text).unwrap().augmented(augment).unwrap();
        let vocab = LabelVocabulary::build(&lex, topology, augment);
        let tree = PrefixTree::build(&lex, &vocab).unwrap();
        let words: Vec<String> = tree.word_names().to_vec();
        let lm = parse_arpa(&random_bigram_arpa(&mut rng, &words)).unwrap();

        let dims = ModelDims {
            input_dim: 2,
            hidden_dim: 4,
            embed_dim: 3,
            ffnn_dim: 4,
            vocab_size: vocab.len(),
            context_size: k,
            encoder_hidden: false,
        };
        let params =
            ScorerParams::init(seed.wrapping_mul(131).wrapping_add(trial as u64), dims)
                .map_err(|e| e.to_string())?;
        let frames = rng.gen_range(2..=8);
        let features: Vec<Vec<f64>> = (0..frames)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let h = params.encode(&features).map_err(|e| e.to_string())?;

        let cfg = BeamConfig::unpruned(DecodeMode::Viterbi, lm_scale);
        let dec = decode_utterance(&params, &h, &tree, &vocab, &lm, &cfg)
            .map_err(|e| format!("trial {trial}: decode failed: {e}"))?;
        let oracle = exhaustive_decode(
            &params, &h, &tree, &vocab, &lm, DecodeMode::Viterbi, lm_scale, 500_000,
        )
        .map_err(|e| format!("trial {trial}: oracle failed: {e}"))?;
        if dec.words != oracle.words {
            return Err(format!(
                "trial {trial} ({topology:?}, {augment:?}, lambda={lm_scale}): decoder {:?} vs oracle {:?} (scores {} vs {})",
                dec.words, oracle.words, dec.score, oracle.score
            ));
        }
        if !rel_close(dec.score, oracle.score, 1e-9) {
            return Err(format!(
                "trial {trial}: decoder score {} vs oracle {}",
                dec.score, oracle.score
            ));
        }
        let fs = score_word_sequence(
            &params, &h, &tree, &vocab, &lm, DecodeMode::FullSum, lm_scale, &dec.words,
        )
        .map_err(|e| e.to_string())?;
        let vit = score_word_sequence(
            &params, &h, &tree, &vocab, &lm, DecodeMode::Viterbi, lm_scale, &dec.words,
        )
        .map_err(|e| e.to_string())?;
        if fs < vit - 1e-12 {
            return Err(format!(
                "trial {trial}: full-sum {fs} below viterbi {vit} for the winner"
            ));
        }
        trials += 1;
    }
    Ok(format!("{trials} search oracle trials"))
}
