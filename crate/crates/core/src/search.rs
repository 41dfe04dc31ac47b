//! Time-synchronous lexical prefix-tree beam search with n-gram shallow
//! fusion, plus a brute-force decoder used as its oracle.
//!
//! Hypotheses advance frame by frame: RNA hypotheses either emit blank in
//! place or take a tree arc; HMM hypotheses either loop on their current
//! label (paying the loop probability under the context the label was scored
//! with) or pay the non-loop complement and take an arc. Word identities
//! resolve at word-end arcs, where the scaled LM score is added and the
//! hypothesis returns to the tree root; context-transparent silence is
//! available at the root for the HMM topology. Hypotheses with identical
//! futures are recombined (log-sum-exp under full-sum, max under Viterbi)
//! and the beam is pruned by score margin, then capped.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::lexicon::{LabelId, LabelVocabulary, NodeId, PrefixTree, WordId};
use crate::lm::{build_lookahead, LmError, LmState, LmWordId, NGramLM, SENTENCE_END};
use crate::math::{log1mexp, logsumexp2};
use crate::model::{ContextCache, ModelError, ModelScorer, ScorerParams};
use crate::topology::{
    build_alignment_graph_with_boundaries, forward_score, viterbi_alignment, SilenceMode,
    Topology, TopologyError,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("beam emptied at frame {frame}")]
    EmptyBeam { frame: usize },
    #[error("no word-end-complete hypothesis at the final frame")]
    Incomplete,
    #[error("vocabulary has {vocab} labels but the model scores {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("candidate word sequences exceed the guard of {guard}")]
    TooManySequences { guard: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    FullSum,
    Viterbi,
}

/// Beam search settings.
#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub mode: DecodeMode,
    /// Score margin below the best hypothesis; `f64::INFINITY` disables it.
    pub beam: f64,
    /// Histogram cap on the number of hypotheses kept per frame.
    pub max_hyps: usize,
    pub lm_scale: f64,
    pub lookahead: bool,
    /// Viterbi only: merge hypotheses that differ only in word history.
    pub word_end_recombination: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            mode: DecodeMode::FullSum,
            beam: 12.0,
            max_hyps: 512,
            lm_scale: 0.9,
            lookahead: false,
            word_end_recombination: true,
        }
    }
}

impl BeamConfig {
    /// No pruning at all, for oracle comparisons.
    pub fn unpruned(mode: DecodeMode, lm_scale: f64) -> BeamConfig {
        BeamConfig {
            mode,
            beam: f64::INFINITY,
            max_hyps: usize::MAX,
            lm_scale,
            lookahead: false,
            word_end_recombination: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub words: Vec<WordId>,
    pub score: f64,
    /// Frame at which each word's final label was emitted.
    pub times: Vec<usize>,
}

impl DecodeResult {
    pub fn word_strings(&self, tree: &PrefixTree) -> Vec<String> {
        self.words.iter().map(|&w| tree.word(w).to_string()).collect()
    }
}

/// Label context of a hypothesis (the last k emitted speech labels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Ctx {
    One(Option<LabelId>),
    Two(Option<LabelId>, Option<LabelId>),
}

impl Ctx {
    fn initial(k: usize) -> Ctx {
        match k {
            1 => Ctx::One(None),
            _ => Ctx::Two(None, None),
        }
    }

    fn push(self, label: LabelId) -> Ctx {
        match self {
            Ctx::One(_) => Ctx::One(Some(label)),
            Ctx::Two(_, b) => Ctx::Two(b, Some(label)),
        }
    }

    fn slice(&self) -> Vec<Option<LabelId>> {
        match *self {
            Ctx::One(a) => vec![a],
            Ctx::Two(a, b) => vec![a, b],
        }
    }
}

/// Per-frame distribution provider: a batched table for k=1, memoized
/// per-context scoring otherwise.
struct FrameRows<'a> {
    params: &'a ScorerParams,
    h_t: &'a [f64],
    rows: HashMap<Ctx, Rc<Vec<f64>>>,
}

impl<'a> FrameRows<'a> {
    fn batched(
        params: &'a ScorerParams,
        cache: &ContextCache,
        h_t: &'a [f64],
    ) -> Result<FrameRows<'a>, ModelError> {
        let table = cache.frame_table(params, h_t)?;
        let v = params.vocab_size();
        let mut rows = HashMap::with_capacity(v + 1);
        for c in 0..v {
            rows.insert(
                Ctx::One(Some(c as LabelId)),
                Rc::new(table.row(Some(c as LabelId)).to_vec()),
            );
        }
        rows.insert(Ctx::One(None), Rc::new(table.row(None).to_vec()));
        Ok(FrameRows { params, h_t, rows })
    }

    fn memoized(params: &'a ScorerParams, h_t: &'a [f64]) -> FrameRows<'a> {
        FrameRows {
            params,
            h_t,
            rows: HashMap::new(),
        }
    }

    fn get(&mut self, ctx: Ctx) -> Result<Rc<Vec<f64>>, ModelError> {
        if let Some(r) = self.rows.get(&ctx) {
            return Ok(r.clone());
        }
        let lp = Rc::new(self.params.score_step(self.h_t, &ctx.slice())?);
        self.rows.insert(ctx, lp.clone());
        Ok(lp)
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    node: NodeId,
    ctx: Ctx,
    lm: LmState,
    words: Vec<WordId>,
    times: Vec<usize>,
    score: f64,
    /// HMM: label currently looping and the context it was scored under.
    looping: Option<(LabelId, Ctx)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct RecombKey {
    node: NodeId,
    ctx: Ctx,
    looping: Option<(LabelId, Ctx)>,
    lm: LmState,
    /// `None` under word-end recombination, where histories merge.
    words: Option<Vec<WordId>>,
}

fn lm_term(scale: f64, lp: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * lp
    }
}

/// Mapping from tree words to LM words, fixed before the frame loop.
struct WordLm<'a> {
    lm: &'a NGramLM,
    ids: Vec<Option<LmWordId>>,
    scale: f64,
}

impl<'a> WordLm<'a> {
    fn new(lm: &'a NGramLM, tree: &PrefixTree, scale: f64) -> WordLm<'a> {
        let unk = lm.word_id(crate::lm::UNKNOWN_WORD);
        let ids = tree
            .word_names()
            .iter()
            .map(|w| lm.word_id(w).or(unk))
            .collect();
        WordLm { lm, ids, scale }
    }

    /// Scaled score plus successor state for one word emission.
    fn emit(&self, state: &LmState, word: WordId) -> (f64, LmState) {
        if self.scale == 0.0 {
            return (0.0, state.clone());
        }
        match self.ids[word as usize] {
            Some(id) => {
                let (lp, next) = self.lm.score_id(state, id);
                (lm_term(self.scale, lp), next)
            }
            None => (f64::NEG_INFINITY, state.clone()),
        }
    }

    /// Scaled sentence-end score; zero when the LM has no end symbol.
    fn finish(&self, state: &LmState) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        match self.lm.word_id(SENTENCE_END) {
            Some(id) => lm_term(self.scale, self.lm.score_id(state, id).0),
            None => 0.0,
        }
    }
}

struct BeamMerge {
    entries: Vec<(RecombKey, Hyp)>,
    index: HashMap<RecombKey, usize>,
    mode: DecodeMode,
}

impl BeamMerge {
    fn new(mode: DecodeMode) -> BeamMerge {
        BeamMerge {
            entries: Vec::new(),
            index: HashMap::new(),
            mode,
        }
    }

    fn push(&mut self, key: RecombKey, hyp: Hyp) {
        if hyp.score == f64::NEG_INFINITY {
            return;
        }
        match self.index.get(&key) {
            Some(&i) => {
                let cur = &mut self.entries[i].1;
                match self.mode {
                    DecodeMode::FullSum => {
                        let merged = logsumexp2(cur.score, hyp.score);
                        // the stronger contributor donates the traceback
                        if hyp.score > cur.score {
                            *cur = hyp;
                        }
                        cur.score = merged;
                    }
                    DecodeMode::Viterbi => {
                        if hyp.score > cur.score
                            || (hyp.score == cur.score && hyp.words < cur.words)
                        {
                            *cur = hyp;
                        }
                    }
                }
            }
            None => {
                self.index.insert(key.clone(), self.entries.len());
                self.entries.push((key, hyp));
            }
        }
    }

    fn into_beam(mut self, beam: f64, max_hyps: usize) -> Vec<Hyp> {
        self.entries.sort_by(|(ka, a), (kb, b)| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| ka.cmp(kb))
        });
        let best = match self.entries.first() {
            Some((_, h)) => h.score,
            None => return Vec::new(),
        };
        let keep = if beam == f64::INFINITY { f64::NEG_INFINITY } else { best - beam };
        self.entries.retain(|(_, h)| h.score >= keep);
        self.entries.truncate(max_hyps);
        self.entries.into_iter().map(|(_, h)| h).collect()
    }
}

/// Decode one utterance over pre-encoded frames `h`.
pub fn decode_utterance(
    params: &ScorerParams,
    h: &[Vec<f64>],
    tree: &PrefixTree,
    vocab: &LabelVocabulary,
    lm: &NGramLM,
    cfg: &BeamConfig,
) -> Result<DecodeResult, SearchError> {
    if vocab.len() != params.vocab_size() {
        return Err(SearchError::VocabMismatch {
            vocab: vocab.len(),
            model: params.vocab_size(),
        });
    }
    let frames = h.len();
    if frames == 0 {
        return Ok(DecodeResult {
            words: Vec::new(),
            score: 0.0,
            times: Vec::new(),
        });
    }
    let topology = vocab.topology();
    let special = vocab.special_id();
    let k = params.context_size();
    let word_lm = WordLm::new(lm, tree, cfg.lm_scale);
    let la = if cfg.lookahead {
        Some(build_lookahead(lm, tree)?)
    } else {
        None
    };
    let la_at = |node: NodeId| -> f64 {
        match &la {
            Some(t) => lm_term(cfg.lm_scale, t[node]),
            None => 0.0,
        }
    };
    let cache = (k == 1).then(|| ContextCache::new(params)).transpose()?;

    let merge_words = !(cfg.mode == DecodeMode::Viterbi && cfg.word_end_recombination);
    let key_of = |hyp: &Hyp| RecombKey {
        node: hyp.node,
        ctx: hyp.ctx,
        looping: hyp.looping,
        lm: hyp.lm.clone(),
        words: merge_words.then(|| hyp.words.clone()),
    };

    let mut beam = vec![Hyp {
        node: PrefixTree::ROOT,
        ctx: Ctx::initial(k),
        lm: lm.initial_state(),
        words: Vec::new(),
        times: Vec::new(),
        score: la_at(PrefixTree::ROOT),
        looping: None,
    }];

    for t in 0..frames {
        let mut rows = match &cache {
            Some(c) => FrameRows::batched(params, c, &h[t])?,
            None => FrameRows::memoized(params, &h[t]),
        };
        let mut merge = BeamMerge::new(cfg.mode);
        for hyp in &beam {
            // stay in place
            match topology {
                Topology::Rna => {
                    let row = rows.get(hyp.ctx)?;
                    let mut next = hyp.clone();
                    next.score += row[special as usize];
                    merge.push(key_of(&next), next);
                }
                Topology::Hmm => {
                    if let Some((label, lctx)) = hyp.looping {
                        let row = rows.get(lctx)?;
                        let mut next = hyp.clone();
                        next.score += row[label as usize].min(0.0);
                        merge.push(key_of(&next), next);
                    }
                }
            }
            // forward: the non-loop complement of the looping label (HMM)
            let non_loop = match (topology, hyp.looping) {
                (Topology::Hmm, Some((label, lctx))) => {
                    let row = rows.get(lctx)?;
                    log1mexp(row[label as usize].min(0.0))
                }
                _ => 0.0,
            };
            if non_loop == f64::NEG_INFINITY {
                continue;
            }
            let emit_row = rows.get(hyp.ctx)?;
            for (label, child) in tree.arcs(hyp.node) {
                let base = non_loop + emit_row[label as usize];
                if base == f64::NEG_INFINITY {
                    continue;
                }
                let new_ctx = hyp.ctx.push(label);
                let new_loop = (topology == Topology::Hmm).then_some((label, hyp.ctx));
                if tree.has_arcs(child) {
                    let mut next = hyp.clone();
                    next.node = child;
                    next.ctx = new_ctx;
                    next.looping = new_loop;
                    next.score += base + la_at(child) - la_at(hyp.node);
                    merge.push(key_of(&next), next);
                }
                for &word in tree.node_words(child) {
                    let (lm_score, lm_next) = word_lm.emit(&hyp.lm, word);
                    let mut next = hyp.clone();
                    next.node = PrefixTree::ROOT;
                    next.ctx = new_ctx;
                    next.looping = new_loop;
                    next.lm = lm_next;
                    next.words.push(word);
                    next.times.push(t);
                    next.score += base + lm_score + la_at(PrefixTree::ROOT) - la_at(hyp.node);
                    merge.push(key_of(&next), next);
                }
            }
            // context-transparent silence at word boundaries (HMM)
            if topology == Topology::Hmm
                && hyp.node == PrefixTree::ROOT
                && hyp.looping.map(|(l, _)| l != special).unwrap_or(true)
            {
                let sil = non_loop + emit_row[special as usize];
                if sil != f64::NEG_INFINITY {
                    let mut next = hyp.clone();
                    next.looping = Some((special, hyp.ctx));
                    next.score += sil;
                    merge.push(key_of(&next), next);
                }
            }
        }
        beam = merge.into_beam(cfg.beam, cfg.max_hyps);
        if beam.is_empty() {
            return Err(SearchError::EmptyBeam { frame: t });
        }
    }

    // finalization: word-end-complete hypotheses only, sentence end scored,
    // alignments of one word sequence combined per decode mode
    let mut merge = BeamMerge::new(cfg.mode);
    for mut hyp in beam {
        if hyp.node != PrefixTree::ROOT {
            continue;
        }
        hyp.score -= la_at(PrefixTree::ROOT);
        hyp.score += word_lm.finish(&hyp.lm);
        let key = RecombKey {
            node: 0,
            ctx: Ctx::initial(k),
            looping: None,
            lm: LmState::empty(),
            words: Some(hyp.words.clone()),
        };
        merge.push(key, hyp);
    }
    // into_beam sorts by score, then by key, so ties already prefer the
    // lexicographically smaller word history
    let best = merge
        .into_beam(f64::INFINITY, usize::MAX)
        .into_iter()
        .next()
        .ok_or(SearchError::Incomplete)?;
    Ok(DecodeResult {
        words: best.words,
        score: best.score,
        times: best.times,
    })
}

/// One line of decode output: `UTT_ID<TAB>score<TAB>word1 word2 ...`.
pub fn format_decode_line(utt_id: &str, result: &DecodeResult, tree: &PrefixTree) -> String {
    format!(
        "{utt_id}\t{:.6}\t{}",
        result.score,
        result.word_strings(tree).join(" ")
    )
}

/// Score every word sequence whose pronunciations fit in the frame count by
/// composing pronunciation variants into alignment graphs and running the
/// exact topology DP; the oracle counterpart of [`decode_utterance`].
pub fn exhaustive_decode(
    params: &ScorerParams,
    h: &[Vec<f64>],
    tree: &PrefixTree,
    vocab: &LabelVocabulary,
    lm: &NGramLM,
    mode: DecodeMode,
    lm_scale: f64,
    max_sequences: usize,
) -> Result<DecodeResult, SearchError> {
    if vocab.len() != params.vocab_size() {
        return Err(SearchError::VocabMismatch {
            vocab: vocab.len(),
            model: params.vocab_size(),
        });
    }
    let frames = h.len();
    let word_lm = WordLm::new(lm, tree, lm_scale);
    let scorer = ModelScorer::new(params, h);

    // pronunciation variants per word
    let mut prons: Vec<Vec<Vec<LabelId>>> = vec![Vec::new(); tree.num_words()];
    for (w, path) in tree.word_paths() {
        prons[w as usize].push(path);
    }
    let min_len: Vec<usize> = prons
        .iter()
        .map(|v| v.iter().map(|p| p.len()).min().unwrap_or(usize::MAX))
        .collect();

    // enumerate word sequences whose shortest pronunciation fits
    let mut sequences: Vec<Vec<WordId>> = Vec::new();
    let mut stack: Vec<(Vec<WordId>, usize)> = vec![(Vec::new(), 0)];
    while let Some((seq, used)) = stack.pop() {
        sequences.push(seq.clone());
        if sequences.len() > max_sequences {
            return Err(SearchError::TooManySequences { guard: max_sequences });
        }
        for w in (0..tree.num_words() as WordId).rev() {
            let need = used + min_len[w as usize];
            if need <= frames {
                let mut next = seq.clone();
                next.push(w);
                stack.push((next, need));
            }
        }
    }

    let mut best: Option<DecodeResult> = None;
    for seq in sequences {
        let total = sequence_score(params, h, vocab, &word_lm, mode, &seq, &prons, &scorer)?;
        if total == f64::NEG_INFINITY {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => total > b.score || (total == b.score && seq < b.words),
        };
        if better {
            best = Some(DecodeResult {
                words: seq,
                score: total,
                times: Vec::new(),
            });
        }
    }
    best.ok_or(SearchError::Incomplete)
}

/// Total score (acoustic plus scaled LM) of one word sequence: sum or max
/// over all its alignments and pronunciation variants per `mode`.
pub fn score_word_sequence(
    params: &ScorerParams,
    h: &[Vec<f64>],
    tree: &PrefixTree,
    vocab: &LabelVocabulary,
    lm: &NGramLM,
    mode: DecodeMode,
    lm_scale: f64,
    seq: &[WordId],
) -> Result<f64, SearchError> {
    let mut prons: Vec<Vec<Vec<LabelId>>> = vec![Vec::new(); tree.num_words()];
    for (w, path) in tree.word_paths() {
        prons[w as usize].push(path);
    }
    let scorer = ModelScorer::new(params, h);
    let word_lm = WordLm::new(lm, tree, lm_scale);
    sequence_score(params, h, vocab, &word_lm, mode, seq, &prons, &scorer)
}

#[allow(clippy::too_many_arguments)]
fn sequence_score(
    params: &ScorerParams,
    h: &[Vec<f64>],
    vocab: &LabelVocabulary,
    word_lm: &WordLm<'_>,
    mode: DecodeMode,
    seq: &[WordId],
    prons: &[Vec<Vec<LabelId>>],
    scorer: &ModelScorer<'_>,
) -> Result<f64, SearchError> {
    use crate::topology::FrameScorer;
    let frames = h.len();
    let topology = vocab.topology();

    // LM part
    let mut lm_total = 0.0;
    let mut state = word_lm.lm.initial_state();
    for &w in seq {
        let (lp, next) = word_lm.emit(&state, w);
        lm_total += lp;
        state = next;
    }
    lm_total += word_lm.finish(&state);
    if lm_total == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }

    // acoustic part: sum or max over pronunciation variant combinations
    let am = if seq.is_empty() {
        let sentinel = vec![None; params.context_size()];
        (0..frames)
            .map(|t| scorer.log_prob(t, &sentinel, vocab.special_id()))
            .sum()
    } else {
        let mut combo = vec![0usize; seq.len()];
        let mut am_total = f64::NEG_INFINITY;
        loop {
            let mut labels = Vec::new();
            let mut ends = Vec::new();
            for (i, &w) in seq.iter().enumerate() {
                let pron = &prons[w as usize][combo[i]];
                for (j, &l) in pron.iter().enumerate() {
                    labels.push(l);
                    ends.push(j + 1 == pron.len());
                }
            }
            if labels.len() <= frames {
                let silence = match topology {
                    Topology::Rna => SilenceMode::None,
                    Topology::Hmm => SilenceMode::Boundaries,
                };
                let g = build_alignment_graph_with_boundaries(
                    &labels, vocab, topology, silence, &ends,
                )?;
                let score = match mode {
                    DecodeMode::FullSum => forward_score(&g, scorer, frames).value(),
                    DecodeMode::Viterbi => viterbi_alignment(&g, scorer, frames).1.value(),
                };
                am_total = match mode {
                    DecodeMode::FullSum => logsumexp2(am_total, score),
                    DecodeMode::Viterbi => am_total.max(score),
                };
            }
            // next variant combination
            let mut i = 0;
            loop {
                if i == combo.len() {
                    break;
                }
                combo[i] += 1;
                if combo[i] < prons[seq[i] as usize].len() {
                    break;
                }
                combo[i] = 0;
                i += 1;
            }
            if i == combo.len() {
                break;
            }
        }
        am_total
    };
    Ok(am + lm_total)
}
