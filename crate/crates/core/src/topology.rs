//! Alignment label topologies and exact dynamic programming over their
//! graphs.
//!
//! Two topologies relate a phoneme sequence `a_1..a_S` to a frame-synchronous
//! alignment of length T:
//!
//! * RNA: every label is emitted exactly once; all remaining frames emit the
//!   blank label. Blank does not update the phoneme context.
//! * HMM: every label self-loops over consecutive frames; no blank exists,
//!   and optional silence states may sit at word boundaries. A forward
//!   transition first pays a non-loop factor `1 - q(prev | ctx)` under the
//!   previous context, then the new label probability under the updated
//!   context. The very first emission has no loopable predecessor and
//!   carries no non-loop factor. Silence never updates the phoneme context.
//!
//! All scores are natural-log probabilities combined by log-sum-exp (forward)
//! or max (Viterbi); log-zero is `LogScore::ZERO`.

use thiserror::Error;

use crate::lexicon::{LabelId, LabelVocabulary};
use crate::math::{log1mexp, logsumexp2, LogScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Rna,
    Hmm,
}

/// Whether HMM graphs get skippable silence states at sequence edges and
/// word boundaries. Ignored for RNA, whose blank already covers pauses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SilenceMode {
    None,
    Boundaries,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("label sequence must be non-empty")]
    EmptySequence,
    #[error("label {0} is not in the vocabulary")]
    UnknownLabel(LabelId),
    #[error("special label {0} not allowed inside a label sequence")]
    SpecialLabel(LabelId),
    #[error("alignment enumeration would produce {count} paths (guard: {guard})")]
    PathGuardExceeded { count: u64, guard: u64 },
    #[error("malformed alignment path: {0}")]
    MalformedPath(String),
}

/// Per-frame scorer interface: a normalized log distribution over the
/// vocabulary for every (frame, phoneme context) pair. Contexts are the most
/// recent `context_size()` emitted speech labels, oldest first, left-padded
/// with `None` (the sentinel mapped to the all-zero embedding).
pub trait FrameScorer {
    fn context_size(&self) -> usize;
    fn log_probs(&self, t: usize, ctx: &[Option<LabelId>]) -> Vec<f64>;
    fn log_prob(&self, t: usize, ctx: &[Option<LabelId>], label: LabelId) -> f64 {
        self.log_probs(t, ctx)[label as usize]
    }
}

/// One frame-synchronous alignment: emitted labels `y` and the transition
/// sequence `s` (labels consumed after each frame; `s` starts implicitly at 0
/// and moves by 0 or 1 per frame).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub y: Vec<LabelId>,
    pub s: Vec<usize>,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// What a state scores: the emitted label plus the end of its context window
/// (number of labels of `a` preceding the emission).
#[derive(Debug, Clone, Copy)]
struct Emission {
    label: LabelId,
    ctx_end: usize,
}

#[derive(Debug, Clone)]
struct GraphState {
    /// Labels of `a` consumed once this state has been entered.
    pos: usize,
    /// Scored when the state is entered by a forward arc.
    entry: Option<Emission>,
    /// Scored on a self-loop frame; `None` means the state cannot loop.
    looping: Option<Emission>,
    is_final: bool,
}

/// Alignment graph for one label sequence under one topology.
#[derive(Debug, Clone)]
pub struct AlignmentGraph {
    topology: Topology,
    labels: Vec<LabelId>,
    states: Vec<GraphState>,
    /// Forward arcs grouped by target state, source indices ascending.
    arcs_into: Vec<Vec<usize>>,
    initial: usize,
}

/// Build the alignment graph of `a` under `topology`, deriving word
/// boundaries (silence insertion points) from EOW flags in `vocab`.
pub fn build_alignment_graph(
    a: &[LabelId],
    vocab: &LabelVocabulary,
    topology: Topology,
    silence: SilenceMode,
) -> Result<AlignmentGraph, TopologyError> {
    let boundaries: Vec<bool> = a.iter().map(|&l| vocab.is_word_end(l)).collect();
    build_alignment_graph_with_boundaries(a, vocab, topology, silence, &boundaries)
}

/// Like [`build_alignment_graph`] but with explicit word boundaries, for
/// composed pronunciations whose labels carry no EOW flags.
pub fn build_alignment_graph_with_boundaries(
    a: &[LabelId],
    vocab: &LabelVocabulary,
    topology: Topology,
    silence: SilenceMode,
    word_ends: &[bool],
) -> Result<AlignmentGraph, TopologyError> {
    if a.is_empty() {
        return Err(TopologyError::EmptySequence);
    }
    for &label in a {
        if label as usize >= vocab.len() {
            return Err(TopologyError::UnknownLabel(label));
        }
        if vocab.is_special(label) {
            return Err(TopologyError::SpecialLabel(label));
        }
    }
    debug_assert_eq!(word_ends.len(), a.len());

    let s_total = a.len();
    let mut states = Vec::new();
    let mut arcs: Vec<(usize, usize)> = Vec::new();

    match topology {
        Topology::Rna => {
            let blank = vocab.special_id();
            for s in 0..=s_total {
                states.push(GraphState {
                    pos: s,
                    entry: (s > 0).then(|| Emission {
                        label: a[s - 1],
                        ctx_end: s - 1,
                    }),
                    looping: Some(Emission {
                        label: blank,
                        ctx_end: s,
                    }),
                    is_final: s == s_total,
                });
                if s > 0 {
                    arcs.push((s - 1, s));
                }
            }
        }
        Topology::Hmm => {
            let sil = vocab.special_id();
            states.push(GraphState {
                pos: 0,
                entry: None,
                looping: None,
                is_final: false,
            });
            // states that can precede the next label
            let mut frontier = vec![0usize];
            if silence == SilenceMode::Boundaries {
                states.push(GraphState {
                    pos: 0,
                    entry: Some(Emission { label: sil, ctx_end: 0 }),
                    looping: Some(Emission { label: sil, ctx_end: 0 }),
                    is_final: false,
                });
                arcs.push((0, 1));
                frontier.push(1);
            }
            for s in 1..=s_total {
                let st = states.len();
                states.push(GraphState {
                    pos: s,
                    entry: Some(Emission {
                        label: a[s - 1],
                        ctx_end: s - 1,
                    }),
                    looping: Some(Emission {
                        label: a[s - 1],
                        ctx_end: s - 1,
                    }),
                    is_final: s == s_total,
                });
                for &f in &frontier {
                    arcs.push((f, st));
                }
                frontier = vec![st];
                let at_boundary = word_ends[s - 1] || s == s_total;
                if silence == SilenceMode::Boundaries && at_boundary {
                    let sn = states.len();
                    states.push(GraphState {
                        pos: s,
                        entry: Some(Emission { label: sil, ctx_end: s }),
                        looping: Some(Emission { label: sil, ctx_end: s }),
                        is_final: s == s_total,
                    });
                    arcs.push((st, sn));
                    frontier.push(sn);
                }
            }
        }
    }

    let mut arcs_into = vec![Vec::new(); states.len()];
    for (from, to) in arcs {
        arcs_into[to].push(from);
    }
    for list in arcs_into.iter_mut() {
        list.sort_unstable();
    }

    Ok(AlignmentGraph {
        topology,
        labels: a.to_vec(),
        states,
        arcs_into,
        initial: 0,
    })
}

impl AlignmentGraph {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Context window of the last `k` consumed labels ending at `ctx_end`,
    /// oldest first, left-padded with the sentinel.
    fn ctx_window(&self, ctx_end: usize, k: usize) -> Vec<Option<LabelId>> {
        let mut win = vec![None; k];
        for (slot, idx) in (0..k).rev().zip((0..ctx_end).rev()) {
            win[slot] = Some(self.labels[idx]);
        }
        win
    }

    fn emission_windows(&self, k: usize) -> (Vec<Option<Vec<Option<LabelId>>>>, Vec<Option<Vec<Option<LabelId>>>>) {
        let entries = self
            .states
            .iter()
            .map(|st| st.entry.map(|e| self.ctx_window(e.ctx_end, k)))
            .collect();
        let loops = self
            .states
            .iter()
            .map(|st| st.looping.map(|e| self.ctx_window(e.ctx_end, k)))
            .collect();
        (entries, loops)
    }
}

/// Exact log-sum over all accepting length-T paths.
pub fn forward_score(g: &AlignmentGraph, scorer: &dyn FrameScorer, frames: usize) -> LogScore {
    let k = scorer.context_size();
    let (entry_ctx, loop_ctx) = g.emission_windows(k);
    let n = g.states.len();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[g.initial] = 0.0;
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 0..frames {
        for (i, st) in g.states.iter().enumerate() {
            let mut v = f64::NEG_INFINITY;
            if let Some(le) = st.looping {
                if alpha[i] != f64::NEG_INFINITY {
                    let lp = scorer.log_prob(t, loop_ctx[i].as_ref().unwrap(), le.label);
                    v = alpha[i] + lp;
                }
            }
            if let Some(ee) = st.entry {
                for &f in &g.arcs_into[i] {
                    if alpha[f] == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut w = alpha[f];
                    if g.topology == Topology::Hmm {
                        if let Some(fl) = g.states[f].looping {
                            let loop_lp =
                                scorer.log_prob(t, loop_ctx[f].as_ref().unwrap(), fl.label);
                            w += log1mexp(loop_lp.min(0.0));
                        }
                    }
                    w += scorer.log_prob(t, entry_ctx[i].as_ref().unwrap(), ee.label);
                    v = logsumexp2(v, w);
                }
            }
            next[i] = v;
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let mut total = f64::NEG_INFINITY;
    for (i, st) in g.states.iter().enumerate() {
        if st.is_final {
            total = logsumexp2(total, alpha[i]);
        }
    }
    if total == f64::NEG_INFINITY {
        LogScore::ZERO
    } else {
        LogScore::new(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pred {
    Unreached,
    Loop,
    Arc(usize),
}

/// Highest-probability accepting path and its score.
///
/// Ties break toward the path whose forward transitions happen earlier
/// (loops are preferred at merge points), then toward the arc stored first
/// (ascending source state). Infeasible inputs return an empty path and
/// log-zero.
pub fn viterbi_alignment(
    g: &AlignmentGraph,
    scorer: &dyn FrameScorer,
    frames: usize,
) -> (AlignmentPath, LogScore) {
    let k = scorer.context_size();
    let (entry_ctx, loop_ctx) = g.emission_windows(k);
    let n = g.states.len();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[g.initial] = 0.0;
    let mut preds: Vec<Vec<Pred>> = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut pred = vec![Pred::Unreached; n];
        for (i, st) in g.states.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_pred = Pred::Unreached;
            if let Some(le) = st.looping {
                if alpha[i] != f64::NEG_INFINITY {
                    let lp = scorer.log_prob(t, loop_ctx[i].as_ref().unwrap(), le.label);
                    let v = alpha[i] + lp;
                    if v > best {
                        best = v;
                        best_pred = Pred::Loop;
                    }
                }
            }
            if let Some(ee) = st.entry {
                for &f in &g.arcs_into[i] {
                    if alpha[f] == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut w = alpha[f];
                    if g.topology == Topology::Hmm {
                        if let Some(fl) = g.states[f].looping {
                            let loop_lp =
                                scorer.log_prob(t, loop_ctx[f].as_ref().unwrap(), fl.label);
                            w += log1mexp(loop_lp.min(0.0));
                        }
                    }
                    w += scorer.log_prob(t, entry_ctx[i].as_ref().unwrap(), ee.label);
                    if w > best {
                        best = w;
                        best_pred = Pred::Arc(f);
                    }
                }
            }
            next[i] = best;
            pred[i] = best_pred;
        }
        alpha = next;
        preds.push(pred);
    }

    let mut best_final = None;
    let mut best_score = f64::NEG_INFINITY;
    for (i, st) in g.states.iter().enumerate() {
        if st.is_final && alpha[i] > best_score {
            best_score = alpha[i];
            best_final = Some(i);
        }
    }
    let Some(mut state) = best_final else {
        return (AlignmentPath { y: vec![], s: vec![] }, LogScore::ZERO);
    };
    if best_score == f64::NEG_INFINITY {
        return (AlignmentPath { y: vec![], s: vec![] }, LogScore::ZERO);
    }

    let mut y = vec![0; frames];
    let mut s = vec![0; frames];
    for t in (0..frames).rev() {
        let st = &g.states[state];
        s[t] = st.pos;
        match preds[t][state] {
            Pred::Loop => {
                y[t] = st.looping.unwrap().label;
            }
            Pred::Arc(f) => {
                y[t] = st.entry.unwrap().label;
                state = f;
            }
            Pred::Unreached => unreachable!("backtrace hit unreached state"),
        }
    }
    (AlignmentPath { y, s }, LogScore::new(best_score))
}

/// Score one specific path under `scorer`, walking the graph it came from.
pub fn score_path(
    g: &AlignmentGraph,
    scorer: &dyn FrameScorer,
    path: &AlignmentPath,
) -> Result<LogScore, TopologyError> {
    let k = scorer.context_size();
    let (entry_ctx, loop_ctx) = g.emission_windows(k);
    let mut state = g.initial;
    let mut total = 0.0;
    for (t, (&label, &pos)) in path.y.iter().zip(path.s.iter()).enumerate() {
        let st = &g.states[state];
        let is_loop = st
            .looping
            .map(|le| le.label == label && st.pos == pos)
            .unwrap_or(false);
        if is_loop {
            total += scorer.log_prob(t, loop_ctx[state].as_ref().unwrap(), label);
            continue;
        }
        let mut target = None;
        for (i, cand) in g.states.iter().enumerate() {
            if g.arcs_into[i].contains(&state) {
                if let Some(e) = cand.entry {
                    if e.label == label && cand.pos == pos {
                        target = Some(i);
                        break;
                    }
                }
            }
        }
        let Some(next) = target else {
            return Err(TopologyError::MalformedPath(format!(
                "no transition for label {label} at frame {t}"
            )));
        };
        if g.topology == Topology::Hmm {
            if let Some(fl) = g.states[state].looping {
                let loop_lp = scorer.log_prob(t, loop_ctx[state].as_ref().unwrap(), fl.label);
                total += log1mexp(loop_lp.min(0.0));
            }
        }
        total += scorer.log_prob(t, entry_ctx[next].as_ref().unwrap(), label);
        state = next;
    }
    if !g.states[state].is_final {
        return Err(TopologyError::MalformedPath(
            "path does not end in a final state".into(),
        ));
    }
    Ok(LogScore::new(total))
}

const PATH_GUARD: u64 = 1_000_000;

/// Enumerate all accepting paths of exactly `frames` frames.
///
/// Guarded: errors out when the path count exceeds one million.
pub fn enumerate_alignments(
    g: &AlignmentGraph,
    frames: usize,
) -> Result<Vec<AlignmentPath>, TopologyError> {
    // count first so the guard fires before any allocation blows up
    let n = g.states.len();
    let mut counts = vec![0u64; n];
    counts[g.initial] = 1;
    for _ in 0..frames {
        let mut next = vec![0u64; n];
        for (i, st) in g.states.iter().enumerate() {
            let mut c = 0u64;
            if st.looping.is_some() {
                c = c.saturating_add(counts[i]);
            }
            if st.entry.is_some() {
                for &f in &g.arcs_into[i] {
                    c = c.saturating_add(counts[f]);
                }
            }
            next[i] = c;
        }
        counts = next;
    }
    let total: u64 = g
        .states
        .iter()
        .enumerate()
        .filter(|(_, st)| st.is_final)
        .fold(0u64, |acc, (i, _)| acc.saturating_add(counts[i]));
    if total > PATH_GUARD {
        return Err(TopologyError::PathGuardExceeded {
            count: total,
            guard: PATH_GUARD,
        });
    }

    let mut out = Vec::with_capacity(total as usize);
    let mut y = Vec::with_capacity(frames);
    let mut s = Vec::with_capacity(frames);
    dfs(g, g.initial, frames, &mut y, &mut s, &mut out);
    Ok(out)
}

fn dfs(
    g: &AlignmentGraph,
    state: usize,
    remaining: usize,
    y: &mut Vec<LabelId>,
    s: &mut Vec<usize>,
    out: &mut Vec<AlignmentPath>,
) {
    if remaining == 0 {
        if g.states[state].is_final {
            out.push(AlignmentPath {
                y: y.clone(),
                s: s.clone(),
            });
        }
        return;
    }
    let st = &g.states[state];
    if let Some(le) = st.looping {
        y.push(le.label);
        s.push(st.pos);
        dfs(g, state, remaining - 1, y, s, out);
        y.pop();
        s.pop();
    }
    for (i, cand) in g.states.iter().enumerate() {
        if let Some(e) = cand.entry {
            if g.arcs_into[i].contains(&state) {
                y.push(e.label);
                s.push(cand.pos);
                dfs(g, i, remaining - 1, y, s, out);
                y.pop();
                s.pop();
            }
        }
    }
}

/// Collapse an alignment path back to the label sequence it realizes: one
/// label per forward transition; loops, blanks and silence drop out.
pub fn collapse_alignment(
    path: &AlignmentPath,
    _topology: Topology,
) -> Result<Vec<LabelId>, TopologyError> {
    if path.y.len() != path.s.len() {
        return Err(TopologyError::MalformedPath(
            "y and s have different lengths".into(),
        ));
    }
    let mut prev = 0usize;
    let mut labels = Vec::new();
    for (u, (&label, &pos)) in path.y.iter().zip(path.s.iter()).enumerate() {
        if pos == prev + 1 {
            labels.push(label);
        } else if pos != prev {
            return Err(TopologyError::MalformedPath(format!(
                "transition sequence jumps from {prev} to {pos} at step {u}"
            )));
        }
        prev = pos;
    }
    Ok(labels)
}
