//! Word-level back-off n-gram language model: ARPA parsing, stateful
//! scoring and unigram-max look-ahead over the prefix tree.
//!
//! ARPA stores log10 probabilities; scores returned to callers are natural
//! logs. Scoring follows the standard Katz back-off recursion: use the full
//! n-gram when present, otherwise add the history's back-off weight and
//! recurse on the shortened history.

use std::collections::HashMap;

use thiserror::Error;

use crate::lexicon::PrefixTree;

pub const SENTENCE_BEGIN: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN_WORD: &str = "<unk>";

const LN_10: f64 = std::f64::consts::LN_10;

/// Id in the LM's own symbol table.
pub type LmWordId = u32;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("\\data\\ declares {declared} {order}-grams but {found} were parsed")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("word {0:?} is missing from the LM and no {UNKNOWN_WORD} entry exists")]
    MissingWord(String),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    log10_prob: f64,
    log10_backoff: f64,
}

/// Truncated word history used as a recombination key during search.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LmState(Vec<LmWordId>);

impl LmState {
    pub fn empty() -> LmState {
        LmState(Vec::new())
    }

    pub fn words(&self) -> &[LmWordId] {
        &self.0
    }
}

/// Back-off n-gram model over words.
#[derive(Debug, Clone)]
pub struct NGramLM {
    order: usize,
    symbols: Vec<String>,
    index: HashMap<String, LmWordId>,
    grams: Vec<HashMap<Vec<LmWordId>, Entry>>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_entries(&self, order: usize) -> usize {
        self.grams.get(order - 1).map(|g| g.len()).unwrap_or(0)
    }

    pub fn word_id(&self, word: &str) -> Option<LmWordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: LmWordId) -> &str {
        &self.symbols[id as usize]
    }

    pub fn has_unknown(&self) -> bool {
        self.index.contains_key(UNKNOWN_WORD)
    }

    /// Initial state: the sentence-begin context when the LM has one.
    pub fn initial_state(&self) -> LmState {
        match self.word_id(SENTENCE_BEGIN) {
            Some(id) if self.order > 1 => LmState(vec![id]),
            _ => LmState::empty(),
        }
    }

    fn backoff_weight(&self, history: &[LmWordId]) -> f64 {
        if history.is_empty() {
            return 0.0;
        }
        self.grams[history.len() - 1]
            .get(history)
            .map(|e| e.log10_backoff)
            .unwrap_or(0.0)
    }

    /// Katz back-off score in log10, for a word already mapped to an id.
    fn score_log10(&self, history: &[LmWordId], word: LmWordId) -> f64 {
        let mut hist = history;
        // never condition on more than order-1 words
        if hist.len() > self.order - 1 {
            hist = &hist[hist.len() - (self.order - 1)..];
        }
        loop {
            let mut key = Vec::with_capacity(hist.len() + 1);
            key.extend_from_slice(hist);
            key.push(word);
            if let Some(e) = self.grams[key.len() - 1].get(&key) {
                // accumulate backoffs of every skipped longer history
                let mut skipped = history;
                if skipped.len() > self.order - 1 {
                    skipped = &skipped[skipped.len() - (self.order - 1)..];
                }
                let mut total = e.log10_prob;
                let mut h = skipped;
                while h.len() > hist.len() {
                    total += self.backoff_weight(h);
                    h = &h[1..];
                }
                return total;
            }
            if hist.is_empty() {
                // no unigram for this word at all
                return f64::NEG_INFINITY;
            }
            hist = &hist[1..];
        }
    }

    /// Score `word` after `state`, returning the natural-log probability and
    /// the successor state. Unknown words map to `<unk>`; with no `<unk>`
    /// entry the score is log-zero and the state is left unchanged.
    pub fn score(&self, state: &LmState, word: &str) -> (f64, LmState) {
        let Some(id) = self.word_id(word).or_else(|| self.word_id(UNKNOWN_WORD)) else {
            return (f64::NEG_INFINITY, state.clone());
        };
        self.score_id(state, id)
    }

    /// Like [`NGramLM::score`] for a word already mapped into the symbol
    /// table.
    pub fn score_id(&self, state: &LmState, word: LmWordId) -> (f64, LmState) {
        let lp = self.score_log10(&state.0, word) * LN_10;
        let mut next = state.0.clone();
        next.push(word);
        if next.len() > self.order.saturating_sub(1) {
            let cut = next.len() - (self.order - 1).max(0);
            next.drain(..cut);
        }
        (lp, LmState(next))
    }

    /// Natural-log unigram probability used by the look-ahead tables.
    pub fn unigram(&self, word: &str) -> Option<f64> {
        let id = self.word_id(word)?;
        self.grams[0].get(&vec![id]).map(|e| e.log10_prob * LN_10)
    }
}

/// Parse the ARPA text format (orders 1 through 4 are exercised here; any
/// order parses).
pub fn parse_arpa(text: &str) -> Result<NGramLM, LmError> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Data,
        Grams(usize),
        End,
    }
    let mut section = Section::Preamble;
    let mut declared: Vec<(usize, usize)> = Vec::new();
    let mut symbols: Vec<String> = Vec::new();
    let mut index: HashMap<String, LmWordId> = HashMap::new();
    let mut grams: Vec<HashMap<Vec<LmWordId>, Entry>> = Vec::new();

    let intern = |symbols: &mut Vec<String>,
                  index: &mut HashMap<String, LmWordId>,
                  w: &str|
     -> LmWordId {
        if let Some(&id) = index.get(w) {
            return id;
        }
        let id = symbols.len() as LmWordId;
        symbols.push(w.to_string());
        index.insert(w.to_string(), id);
        id
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed == "\\data\\" {
            section = Section::Data;
            continue;
        }
        if trimmed == "\\end\\" {
            section = Section::End;
            continue;
        }
        if trimmed.starts_with('\\') {
            let inner = trimmed.trim_matches('\\');
            if let Some(n) = inner.strip_suffix("-grams:") {
                let order: usize = n.parse().map_err(|_| LmError::Format {
                    line,
                    reason: format!("bad section header {trimmed:?}"),
                })?;
                if order == 0 || order > declared.len() {
                    return Err(LmError::Format {
                        line,
                        reason: format!("section {trimmed:?} not declared in \\data\\"),
                    });
                }
                section = Section::Grams(order);
                continue;
            }
            return Err(LmError::Format {
                line,
                reason: format!("unknown section {trimmed:?}"),
            });
        }
        match section {
            Section::Preamble => {
                // ignore comments before \data\
            }
            Section::Data => {
                let rest = trimmed.strip_prefix("ngram ").ok_or(LmError::Format {
                    line,
                    reason: format!("expected ngram N=count, got {trimmed:?}"),
                })?;
                let (n, count) = rest.split_once('=').ok_or(LmError::Format {
                    line,
                    reason: format!("expected ngram N=count, got {trimmed:?}"),
                })?;
                let n: usize = n.trim().parse().map_err(|_| LmError::Format {
                    line,
                    reason: format!("bad order {n:?}"),
                })?;
                let count: usize = count.trim().parse().map_err(|_| LmError::Format {
                    line,
                    reason: format!("bad count {count:?}"),
                })?;
                declared.push((n, count));
                if grams.len() < n {
                    grams.resize_with(n, HashMap::new);
                }
            }
            Section::Grams(order) => {
                let fields: Vec<&str> = trimmed.split_whitespace().collect();
                if fields.len() != order + 1 && fields.len() != order + 2 {
                    return Err(LmError::Format {
                        line,
                        reason: format!(
                            "expected {} or {} fields for a {order}-gram, got {}",
                            order + 1,
                            order + 2,
                            fields.len()
                        ),
                    });
                }
                let log10_prob: f64 = fields[0].parse().map_err(|_| LmError::Format {
                    line,
                    reason: format!("non-numeric probability {:?}", fields[0]),
                })?;
                let log10_backoff: f64 = if fields.len() == order + 2 {
                    fields[order + 1].parse().map_err(|_| LmError::Format {
                        line,
                        reason: format!("non-numeric backoff {:?}", fields[order + 1]),
                    })?
                } else {
                    0.0
                };
                let key: Vec<LmWordId> = fields[1..=order]
                    .iter()
                    .map(|w| intern(&mut symbols, &mut index, w))
                    .collect();
                grams[order - 1].insert(
                    key,
                    Entry {
                        log10_prob,
                        log10_backoff,
                    },
                );
            }
            Section::End => {
                return Err(LmError::Format {
                    line,
                    reason: "content after \\end\\".into(),
                });
            }
        }
    }

    if declared.is_empty() {
        return Err(LmError::Format {
            line: text.lines().count(),
            reason: "missing \\data\\ section".into(),
        });
    }
    for &(order, count) in &declared {
        let found = grams.get(order - 1).map(|g| g.len()).unwrap_or(0);
        if found != count {
            return Err(LmError::CountMismatch {
                order,
                declared: count,
                found,
            });
        }
    }
    let order = grams.len();
    Ok(NGramLM {
        order,
        symbols,
        index,
        grams,
    })
}

/// Per-node anticipated LM scores over a prefix tree: each node carries the
/// max natural-log unigram probability of any word reachable below it
/// (including words ending on the arc into the node). The search adds the
/// anticipated score while inside a word and swaps it for the true
/// conditional score when the word identity resolves.
pub fn build_lookahead(lm: &NGramLM, tree: &PrefixTree) -> Result<Vec<f64>, LmError> {
    let unk = lm.unigram(UNKNOWN_WORD);
    let mut scores = vec![f64::NEG_INFINITY; tree.num_nodes()];
    // nodes are created parent-first, so a reverse sweep is a post-order
    for node in (0..tree.num_nodes()).rev() {
        let mut best = f64::NEG_INFINITY;
        for &w in tree.node_words(node) {
            let word = tree.word(w);
            let uni = match lm.unigram(word).or(unk) {
                Some(u) => u,
                None => return Err(LmError::MissingWord(word.to_string())),
            };
            best = best.max(uni);
        }
        for (_, child) in tree.arcs(node) {
            best = best.max(scores[child]);
        }
        scores[node] = best;
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Augmentation, LabelVocabulary, Lexicon};
    use crate::topology::Topology;

    const HAND_BIGRAM: &str = "\
\\data\\
ngram 1=5
ngram 2=5

\\1-grams:
-0.7\t<s>\t-0.3
-0.9\t</s>
-0.5\ta\t-0.2
-0.8\tb\t-0.1
-1.0\tc\t0.0

\\2-grams:
-0.2\t<s> a
-0.4\ta b
-0.3\tb </s>
-0.6\ta a
-0.5\tb c
\\end\\
";

    fn sentence_log10(lm: &NGramLM, words: &[&str]) -> f64 {
        let mut state = lm.initial_state();
        let mut total = 0.0;
        for w in words.iter().chain(std::iter::once(&SENTENCE_END)) {
            let (lp, next) = lm.score(&state, w);
            total += lp;
            state = next;
        }
        total / LN_10
    }

    #[test]
    fn parse_minimal_unigram_lm() {
        let text = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.3\ta\n-0.5\tb\n\\end\\\n";
        let lm = parse_arpa(text).unwrap();
        assert_eq!(lm.order(), 1);
        assert_eq!(lm.num_entries(1), 2);
        // order-1: score equals the stored unigram from any state
        let (lp, state) = lm.score(&LmState::empty(), "a");
        assert!((lp - (-0.3 * LN_10)).abs() < 1e-12);
        let (lp2, _) = lm.score(&state, "a");
        assert_eq!(lp, lp2);
        assert!(state.words().is_empty());
    }

    #[test]
    fn parse_detects_count_mismatch() {
        let text = "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\ta\n-0.5\tb\n\\end\\\n";
        assert!(matches!(
            parse_arpa(text),
            Err(LmError::CountMismatch { order: 1, declared: 3, found: 2 })
        ));
    }

    #[test]
    fn parse_rejects_bad_sections_and_values() {
        assert!(parse_arpa("\\data\\\nngram 1=0\n\\bogus\\\n\\end\\\n").is_err());
        assert!(parse_arpa("\\data\\\nngram 1=1\n\\1-grams:\nxx\ta\n\\end\\\n").is_err());
        assert!(parse_arpa("just text\n").is_err());
    }

    #[test]
    fn bigram_direct_hit_uses_stored_value() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let state = lm.initial_state();
        let (lp, next) = lm.score(&state, "a");
        assert!((lp - (-0.2 * LN_10)).abs() < 1e-12);
        assert_eq!(next.words(), &[lm.word_id("a").unwrap()]);
    }

    #[test]
    fn bigram_backoff_sums_weight_and_unigram() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        // (a, c) is absent: backoff(a) + uni(c) = -0.2 + -1.0
        let state = LmState(vec![lm.word_id("a").unwrap()]);
        let (lp, _) = lm.score(&state, "c");
        assert!((lp - (-1.2 * LN_10)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_sentence_scores() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let cases: &[(&[&str], f64)] = &[
            (&["a", "b"], -0.9),
            (&["a", "a"], -1.9),
            (&["b"], -1.4),
            (&["c"], -2.2),
            (&["b", "c", "a"], -3.2),
        ];
        for (words, want) in cases {
            let got = sentence_log10(&lm, words);
            assert!(
                (got - want).abs() < 1e-10,
                "sentence {words:?}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn oov_without_unk_scores_log_zero() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let (lp, state) = lm.score(&lm.initial_state(), "zzz");
        assert_eq!(lp, f64::NEG_INFINITY);
        assert_eq!(state, lm.initial_state());
    }

    #[test]
    fn trigram_double_backoff() {
        let text = "\\data\\\nngram 1=3\nngram 2=2\nngram 3=1\n\n\
\\1-grams:\n-0.5\ta\t-0.3\n-0.6\tb\t-0.2\n-0.5\tc\n\n\
\\2-grams:\n-0.4\ta b\t-0.1\n-0.7\tb a\n\n\
\\3-grams:\n-0.3\ta b a\n\\end\\\n";
        let lm = parse_arpa(text).unwrap();
        assert_eq!(lm.order(), 3);
        let state = LmState(vec![lm.word_id("a").unwrap(), lm.word_id("b").unwrap()]);
        // direct trigram hit
        let (lp, next) = lm.score(&state, "a");
        assert!((lp - (-0.3 * LN_10)).abs() < 1e-12);
        assert_eq!(next.words().len(), 2);
        // (a b c) absent and (b c) absent: bo(a b) + bo(b) + uni(c)
        let (lp, _) = lm.score(&state, "c");
        assert!((lp - ((-0.1 - 0.2 - 0.5) * LN_10)).abs() < 1e-12);
        // (a b b) absent but (b b) also absent: bo(a b) + bo(b) + uni(b)
        let (lp, _) = lm.score(&state, "b");
        assert!((lp - ((-0.1 - 0.2 - 0.6) * LN_10)).abs() < 1e-12);
    }

    #[test]
    fn four_gram_parses_and_scores() {
        let text = "\\data\\\nngram 1=2\nngram 2=1\nngram 3=1\nngram 4=1\n\n\
\\1-grams:\n-0.4\tx\t-0.1\n-0.6\ty\t-0.1\n\n\\2-grams:\n-0.3\tx y\t-0.1\n\n\
\\3-grams:\n-0.2\tx y x\t-0.1\n\n\\4-grams:\n-0.1\tx y x y\n\\end\\\n";
        let lm = parse_arpa(text).unwrap();
        assert_eq!(lm.order(), 4);
        let mut state = LmState::empty();
        let mut total = 0.0;
        for w in ["x", "y", "x", "y"] {
            let (lp, next) = lm.score(&state, w);
            total += lp;
            state = next;
            assert!(state.words().len() <= 3);
        }
        // p(x) p(y|x) p(x|x y) p(y|x y x): all stored entries
        assert!((total - ((-0.4 - 0.3 - 0.2 - 0.1) * LN_10)).abs() < 1e-12);
    }

    #[test]
    fn state_truncates_to_order_minus_one() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let mut state = lm.initial_state();
        for w in ["a", "b", "c"] {
            state = lm.score(&state, w).1;
            assert!(state.words().len() <= 1);
        }
        assert_eq!(state.words(), &[lm.word_id("c").unwrap()]);
    }

    fn tree_for(words: &[(&str, &str)]) -> (PrefixTree, LabelVocabulary) {
        let text: String = words
            .iter()
            .map(|(w, p)| format!("{w}\t{p}\n"))
            .collect();
        let lex = Lexicon::parse(&text)
            .unwrap()
            .augmented(Augmentation::Eow)
            .unwrap();
        let vocab = LabelVocabulary::build(&lex, Topology::Rna, Augmentation::Eow);
        let tree = PrefixTree::build(&lex, &vocab).unwrap();
        (tree, vocab)
    }

    #[test]
    fn lookahead_single_word() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let (tree, _) = tree_for(&[("a", "x y")]);
        let la = build_lookahead(&lm, &tree).unwrap();
        let want = lm.unigram("a").unwrap();
        assert!(la.iter().all(|&v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn lookahead_takes_max_on_shared_prefix() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let (tree, _) = tree_for(&[("a", "x y"), ("b", "x z")]);
        let la = build_lookahead(&lm, &tree).unwrap();
        // shared "x" node anticipates the better unigram (-0.5 for "a")
        let (_, shared) = tree.arcs(PrefixTree::ROOT).next().unwrap();
        assert!((la[shared] - lm.unigram("a").unwrap()).abs() < 1e-12);
        assert!((la[PrefixTree::ROOT] - lm.unigram("a").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lookahead_missing_word_errors() {
        let lm = parse_arpa(HAND_BIGRAM).unwrap();
        let (tree, _) = tree_for(&[("nosuchword", "x")]);
        assert!(matches!(
            build_lookahead(&lm, &tree),
            Err(LmError::MissingWord(_))
        ));
    }

    #[test]
    fn lookahead_is_admissible_and_telescopes() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            // random small tree over the hand LM's words
            let mut entries = Vec::new();
            for w in ["a", "b", "c"] {
                let len = rng.gen_range(1..=3);
                let pron: Vec<String> =
                    (0..len).map(|_| format!("p{}", rng.gen_range(0..3))).collect();
                entries.push((w, pron.join(" ")));
            }
            let borrowed: Vec<(&str, &str)> =
                entries.iter().map(|(w, p)| (*w, p.as_str())).collect();
            let (tree, _) = tree_for(&borrowed);
            let lm = parse_arpa(HAND_BIGRAM).unwrap();
            let la = build_lookahead(&lm, &tree).unwrap();

            for (word_id, path) in tree.word_paths() {
                let word = tree.word(word_id);
                let uni = lm.unigram(word).unwrap();
                // admissibility along the path
                let mut node = PrefixTree::ROOT;
                let mut anticipated = la[node];
                assert!(anticipated >= uni - 1e-12);
                let mut delta_sum = 0.0;
                for label in path {
                    let next = tree
                        .arcs(node)
                        .find(|&(l, _)| l == label)
                        .map(|(_, n)| n)
                        .unwrap();
                    delta_sum += la[next] - la[node];
                    anticipated = la[next];
                    assert!(anticipated >= uni - 1e-12);
                    node = next;
                }
                // anticipated deltas plus the word-end correction telescope
                // to exactly the true score
                let (true_score, _) = lm.score(&LmState::empty(), word);
                let total = la[PrefixTree::ROOT] + delta_sum + (true_score - la[node]);
                assert!((total - true_score).abs() < 1e-12);
            }
        }
    }
}
