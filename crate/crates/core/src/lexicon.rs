//! Pronunciation lexicons, word-boundary label augmentation, the label
//! vocabulary and the lexical prefix tree.
//!
//! Word-end (EOW) augmentation turns every phoneme that closes a word into a
//! class of its own; start-of-word (SOW) augmentation does the same for
//! word-initial phonemes. Both are applied to speech phonemes only, never to
//! blank or silence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::topology::Topology;

/// Dense integer id of a vocabulary label.
pub type LabelId = u32;
/// Index of a word in a [`PrefixTree`]'s word table.
pub type WordId = u32;
/// Index of a node in a [`PrefixTree`]'s arena.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: empty pronunciation for word {word:?}")]
    EmptyPronunciation { line: usize, word: String },
    #[error("line {line}: malformed lexicon entry: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("lexicon is already augmented ({0:?})")]
    AlreadyAugmented(Augmentation),
    #[error("pronunciation label {0:?} missing from vocabulary")]
    UnknownLabel(String),
}

/// How the phoneme inventory is split by word-boundary position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augmentation {
    #[default]
    None,
    /// Word-final phonemes become distinct classes (2x inventory).
    Eow,
    /// Word-initial and word-final phonemes become distinct classes
    /// (4x inventory; single-phoneme words carry both flags at once).
    SowEow,
}

impl Augmentation {
    /// Speech-label classes per base phoneme under this mode.
    pub fn factor(self) -> usize {
        match self {
            Augmentation::None => 1,
            Augmentation::Eow => 2,
            Augmentation::SowEow => 4,
        }
    }
}

/// A speech phoneme, possibly carrying word-boundary flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phoneme {
    base: String,
    eow: bool,
    sow: bool,
}

impl Phoneme {
    pub fn new(base: impl Into<String>) -> Phoneme {
        let base = base.into();
        assert!(!base.is_empty(), "phoneme base name must be non-empty");
        Phoneme {
            base,
            eow: false,
            sow: false,
        }
    }

    pub fn with_flags(base: impl Into<String>, eow: bool, sow: bool) -> Phoneme {
        let mut p = Phoneme::new(base);
        p.eow = eow;
        p.sow = sow;
        p
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn eow(&self) -> bool {
        self.eow
    }

    pub fn sow(&self) -> bool {
        self.sow
    }

    /// The same phoneme with all boundary flags cleared.
    pub fn plain(&self) -> Phoneme {
        Phoneme::new(self.base.clone())
    }
}

impl std::fmt::Display for Phoneme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.base)?;
        if self.sow {
            write!(f, "#sow")?;
        }
        if self.eow {
            write!(f, "#eow")?;
        }
        Ok(())
    }
}

/// A vocabulary entry: a speech phoneme or the topology's special label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Speech(Phoneme),
    /// Non-emitting filler of the RNA topology.
    Blank,
    /// Loopable non-speech label of the HMM topology.
    Silence,
}

impl Label {
    pub fn is_special(&self) -> bool {
        !matches!(self, Label::Speech(_))
    }

    pub fn as_phoneme(&self) -> Option<&Phoneme> {
        match self {
            Label::Speech(p) => Some(p),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Speech(p) => write!(f, "{p}"),
            Label::Blank => write!(f, "<b>"),
            Label::Silence => write!(f, "[SIL]"),
        }
    }
}

/// A pronunciation: a non-empty phoneme sequence.
pub type Pronunciation = Vec<Phoneme>;

/// Word-to-pronunciation multimap parsed from a lexicon file.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Pronunciation>>,
    augmentation: Augmentation,
}

impl Lexicon {
    /// Parse the text lexicon format: one `WORD<TAB>phon1 phon2 ...` entry per
    /// line, `#`-prefixed comment lines, repeated words adding variants.
    /// Duplicate (word, pronunciation) pairs collapse to one variant.
    pub fn parse(text: &str) -> Result<Lexicon, LexiconError> {
        let mut entries: BTreeMap<String, Vec<Pronunciation>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.starts_with('#') || raw.trim().is_empty() {
                continue;
            }
            let (word, phones) = raw.split_once('\t').ok_or_else(|| LexiconError::Malformed {
                line,
                reason: "expected WORD<TAB>phonemes".into(),
            })?;
            if word.is_empty() {
                return Err(LexiconError::Malformed {
                    line,
                    reason: "empty word".into(),
                });
            }
            let pron: Pronunciation = phones
                .split_whitespace()
                .map(Phoneme::new)
                .collect();
            if pron.is_empty() {
                return Err(LexiconError::EmptyPronunciation {
                    line,
                    word: word.to_string(),
                });
            }
            let variants = entries.entry(word.to_string()).or_default();
            if !variants.contains(&pron) {
                variants.push(pron);
            }
        }
        Ok(Lexicon {
            entries,
            augmentation: Augmentation::None,
        })
    }

    pub fn augmentation(&self) -> Augmentation {
        self.augmentation
    }

    pub fn num_words(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn pronunciations(&self, word: &str) -> &[Pronunciation] {
        self.entries.get(word).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Pronunciation])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// The set of base phoneme names appearing in any pronunciation.
    pub fn base_inventory(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for prons in self.entries.values() {
            for pron in prons {
                for p in pron {
                    set.insert(p.base.clone());
                }
            }
        }
        set
    }

    /// Rewrite every pronunciation with the boundary flags of `mode`.
    ///
    /// Augmenting twice is a state error; `Augmentation::None` on an
    /// unaugmented lexicon is the identity.
    pub fn augmented(&self, mode: Augmentation) -> Result<Lexicon, LexiconError> {
        if self.augmentation != Augmentation::None {
            return Err(LexiconError::AlreadyAugmented(self.augmentation));
        }
        let mut entries = BTreeMap::new();
        for (word, prons) in &self.entries {
            let mut variants = Vec::with_capacity(prons.len());
            for pron in prons {
                let last = pron.len() - 1;
                let rewritten: Pronunciation = pron
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let eow = i == last && mode != Augmentation::None;
                        let sow = i == 0 && mode == Augmentation::SowEow;
                        Phoneme::with_flags(p.base.clone(), eow, sow)
                    })
                    .collect();
                variants.push(rewritten);
            }
            entries.insert(word.clone(), variants);
        }
        Ok(Lexicon {
            entries,
            augmentation: mode,
        })
    }
}

/// The closed, densely indexed output alphabet of the scorer.
///
/// Ids run 0..V-1, sorted by (base name, eow, sow) with the single special
/// label (blank or silence, by topology) last. All flag variants permitted by
/// the augmentation mode exist for every base phoneme, whether or not a
/// lexicon position realizes them, so the vocabulary size depends only on the
/// inventory and the mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocabulary {
    labels: Vec<Label>,
    index: HashMap<Label, LabelId>,
    topology: Topology,
    augmentation: Augmentation,
}

impl LabelVocabulary {
    pub fn build(lex: &Lexicon, topology: Topology, mode: Augmentation) -> LabelVocabulary {
        let mut labels: Vec<Label> = Vec::new();
        for base in lex.base_inventory() {
            labels.push(Label::Speech(Phoneme::new(base.clone())));
            match mode {
                Augmentation::None => {}
                Augmentation::Eow => {
                    labels.push(Label::Speech(Phoneme::with_flags(base.clone(), true, false)));
                }
                Augmentation::SowEow => {
                    labels.push(Label::Speech(Phoneme::with_flags(base.clone(), true, false)));
                    labels.push(Label::Speech(Phoneme::with_flags(base.clone(), false, true)));
                    labels.push(Label::Speech(Phoneme::with_flags(base.clone(), true, true)));
                }
            }
        }
        labels.sort();
        labels.push(match topology {
            Topology::Rna => Label::Blank,
            Topology::Hmm => Label::Silence,
        });
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as LabelId))
            .collect();
        LabelVocabulary {
            labels,
            index,
            topology,
            augmentation: mode,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn speech_len(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn augmentation(&self) -> Augmentation {
        self.augmentation
    }

    pub fn id(&self, label: &Label) -> Option<LabelId> {
        self.index.get(label).copied()
    }

    pub fn phoneme_id(&self, p: &Phoneme) -> Option<LabelId> {
        self.index.get(&Label::Speech(p.clone())).copied()
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id as usize]
    }

    /// The blank (RNA) or silence (HMM) id; always the last id.
    pub fn special_id(&self) -> LabelId {
        (self.labels.len() - 1) as LabelId
    }

    pub fn blank_id(&self) -> Option<LabelId> {
        (self.topology == Topology::Rna).then(|| self.special_id())
    }

    pub fn silence_id(&self) -> Option<LabelId> {
        (self.topology == Topology::Hmm).then(|| self.special_id())
    }

    pub fn is_special(&self, id: LabelId) -> bool {
        id == self.special_id()
    }

    /// True when the label closes a word (EOW-flagged speech label).
    pub fn is_word_end(&self, id: LabelId) -> bool {
        self.labels[id as usize]
            .as_phoneme()
            .map(|p| p.eow)
            .unwrap_or(false)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }
}

/// Trie over pronunciations; word identities live on the arc closing each
/// pronunciation (identified by its target node), shared by homophones.
#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<TreeNode>,
    words: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    arcs: BTreeMap<LabelId, NodeId>,
    in_label: Option<LabelId>,
    words: Vec<WordId>,
}

impl PrefixTree {
    pub const ROOT: NodeId = 0;

    /// Build the tree over `lex`, resolving every phoneme through `vocab`.
    pub fn build(lex: &Lexicon, vocab: &LabelVocabulary) -> Result<PrefixTree, LexiconError> {
        let mut nodes = vec![TreeNode {
            arcs: BTreeMap::new(),
            in_label: None,
            words: Vec::new(),
        }];
        let mut words = Vec::new();
        for (word, prons) in lex.entries() {
            let word_id = words.len() as WordId;
            words.push(word.to_string());
            for pron in prons {
                let mut node = Self::ROOT;
                for p in pron {
                    let id = vocab
                        .phoneme_id(p)
                        .ok_or_else(|| LexiconError::UnknownLabel(p.to_string()))?;
                    node = match nodes[node].arcs.get(&id) {
                        Some(&next) => next,
                        None => {
                            let next = nodes.len();
                            nodes.push(TreeNode {
                                arcs: BTreeMap::new(),
                                in_label: Some(id),
                                words: Vec::new(),
                            });
                            nodes[node].arcs.insert(id, next);
                            next
                        }
                    };
                }
                if !nodes[node].words.contains(&word_id) {
                    nodes[node].words.push(word_id);
                }
            }
        }
        Ok(PrefixTree { nodes, words })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn arcs(&self, node: NodeId) -> impl Iterator<Item = (LabelId, NodeId)> + '_ {
        self.nodes[node].arcs.iter().map(|(&l, &n)| (l, n))
    }

    pub fn has_arcs(&self, node: NodeId) -> bool {
        !self.nodes[node].arcs.is_empty()
    }

    /// Label on the arc entering `node` (None for the root).
    pub fn in_label(&self, node: NodeId) -> Option<LabelId> {
        self.nodes[node].in_label
    }

    /// Words whose pronunciation ends on the arc into `node`.
    pub fn node_words(&self, node: NodeId) -> &[WordId] {
        &self.nodes[node].words
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn word_names(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| i as WordId)
    }

    /// Every (word, pronunciation-label-path) pair reachable in the tree.
    pub fn word_paths(&self) -> Vec<(WordId, Vec<LabelId>)> {
        let mut out = Vec::new();
        let mut stack: Vec<(NodeId, Vec<LabelId>)> = vec![(Self::ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            for &w in &self.nodes[node].words {
                out.push((w, path.clone()));
            }
            for (&label, &next) in self.nodes[node].arcs.iter().rev() {
                let mut p = path.clone();
                p.push(label);
                stack.push((next, p));
            }
        }
        out.sort();
        out
    }
}
