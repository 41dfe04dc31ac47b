//! Ingestion of external frame alignments and derivation of frame-wise
//! training targets and chunks.
//!
//! Alignment files carry one segment per line:
//! `UTT_ID LABEL BEGIN END WORD_END{0|1}` with inclusive frame indices and
//! the reserved label `[SIL]` for silence. Segments of one utterance must
//! tile `0..T-1` without gaps or overlaps. Peaky (e.g. CTC-derived)
//! alignments are just the special case of very short segments.

use std::collections::HashMap;

use thiserror::Error;

use crate::lexicon::{LabelId, LabelVocabulary, Phoneme};
use crate::topology::Topology;

pub const SILENCE_SYMBOL: &str = "[SIL]";

#[derive(Debug, Error)]
pub enum AlignmentIoError {
    #[error("line {line}: malformed alignment entry: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("utterance {utt}: segment at frame {frame} {kind} the previous segment")]
    BadSegmentation {
        utt: String,
        frame: usize,
        kind: &'static str,
    },
    #[error("utterance {utt}: unknown phoneme {label:?}")]
    UnknownPhoneme { utt: String, label: String },
    #[error("chunk size must be even, got {0}")]
    OddChunkSize(usize),
    #[error("feature frame count {features} does not match target length {targets}")]
    LengthMismatch { features: usize, targets: usize },
    #[error("line {line}: malformed feature entry: {reason}")]
    MalformedFeature { line: usize, reason: String },
}

/// One aligned segment: a phoneme (or silence) spanning inclusive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub begin: usize,
    pub end: usize,
    pub word_end: bool,
}

impl Segment {
    pub fn is_silence(&self) -> bool {
        self.label == SILENCE_SYMBOL
    }

    pub fn len(&self) -> usize {
        self.end - self.begin + 1
    }
}

/// A full frame alignment of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlignment {
    pub utt_id: String,
    pub segments: Vec<Segment>,
}

impl FrameAlignment {
    /// Validates contiguous, non-overlapping coverage starting at frame 0.
    pub fn new(utt_id: String, segments: Vec<Segment>) -> Result<FrameAlignment, AlignmentIoError> {
        let mut expected = 0usize;
        for seg in &segments {
            if seg.begin > seg.end {
                return Err(AlignmentIoError::BadSegmentation {
                    utt: utt_id,
                    frame: seg.begin,
                    kind: "inverts",
                });
            }
            if seg.begin > expected {
                return Err(AlignmentIoError::BadSegmentation {
                    utt: utt_id,
                    frame: seg.begin,
                    kind: "leaves a gap after",
                });
            }
            if seg.begin < expected {
                return Err(AlignmentIoError::BadSegmentation {
                    utt: utt_id,
                    frame: seg.begin,
                    kind: "overlaps",
                });
            }
            expected = seg.end + 1;
        }
        Ok(FrameAlignment { utt_id, segments })
    }

    /// Total frame count.
    pub fn frames(&self) -> usize {
        self.segments.last().map(|s| s.end + 1).unwrap_or(0)
    }
}

/// Parse an alignment file; utterances appear in order of first mention.
pub fn parse_alignment_file(text: &str) -> Result<Vec<FrameAlignment>, AlignmentIoError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_utt: HashMap<String, Vec<Segment>> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(AlignmentIoError::Malformed {
                line,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let begin: usize = fields[2].parse().map_err(|_| AlignmentIoError::Malformed {
            line,
            reason: format!("bad begin frame {:?}", fields[2]),
        })?;
        let end: usize = fields[3].parse().map_err(|_| AlignmentIoError::Malformed {
            line,
            reason: format!("bad end frame {:?}", fields[3]),
        })?;
        let word_end = match fields[4] {
            "0" => false,
            "1" => true,
            other => {
                return Err(AlignmentIoError::Malformed {
                    line,
                    reason: format!("bad word-end flag {other:?}"),
                })
            }
        };
        if !by_utt.contains_key(fields[0]) {
            order.push(fields[0].to_string());
        }
        by_utt.entry(fields[0].to_string()).or_default().push(Segment {
            label: fields[1].to_string(),
            begin,
            end,
            word_end,
        });
    }
    order
        .into_iter()
        .map(|utt| {
            let segments = by_utt.remove(&utt).unwrap();
            FrameAlignment::new(utt, segments)
        })
        .collect()
}

/// Within-segment frame chosen as the emission position u_s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmitPosition {
    SegBegin,
    SegMid,
    #[default]
    SegEnd,
}

impl EmitPosition {
    fn pick(self, begin: usize, end: usize) -> usize {
        match self {
            EmitPosition::SegBegin => begin,
            EmitPosition::SegMid => (begin + end) / 2,
            EmitPosition::SegEnd => end,
        }
    }
}

/// How a frame relates to the alignment path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    /// The frame emits its label (a forward transition).
    Emit,
    /// RNA filler frame.
    Blank,
    /// HMM self-loop frame.
    Loop,
}

/// Supervision for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTarget {
    pub label: LabelId,
    pub kind: TransitionKind,
    pub weight: f64,
    /// Frame-level phoneme class for the auxiliary encoder loss (the HMM-style
    /// label of the segment owning this frame; silence maps to the special
    /// label of the active vocabulary).
    pub aux_label: LabelId,
}

/// Per-frame supervision derived from one utterance's alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub topology: Topology,
    pub frames: Vec<FrameTarget>,
}

impl FrameTargets {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Labels recovered by dropping blanks/loops, in order.
    pub fn collapse(&self) -> Vec<LabelId> {
        self.frames
            .iter()
            .filter(|f| f.kind == TransitionKind::Emit)
            .map(|f| f.label)
            .collect()
    }
}

/// Derive frame targets for `al` under the vocabulary's topology and
/// augmentation. `boost` multiplies the loss weight at emission frames.
pub fn frame_targets(
    al: &FrameAlignment,
    vocab: &LabelVocabulary,
    u_pos: EmitPosition,
    boost: f64,
) -> Result<FrameTargets, AlignmentIoError> {
    let topology = vocab.topology();
    let augment = vocab.augmentation();
    let special = vocab.special_id();
    let mut frames = Vec::with_capacity(al.frames());
    let mut word_start = true;
    for seg in &al.segments {
        if seg.is_silence() {
            match topology {
                Topology::Rna => {
                    for _ in seg.begin..=seg.end {
                        frames.push(FrameTarget {
                            label: special,
                            kind: TransitionKind::Blank,
                            weight: 1.0,
                            aux_label: special,
                        });
                    }
                }
                Topology::Hmm => {
                    for t in seg.begin..=seg.end {
                        let first = t == seg.begin;
                        frames.push(FrameTarget {
                            label: special,
                            kind: if first { TransitionKind::Emit } else { TransitionKind::Loop },
                            weight: if first { boost } else { 1.0 },
                            aux_label: special,
                        });
                    }
                }
            }
            continue;
        }
        let eow = seg.word_end && augment != crate::lexicon::Augmentation::None;
        let sow = word_start && augment == crate::lexicon::Augmentation::SowEow;
        let phoneme = Phoneme::with_flags(seg.label.clone(), eow, sow);
        let label = vocab
            .phoneme_id(&phoneme)
            .ok_or_else(|| AlignmentIoError::UnknownPhoneme {
                utt: al.utt_id.clone(),
                label: phoneme.to_string(),
            })?;
        word_start = seg.word_end;
        match topology {
            Topology::Rna => {
                let emit_at = u_pos.pick(seg.begin, seg.end);
                for t in seg.begin..=seg.end {
                    if t == emit_at {
                        frames.push(FrameTarget {
                            label,
                            kind: TransitionKind::Emit,
                            weight: boost,
                            aux_label: label,
                        });
                    } else {
                        frames.push(FrameTarget {
                            label: special,
                            kind: TransitionKind::Blank,
                            weight: 1.0,
                            aux_label: label,
                        });
                    }
                }
            }
            Topology::Hmm => {
                for t in seg.begin..=seg.end {
                    let first = t == seg.begin;
                    frames.push(FrameTarget {
                        label,
                        kind: if first { TransitionKind::Emit } else { TransitionKind::Loop },
                        weight: if first { boost } else { 1.0 },
                        aux_label: label,
                    });
                }
            }
        }
    }
    Ok(FrameTargets { topology, frames })
}

/// One training sample: a slice of an utterance with its supervision. The
/// context carried into a chunk is always the sentinel (all-zero embedding),
/// regardless of what preceded the chunk in the utterance.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub utt_id: String,
    pub start: usize,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<FrameTarget>,
    pub topology: Topology,
    pub carry_in: Option<LabelId>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Cut one utterance into chunks of `chunk_size` frames starting at
/// multiples of `chunk_size / 2` (50% overlap); the final chunk is the first
/// one whose window reaches the end and may be shorter.
pub fn make_chunks(
    utt_id: &str,
    features: &[Vec<f64>],
    targets: &FrameTargets,
    chunk_size: usize,
) -> Result<Vec<Chunk>, AlignmentIoError> {
    if chunk_size % 2 != 0 || chunk_size == 0 {
        return Err(AlignmentIoError::OddChunkSize(chunk_size));
    }
    if features.len() != targets.len() {
        return Err(AlignmentIoError::LengthMismatch {
            features: features.len(),
            targets: targets.len(),
        });
    }
    let total = targets.len();
    let mut chunks = Vec::new();
    if total == 0 {
        return Ok(chunks);
    }
    let half = chunk_size / 2;
    let mut start = 0usize;
    loop {
        let end = (start + chunk_size).min(total);
        chunks.push(Chunk {
            utt_id: utt_id.to_string(),
            start,
            features: features[start..end].to_vec(),
            targets: targets.frames[start..end].to_vec(),
            topology: targets.topology,
            carry_in: None,
        });
        if start + chunk_size >= total {
            break;
        }
        start += half;
    }
    Ok(chunks)
}

/// Feature matrices keyed by utterance id, in file order.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    utts: Vec<(String, Vec<Vec<f64>>)>,
    index: HashMap<String, usize>,
}

impl FeatureSet {
    pub fn new() -> FeatureSet {
        FeatureSet::default()
    }

    pub fn insert(&mut self, utt_id: String, features: Vec<Vec<f64>>) {
        self.index.insert(utt_id.clone(), self.utts.len());
        self.utts.push((utt_id, features));
    }

    pub fn get(&self, utt_id: &str) -> Option<&[Vec<f64>]> {
        self.index.get(utt_id).map(|&i| self.utts[i].1.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Vec<f64>])> {
        self.utts.iter().map(|(u, f)| (u.as_str(), f.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.utts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utts.is_empty()
    }

    /// Append all utterances of `other`.
    pub fn merge(&mut self, other: FeatureSet) {
        for (utt, feats) in other.utts {
            self.insert(utt, feats);
        }
    }
}

/// Parse the feature text format: repeated `UTT_ID T D` headers, each
/// followed by T lines of D decimal floats.
pub fn parse_feature_file(text: &str) -> Result<FeatureSet, AlignmentIoError> {
    let mut set = FeatureSet::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(AlignmentIoError::MalformedFeature {
                line,
                reason: format!("expected header UTT_ID T D, got {raw:?}"),
            });
        }
        let frames: usize = fields[1].parse().map_err(|_| AlignmentIoError::MalformedFeature {
            line,
            reason: format!("bad frame count {:?}", fields[1]),
        })?;
        let dim: usize = fields[2].parse().map_err(|_| AlignmentIoError::MalformedFeature {
            line,
            reason: format!("bad dimension {:?}", fields[2]),
        })?;
        let mut matrix = Vec::with_capacity(frames);
        for _ in 0..frames {
            let (idx, row) = lines.next().ok_or(AlignmentIoError::MalformedFeature {
                line,
                reason: "unexpected end of file inside feature block".into(),
            })?;
            let values: Result<Vec<f64>, _> =
                row.split_whitespace().map(|v| v.parse::<f64>()).collect();
            let values = values.map_err(|_| AlignmentIoError::MalformedFeature {
                line: idx + 1,
                reason: "non-numeric feature value".into(),
            })?;
            if values.len() != dim {
                return Err(AlignmentIoError::MalformedFeature {
                    line: idx + 1,
                    reason: format!("expected {dim} values, got {}", values.len()),
                });
            }
            matrix.push(values);
        }
        set.insert(fields[0].to_string(), matrix);
    }
    Ok(set)
}

/// Render one utterance's alignment in the text format parsed by
/// [`parse_alignment_file`].
pub fn format_alignment(al: &FrameAlignment) -> String {
    let mut out = String::new();
    for seg in &al.segments {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            al.utt_id,
            seg.label,
            seg.begin,
            seg.end,
            if seg.word_end { 1 } else { 0 }
        ));
    }
    out
}

/// Render a feature set in the text format parsed by [`parse_feature_file`].
pub fn format_features(utt_id: &str, features: &[Vec<f64>]) -> String {
    let dim = features.first().map(|r| r.len()).unwrap_or(0);
    let mut out = format!("{utt_id} {} {dim}\n", features.len());
    for row in features {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Augmentation, LabelVocabulary, Lexicon, Phoneme};

    fn vocab(topology: Topology, augment: Augmentation) -> LabelVocabulary {
        let lex = Lexicon::parse("AB\ta b").unwrap().augmented(augment).unwrap();
        LabelVocabulary::build(&lex, topology, augment)
    }

    #[test]
    fn parse_two_segment_file() {
        let als = parse_alignment_file("u1 a 0 3 0\nu1 b 4 5 1\n").unwrap();
        assert_eq!(als.len(), 1);
        assert_eq!(als[0].frames(), 6);
        assert_eq!(als[0].segments[0].label, "a");
        assert!(!als[0].segments[0].word_end);
        assert!(als[0].segments[1].word_end);
    }

    #[test]
    fn parse_peaky_alignment() {
        // one- and two-frame segments parse like any other
        let text = "u1 a 0 0 0\nu1 [SIL] 1 1 0\nu1 b 2 3 1\n";
        let als = parse_alignment_file(text).unwrap();
        assert_eq!(als[0].segments.len(), 3);
        assert!(als[0].segments[1].is_silence());
    }

    #[test]
    fn parse_detects_overlap_and_gap() {
        let err = parse_alignment_file("u1 a 0 3 0\nu1 b 3 5 1\n").unwrap_err();
        match err {
            AlignmentIoError::BadSegmentation { utt, frame, kind } => {
                assert_eq!(utt, "u1");
                assert_eq!(frame, 3);
                assert_eq!(kind, "overlaps");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_alignment_file("u1 a 0 3 0\nu1 b 5 6 1\n").is_err());
        assert!(parse_alignment_file("u1 a 1 3 0\n").is_err());
    }

    #[test]
    fn rna_targets_seg_end_with_boost() {
        let v = vocab(Topology::Rna, Augmentation::None);
        let al = FrameAlignment::new(
            "u".into(),
            vec![Segment { label: "a".into(), begin: 0, end: 3, word_end: false }],
        )
        .unwrap();
        let t = frame_targets(&al, &v, EmitPosition::SegEnd, 5.0).unwrap();
        let a = v.phoneme_id(&Phoneme::new("a")).unwrap();
        let b = v.special_id();
        let labels: Vec<LabelId> = t.frames.iter().map(|f| f.label).collect();
        let weights: Vec<f64> = t.frames.iter().map(|f| f.weight).collect();
        assert_eq!(labels, vec![b, b, b, a]);
        assert_eq!(weights, vec![1.0, 1.0, 1.0, 5.0]);
        assert_eq!(t.collapse(), vec![a]);
    }

    #[test]
    fn rna_targets_seg_begin_and_mid() {
        let v = vocab(Topology::Rna, Augmentation::None);
        let al = FrameAlignment::new(
            "u".into(),
            vec![Segment { label: "a".into(), begin: 0, end: 3, word_end: false }],
        )
        .unwrap();
        let a = v.phoneme_id(&Phoneme::new("a")).unwrap();
        let b = v.special_id();
        let beg = frame_targets(&al, &v, EmitPosition::SegBegin, 5.0).unwrap();
        assert_eq!(
            beg.frames.iter().map(|f| f.label).collect::<Vec<_>>(),
            vec![a, b, b, b]
        );
        // floor((0 + 3) / 2) = 1
        let mid = frame_targets(&al, &v, EmitPosition::SegMid, 5.0).unwrap();
        assert_eq!(
            mid.frames.iter().map(|f| f.label).collect::<Vec<_>>(),
            vec![b, a, b, b]
        );
    }

    #[test]
    fn hmm_targets_loop_after_emit() {
        let v = vocab(Topology::Hmm, Augmentation::None);
        let al = FrameAlignment::new(
            "u".into(),
            vec![Segment { label: "a".into(), begin: 0, end: 3, word_end: false }],
        )
        .unwrap();
        let t = frame_targets(&al, &v, EmitPosition::SegEnd, 5.0).unwrap();
        let a = v.phoneme_id(&Phoneme::new("a")).unwrap();
        assert!(t.frames.iter().all(|f| f.label == a));
        let kinds: Vec<TransitionKind> = t.frames.iter().map(|f| f.kind).collect();
        assert_eq!(
            kinds,
            vec![
                TransitionKind::Emit,
                TransitionKind::Loop,
                TransitionKind::Loop,
                TransitionKind::Loop
            ]
        );
        assert_eq!(t.frames[0].weight, 5.0);
        assert_eq!(t.frames[1].weight, 1.0);
    }

    #[test]
    fn eow_flag_follows_word_end() {
        let v = vocab(Topology::Rna, Augmentation::Eow);
        let al = parse_alignment_file("u a 0 1 0\nu b 2 3 1\nu [SIL] 4 4 0\nu a 5 6 1\n").unwrap();
        let t = frame_targets(&al[0], &v, EmitPosition::SegEnd, 5.0).unwrap();
        let emitted: Vec<String> = t
            .collapse()
            .iter()
            .map(|&l| v.label(l).to_string())
            .collect();
        assert_eq!(emitted, vec!["a", "b#eow", "a#eow"]);
        // emit count equals speech segment count
        assert_eq!(t.collapse().len(), 3);
    }

    #[test]
    fn sow_flags_follow_word_starts() {
        let lex = Lexicon::parse("AB\ta b").unwrap().augmented(Augmentation::SowEow).unwrap();
        let v = LabelVocabulary::build(&lex, Topology::Rna, Augmentation::SowEow);
        // two words with a silence gap; first phonemes carry SOW, last EOW
        let al = parse_alignment_file("u a 0 1 0\nu b 2 3 1\nu [SIL] 4 4 0\nu b 5 5 1\n").unwrap();
        let t = frame_targets(&al[0], &v, EmitPosition::SegEnd, 5.0).unwrap();
        let emitted: Vec<String> = t.collapse().iter().map(|&l| v.label(l).to_string()).collect();
        assert_eq!(emitted, vec!["a#sow", "b#eow", "b#sow#eow"]);
    }

    #[test]
    fn unknown_phoneme_is_consistency_error() {
        let v = vocab(Topology::Rna, Augmentation::None);
        let al = FrameAlignment::new(
            "u".into(),
            vec![Segment { label: "zz".into(), begin: 0, end: 0, word_end: true }],
        )
        .unwrap();
        assert!(matches!(
            frame_targets(&al, &v, EmitPosition::SegEnd, 5.0),
            Err(AlignmentIoError::UnknownPhoneme { .. })
        ));
    }

    fn dummy_targets(total: usize) -> FrameTargets {
        FrameTargets {
            topology: Topology::Rna,
            frames: vec![
                FrameTarget {
                    label: 0,
                    kind: TransitionKind::Blank,
                    weight: 1.0,
                    aux_label: 0
                };
                total
            ],
        }
    }

    fn dummy_features(total: usize) -> Vec<Vec<f64>> {
        (0..total).map(|t| vec![t as f64]).collect()
    }

    #[test]
    fn chunk_offsets_at_half_size() {
        let t = dummy_targets(256);
        let f = dummy_features(256);
        let chunks = make_chunks("u", &f, &t, 128).unwrap();
        let offs: Vec<usize> = chunks.iter().map(|c| c.start).collect();
        assert_eq!(offs, vec![0, 64, 128]);
        assert!(chunks.iter().all(|c| c.len() == 128));
        assert!(chunks.iter().all(|c| c.carry_in.is_none()));
    }

    #[test]
    fn chunk_short_utterance() {
        let chunks = make_chunks("u", &dummy_features(100), &dummy_targets(100), 128).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].len(), 100);
    }

    #[test]
    fn chunk_exact_double_half() {
        let chunks = make_chunks("u", &dummy_features(192), &dummy_targets(192), 128).unwrap();
        let offs: Vec<usize> = chunks.iter().map(|c| c.start).collect();
        assert_eq!(offs, vec![0, 64]);
        assert!(chunks.iter().all(|c| c.len() == 128));
    }

    #[test]
    fn chunk_odd_size_rejected() {
        assert!(matches!(
            make_chunks("u", &dummy_features(10), &dummy_targets(10), 7),
            Err(AlignmentIoError::OddChunkSize(7))
        ));
    }

    #[test]
    fn chunk_coverage_exhaustive() {
        // every frame covered, interior coverage at most 2, starts at
        // multiples of half the chunk size
        for total in 1..=512usize {
            let chunks = make_chunks("u", &dummy_features(total), &dummy_targets(total), 16).unwrap();
            let mut cover = vec![0usize; total];
            for c in &chunks {
                assert_eq!(c.start % 8, 0);
                for t in c.start..c.start + c.len() {
                    cover[t] += 1;
                }
                for (i, row) in c.features.iter().enumerate() {
                    assert_eq!(row[0] as usize, c.start + i);
                }
            }
            assert!(cover.iter().all(|&c| c >= 1), "gap at total={total}");
            assert!(cover.iter().all(|&c| c <= 2), "overcover at total={total}");
        }
    }

    #[test]
    fn feature_round_trip() {
        let mut text = format_features("u1", &[vec![1.0, -2.5], vec![0.25, 3.0]]);
        text.push_str(&format_features("u2", &[vec![0.5, 0.5]]));
        let set = parse_feature_file(&text).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.get("u1").unwrap()[1], vec![0.25, 3.0]);
        assert_eq!(set.get("u2").unwrap().len(), 1);
    }

    #[test]
    fn feature_parse_errors() {
        assert!(parse_feature_file("u1 2 2\n1.0 2.0\n").is_err());
        assert!(parse_feature_file("u1 1 2\n1.0\n").is_err());
        assert!(parse_feature_file("u1 1 1\nxyz\n").is_err());
    }
}
