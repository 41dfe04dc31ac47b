//! Synthetic corpus generation: a random lexicon, a bigram word LM that
//! also drives sentence sampling, per-phoneme codeword features with
//! Gaussian noise, and exact frame alignments.

use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::alignment_io::{FrameAlignment, Segment, SILENCE_SYMBOL};
use crate::training::{Corpus, Utterance};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("could not draw {words} distinct pronunciations after {attempts} attempts")]
    DistinctPronunciations { words: usize, attempts: usize },
}

/// Shape of the generated corpus. The default is the desk-scale reference
/// corpus used by the acceptance runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub lexicon_words: usize,
    pub phoneme_count: usize,
    pub pron_len: (usize, usize),
    pub frames_per_phoneme: (usize, usize),
    pub feature_dim: usize,
    pub noise_level: f64,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub utterance_words: (usize, usize),
    pub edge_silence_prob: f64,
    pub inner_silence_prob: f64,
    pub silence_frames: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            lexicon_words: 20,
            phoneme_count: 5,
            pron_len: (4, 6),
            frames_per_phoneme: (1, 2),
            feature_dim: 8,
            noise_level: 0.3,
            train_utterances: 200,
            dev_utterances: 50,
            utterance_words: (3, 8),
            edge_silence_prob: 0.5,
            inner_silence_prob: 0.2,
            silence_frames: (1, 3),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("lexicon_words", self.lexicon_words),
            ("phoneme_count", self.phoneme_count),
            ("feature_dim", self.feature_dim),
            ("train_utterances", self.train_utterances),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SynthError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        for (name, (lo, hi)) in [
            ("pron_len", self.pron_len),
            ("frames_per_phoneme", self.frames_per_phoneme),
            ("utterance_words", self.utterance_words),
            ("silence_frames", self.silence_frames),
        ] {
            if lo == 0 || hi < lo {
                return Err(SynthError::InvalidSpec(format!("{name} range {lo}..={hi} is invalid")));
            }
        }
        if self.noise_level < 0.0 {
            return Err(SynthError::InvalidSpec("noise_level must be non-negative".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        let bad = || SynthError::InvalidSpec(format!("bad value {value:?} for {key}"));
        macro_rules! parse {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().map_err(|_| bad())?
            };
        }
        let parse_range = |value: &str| -> Result<(usize, usize), SynthError> {
            let (lo, hi) = value.split_once("..").ok_or_else(bad)?;
            Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?))
        };
        match key {
            "seed" => parse!(self.seed, u64),
            "lexicon_words" => parse!(self.lexicon_words, usize),
            "phoneme_count" => parse!(self.phoneme_count, usize),
            "pron_len" => self.pron_len = parse_range(value)?,
            "frames_per_phoneme" => self.frames_per_phoneme = parse_range(value)?,
            "feature_dim" => parse!(self.feature_dim, usize),
            "noise_level" => parse!(self.noise_level, f64),
            "train_utterances" => parse!(self.train_utterances, usize),
            "dev_utterances" => parse!(self.dev_utterances, usize),
            "utterance_words" => self.utterance_words = parse_range(value)?,
            "edge_silence_prob" => parse!(self.edge_silence_prob, f64),
            "inner_silence_prob" => parse!(self.inner_silence_prob, f64),
            "silence_frames" => self.silence_frames = parse_range(value)?,
            _ => return Err(SynthError::InvalidSpec(format!("unknown spec key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key=value` spec file on top of the defaults. Ranges use
    /// `lo..hi` (inclusive).
    pub fn from_kv_text(text: &str) -> Result<SynthSpec, SynthError> {
        let mut spec = SynthSpec::default();
        for raw in text.lines() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| SynthError::InvalidSpec(format!("expected key=value, got {trimmed:?}")))?;
            spec.set(key.trim(), value.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One generated utterance.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub words: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub alignment: FrameAlignment,
}

/// A full generated corpus plus its lexicon and LM in their file formats.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lexicon_text: String,
    pub arpa_text: String,
    pub train: Vec<SynthUtterance>,
    pub dev: Vec<SynthUtterance>,
    /// Per-phoneme feature means (last row: silence), for diagnostics.
    pub codewords: Vec<Vec<f64>>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn range_sample(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let phones: Vec<String> = (0..spec.phoneme_count).map(|i| format!("p{i}")).collect();

    // per-phoneme codewords, silence last
    let mut codewords = Vec::with_capacity(spec.phoneme_count + 1);
    for _ in 0..=spec.phoneme_count {
        codewords.push((0..spec.feature_dim).map(|_| gauss(&mut rng)).collect::<Vec<f64>>());
    }

    // distinct pronunciations
    let mut prons: Vec<Vec<usize>> = Vec::with_capacity(spec.lexicon_words);
    let mut seen = std::collections::HashSet::new();
    const MAX_ATTEMPTS: usize = 200;
    for _ in 0..spec.lexicon_words {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let len = range_sample(&mut rng, spec.pron_len);
            let pron: Vec<usize> = (0..len)
                .map(|_| rng.gen_range(0..spec.phoneme_count))
                .collect();
            if seen.insert(pron.clone()) {
                prons.push(pron);
                break;
            }
            if attempts >= MAX_ATTEMPTS {
                return Err(SynthError::DistinctPronunciations {
                    words: spec.lexicon_words,
                    attempts,
                });
            }
        }
    }
    let words: Vec<String> = (0..spec.lexicon_words).map(|i| format!("w{i:03}")).collect();
    let mut lexicon_text = String::new();
    for (w, pron) in words.iter().zip(prons.iter()) {
        let names: Vec<&str> = pron.iter().map(|&p| phones[p].as_str()).collect();
        lexicon_text.push_str(&format!("{w}\t{}\n", names.join(" ")));
    }

    // bigram LM: dense conditional table over (<s> + words) x (words + </s>)
    let w = spec.lexicon_words;
    let mut unigram_weights: Vec<f64> = (0..w + 1).map(|_| rng.gen_range(0.5..1.5)).collect();
    let uni_total: f64 = unigram_weights.iter().sum();
    unigram_weights.iter_mut().for_each(|v| *v /= uni_total);
    let mut cond: Vec<Vec<f64>> = Vec::with_capacity(w + 1);
    for _ in 0..w + 1 {
        let mut row: Vec<f64> = (0..w + 1).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        cond.push(row);
    }
    let mut arpa = String::new();
    arpa.push_str("\\data\\\n");
    arpa.push_str(&format!("ngram 1={}\n", w + 2));
    arpa.push_str(&format!("ngram 2={}\n\n", (w + 1) * (w + 1)));
    arpa.push_str("\\1-grams:\n");
    arpa.push_str("-99.000000\t<s>\t0.000000\n");
    for (i, word) in words.iter().enumerate() {
        arpa.push_str(&format!(
            "{:.6}\t{word}\t0.000000\n",
            unigram_weights[i].log10()
        ));
    }
    arpa.push_str(&format!("{:.6}\t</s>\n", unigram_weights[w].log10()));
    arpa.push_str("\n\\2-grams:\n");
    for (ci, row) in cond.iter().enumerate() {
        let ctx = if ci == 0 { "<s>" } else { &words[ci - 1] };
        for (ti, &p) in row.iter().enumerate() {
            let target = if ti == w { "</s>" } else { &words[ti] };
            arpa.push_str(&format!("{:.6}\t{ctx} {target}\n", p.log10()));
        }
    }
    arpa.push_str("\\end\\\n");

    // utterances
    let make_split = |rng: &mut ChaCha8Rng, name: &str, count: usize| -> Vec<SynthUtterance> {
        let mut utts = Vec::with_capacity(count);
        for u in 0..count {
            let n_words = range_sample(rng, spec.utterance_words);
            let mut seq: Vec<usize> = Vec::with_capacity(n_words);
            let mut state = 0usize; // row 0: <s>
            for _ in 0..n_words {
                // sample the next word from the bigram row, excluding </s>
                let row = &cond[state];
                let word_mass: f64 = row[..w].iter().sum();
                let draw: f64 = rng.gen::<f64>() * word_mass;
                let mut cum = 0.0;
                let mut picked = w - 1;
                for (i, &p) in row[..w].iter().enumerate() {
                    cum += p;
                    if draw < cum {
                        picked = i;
                        break;
                    }
                }
                seq.push(picked);
                state = picked + 1;
            }

            let mut segments: Vec<Segment> = Vec::new();
            let mut features: Vec<Vec<f64>> = Vec::new();
            let mut frame = 0usize;
            let emit = |segments: &mut Vec<Segment>,
                            features: &mut Vec<Vec<f64>>,
                            frame: &mut usize,
                            rng: &mut ChaCha8Rng,
                            phoneme: usize,
                            len: usize,
                            label: String,
                            word_end: bool| {
                let begin = *frame;
                for _ in 0..len {
                    let mut row = codewords[phoneme].clone();
                    for v in row.iter_mut() {
                        *v += spec.noise_level * gauss(rng);
                    }
                    features.push(row);
                }
                *frame += len;
                segments.push(Segment {
                    label,
                    begin,
                    end: *frame - 1,
                    word_end,
                });
            };

            if rng.gen::<f64>() < spec.edge_silence_prob {
                let len = range_sample(rng, spec.silence_frames);
                emit(&mut segments, &mut features, &mut frame, rng, spec.phoneme_count, len, SILENCE_SYMBOL.into(), false);
            }
            for (wi, &word) in seq.iter().enumerate() {
                let pron = &prons[word];
                for (pi, &ph) in pron.iter().enumerate() {
                    let len = range_sample(rng, spec.frames_per_phoneme);
                    let word_end = pi + 1 == pron.len();
                    emit(&mut segments, &mut features, &mut frame, rng, ph, len, phones[ph].clone(), word_end);
                }
                let at_edge = wi + 1 == seq.len();
                let p_sil = if at_edge { spec.edge_silence_prob } else { spec.inner_silence_prob };
                if rng.gen::<f64>() < p_sil {
                    let len = range_sample(rng, spec.silence_frames);
                    emit(&mut segments, &mut features, &mut frame, rng, spec.phoneme_count, len, SILENCE_SYMBOL.into(), false);
                }
            }

            let utt_id = format!("{name}_{u:04}");
            let alignment = FrameAlignment::new(utt_id.clone(), segments)
                .expect("generated segments tile the utterance");
            utts.push(SynthUtterance {
                utt_id,
                words: seq.iter().map(|&i| words[i].clone()).collect(),
                features,
                alignment,
            });
        }
        utts
    };

    let train = make_split(&mut rng, "train", spec.train_utterances);
    let dev = make_split(&mut rng, "dev", spec.dev_utterances);

    Ok(SynthCorpus {
        lexicon_text,
        arpa_text: arpa,
        train,
        dev,
        codewords,
    })
}

impl SynthCorpus {
    /// Borrow as a training corpus.
    pub fn to_corpus(&self) -> Corpus {
        let conv = |utts: &[SynthUtterance]| {
            utts.iter()
                .map(|u| Utterance {
                    utt_id: u.utt_id.clone(),
                    features: u.features.clone(),
                    alignment: u.alignment.clone(),
                })
                .collect()
        };
        Corpus {
            train: conv(&self.train),
            dev: conv(&self.dev),
        }
    }

    pub fn reference_text(utts: &[SynthUtterance]) -> String {
        let mut out = String::new();
        for u in utts {
            out.push_str(&format!("{}\t{}\n", u.utt_id, u.words.join(" ")));
        }
        out
    }

    pub fn alignment_text(utts: &[SynthUtterance]) -> String {
        let mut out = String::new();
        for u in utts {
            out.push_str(&crate::alignment_io::format_alignment(&u.alignment));
        }
        out
    }

    pub fn feature_text(utts: &[SynthUtterance]) -> String {
        let mut out = String::new();
        for u in utts {
            out.push_str(&crate::alignment_io::format_features(&u.utt_id, &u.features));
        }
        out
    }

    /// Write the corpus as the on-disk layout consumed by the CLI:
    /// `lexicon.txt`, `lm.arpa`, and per split `alignments.txt`, `refs.txt`
    /// and `features/all.txt`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |path: std::path::PathBuf, text: &str| -> std::io::Result<()> {
            let mut f = std::fs::File::create(path)?;
            f.write_all(text.as_bytes())
        };
        write(dir.join("lexicon.txt"), &self.lexicon_text)?;
        write(dir.join("lm.arpa"), &self.arpa_text)?;
        for (name, utts) in [("train", &self.train), ("dev", &self.dev)] {
            let split = dir.join(name);
            std::fs::create_dir_all(split.join("features"))?;
            write(split.join("alignments.txt"), &Self::alignment_text(utts))?;
            write(split.join("refs.txt"), &Self::reference_text(utts))?;
            write(split.join("features").join("all.txt"), &Self::feature_text(utts))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Lexicon;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            train_utterances: 4,
            dev_utterances: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&small_spec()).unwrap();
        let b = synth_generate(&small_spec()).unwrap();
        assert_eq!(a.lexicon_text, b.lexicon_text);
        assert_eq!(a.arpa_text, b.arpa_text);
        assert_eq!(SynthCorpus::feature_text(&a.train), SynthCorpus::feature_text(&b.train));
        assert_eq!(SynthCorpus::alignment_text(&a.dev), SynthCorpus::alignment_text(&b.dev));
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_generate(&small_spec()).unwrap();
        let mut spec = small_spec();
        spec.seed = 1;
        let b = synth_generate(&spec).unwrap();
        assert_ne!(a.lexicon_text, b.lexicon_text);
    }

    #[test]
    fn noiseless_features_are_codewords() {
        let mut spec = small_spec();
        spec.noise_level = 0.0;
        let corpus = synth_generate(&spec).unwrap();
        for utt in corpus.train.iter().chain(corpus.dev.iter()) {
            for seg in &utt.alignment.segments {
                let want = if seg.is_silence() {
                    spec.phoneme_count
                } else {
                    seg.label[1..].parse::<usize>().unwrap()
                };
                for t in seg.begin..=seg.end {
                    // nearest centroid classification is exact
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (c, cw) in corpus.codewords.iter().enumerate() {
                        let d: f64 = cw
                            .iter()
                            .zip(utt.features[t].iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if d < best_d {
                            best_d = d;
                            best = c;
                        }
                    }
                    assert_eq!(best, want);
                    assert_eq!(utt.features[t], corpus.codewords[want]);
                }
            }
        }
    }

    #[test]
    fn artifacts_parse_back() {
        let corpus = synth_generate(&small_spec()).unwrap();
        let lex = Lexicon::parse(&corpus.lexicon_text).unwrap();
        assert_eq!(lex.num_words(), 20);
        let lm = crate::lm::parse_arpa(&corpus.arpa_text).unwrap();
        assert_eq!(lm.order(), 2);
        let als =
            crate::alignment_io::parse_alignment_file(&SynthCorpus::alignment_text(&corpus.train))
                .unwrap();
        assert_eq!(als.len(), 4);
        let feats =
            crate::alignment_io::parse_feature_file(&SynthCorpus::feature_text(&corpus.train))
                .unwrap();
        assert_eq!(feats.len(), 4);
        for (al, utt) in als.iter().zip(corpus.train.iter()) {
            assert_eq!(al.frames(), utt.features.len());
            assert_eq!(feats.get(&al.utt_id).unwrap().len(), al.frames());
        }
    }

    #[test]
    fn spec_kv_round_trip() {
        let spec = SynthSpec::from_kv_text("seed=7\nlexicon_words=6\npron_len=1..2\n").unwrap();
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.lexicon_words, 6);
        assert_eq!(spec.pron_len, (1, 2));
        assert!(SynthSpec::from_kv_text("bogus=1\n").is_err());
        assert!(SynthSpec::from_kv_text("pron_len=3..1\n").is_err());
    }
}
