//! `ptk`: train, decode, align, score and verify phoneme transducer models.
//!
//! Exit codes: 0 on success, 1 on verification or runtime failure, 2 on
//! usage or input-format errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ptk_core::alignment_io::{
    format_alignment, parse_alignment_file, parse_feature_file, FeatureSet, FrameAlignment,
    Segment, SILENCE_SYMBOL,
};
use ptk_core::lexicon::{Augmentation, LabelId, LabelVocabulary, Lexicon, PrefixTree};
use ptk_core::lm::parse_arpa;
use ptk_core::model::{parse_checkpoint, write_checkpoint, ModelScorer, ScorerParams};
use ptk_core::search::{
    decode_utterance, format_decode_line, BeamConfig, DecodeMode as SearchMode,
};
use ptk_core::synth::{synth_generate, SynthSpec};
use ptk_core::topology::{
    build_alignment_graph_with_boundaries, viterbi_alignment, SilenceMode, Topology,
};
use ptk_core::training::{train, Corpus, TrainConfig, Utterance};
use ptk_core::verify;
use ptk_core::wer::{edit_distance_wer, WerCounts};

#[derive(Parser)]
#[command(name = "ptk", version, about = "Phoneme transducer kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TopologyArg {
    Rna,
    Hmm,
}

impl From<TopologyArg> for Topology {
    fn from(v: TopologyArg) -> Topology {
        match v {
            TopologyArg::Rna => Topology::Rna,
            TopologyArg::Hmm => Topology::Hmm,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AugmentArg {
    None,
    Eow,
    SowEow,
}

impl From<AugmentArg> for Augmentation {
    fn from(v: AugmentArg) -> Augmentation {
        match v {
            AugmentArg::None => Augmentation::None,
            AugmentArg::Eow => Augmentation::Eow,
            AugmentArg::SowEow => Augmentation::SowEow,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fullsum,
    Viterbi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Topology,
    Gradient,
    Search,
}

/// Flags shared by every command that rebuilds the label vocabulary.
#[derive(Args)]
struct VocabArgs {
    /// Alignment label topology the model was trained with
    #[arg(long, value_enum, default_value = "rna")]
    topology: TopologyArg,
    /// Label augmentation the model was trained with
    #[arg(long, value_enum, default_value = "eow")]
    augment: AugmentArg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (lexicon, LM, features, alignments, refs)
    MakeSynth {
        /// key=value spec file; defaults when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scorer with frame-wise cross entropy
    Train {
        /// key=value config file; defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lexicon: PathBuf,
        /// training alignment file
        #[arg(long)]
        align: PathBuf,
        /// directory of training feature files
        #[arg(long)]
        features: PathBuf,
        /// held-out alignment file for the LR schedule
        #[arg(long)]
        dev_align: Option<PathBuf>,
        #[arg(long)]
        dev_features: Option<PathBuf>,
        /// checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// per-epoch log file (also printed to stdout)
        #[arg(long)]
        log: Option<PathBuf>,
        /// config overrides, e.g. -s epochs=10 (take precedence over --config)
        #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Decode features with prefix-tree beam search and LM shallow fusion
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// ARPA n-gram language model
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "fullsum")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.9)]
        lm_scale: f64,
        /// beam pruning threshold in natural-log units
        #[arg(long, default_value_t = 12.0)]
        beam: f64,
        #[arg(long, default_value_t = 512)]
        max_hyps: usize,
        /// enable unigram LM look-ahead
        #[arg(long)]
        lookahead: bool,
        #[command(flatten)]
        vocab: VocabArgs,
        /// output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a decode output against references
    ScoreWer {
        /// reference file: UTT_ID<TAB>word1 word2 ...
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        /// hypothesis file in decode output format
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Run a property battery; exits nonzero on failure
    OracleCheck {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Force-align reference transcripts and emit Viterbi alignments
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// reference file: UTT_ID<TAB>word1 word2 ...
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    /// Bad inputs: malformed files, unknown keys, missing utterances.
    Usage(String),
    /// Verification or runtime failure.
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| failure(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Read and merge every regular file of a feature directory, sorted by name.
fn read_features(dir: &Path) -> Result<FeatureSet, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut set = FeatureSet::new();
    if paths.is_empty() {
        return Err(usage(format!("{}: no feature files", dir.display())));
    }
    for path in paths {
        set.merge(parse_feature_file(&read(&path)?).map_err(usage)?);
    }
    Ok(set)
}

fn load_utterances(
    align_path: &Path,
    features_dir: &Path,
) -> Result<Vec<Utterance>, CliError> {
    let alignments = parse_alignment_file(&read(align_path)?).map_err(usage)?;
    let features = read_features(features_dir)?;
    alignments
        .into_iter()
        .map(|al| {
            let feats = features
                .get(&al.utt_id)
                .ok_or_else(|| usage(format!("utterance {} has no features", al.utt_id)))?;
            if feats.len() != al.frames() {
                return Err(usage(format!(
                    "utterance {}: {} feature frames vs {} aligned frames",
                    al.utt_id,
                    feats.len(),
                    al.frames()
                )));
            }
            Ok(Utterance {
                utt_id: al.utt_id.clone(),
                features: feats.to_vec(),
                alignment: al,
            })
        })
        .collect()
}

fn build_vocab(
    lexicon_path: &Path,
    args: &VocabArgs,
) -> Result<(Lexicon, LabelVocabulary, PrefixTree), CliError> {
    let base = Lexicon::parse(&read(lexicon_path)?).map_err(usage)?;
    let augment: Augmentation = args.augment.into();
    let lex = base.augmented(augment).map_err(usage)?;
    let vocab = LabelVocabulary::build(&lex, args.topology.into(), augment);
    let tree = PrefixTree::build(&lex, &vocab).map_err(usage)?;
    Ok((lex, vocab, tree))
}

fn parse_references(text: &str) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let mut refs = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (utt, words) = line
            .split_once('\t')
            .ok_or_else(|| usage(format!("reference line {}: expected UTT_ID<TAB>words", idx + 1)))?;
        refs.insert(
            utt.to_string(),
            words.split_whitespace().map(|w| w.to_string()).collect(),
        );
    }
    Ok(refs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ptk: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::MakeSynth { spec, out } => {
            let spec = match spec {
                Some(path) => SynthSpec::from_kv_text(&read(&path)?).map_err(usage)?,
                None => SynthSpec::default(),
            };
            let corpus = synth_generate(&spec).map_err(failure)?;
            corpus
                .write_dir(&out)
                .map_err(|e| failure(format!("{}: {e}", out.display())))?;
            println!(
                "wrote {} train / {} dev utterances to {}",
                corpus.train.len(),
                corpus.dev.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            lexicon,
            align,
            features,
            dev_align,
            dev_features,
            out,
            log,
            set,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::from_kv_text(&read(&path)?).map_err(usage)?,
                None => TrainConfig::default(),
            };
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| usage(format!("override {kv:?}: expected KEY=VALUE")))?;
                cfg.set(k.trim(), v.trim()).map_err(usage)?;
            }
            cfg.validate().map_err(usage)?;

            let lex = Lexicon::parse(&read(&lexicon)?).map_err(usage)?;
            let corpus = Corpus {
                train: load_utterances(&align, &features)?,
                dev: match (&dev_align, &dev_features) {
                    (Some(a), Some(f)) => load_utterances(a, f)?,
                    (None, None) => Vec::new(),
                    _ => {
                        return Err(usage(
                            "--dev-align and --dev-features must be given together",
                        ))
                    }
                },
            };
            let outcome = train(&cfg, &lex, &corpus).map_err(failure)?;
            let mut log_text = String::new();
            for rec in &outcome.log {
                println!("{}", rec.log_line());
                log_text.push_str(&rec.log_line());
                log_text.push('\n');
            }
            if let Some(path) = log {
                write_file(&path, &log_text)?;
            }
            write_file(&out, &write_checkpoint(&outcome.state.params))?;
            println!("wrote checkpoint to {}", out.display());
            Ok(())
        }
        Command::Decode {
            ckpt,
            lexicon,
            lm,
            features,
            mode,
            lm_scale,
            beam,
            max_hyps,
            lookahead,
            vocab,
            out,
        } => {
            let params = parse_checkpoint(&read(&ckpt)?).map_err(usage)?;
            let (_, vocab, tree) = build_vocab(&lexicon, &vocab)?;
            let lm = parse_arpa(&read(&lm)?).map_err(usage)?;
            let features = read_features(&features)?;
            let cfg = BeamConfig {
                mode: match mode {
                    ModeArg::Fullsum => SearchMode::FullSum,
                    ModeArg::Viterbi => SearchMode::Viterbi,
                },
                beam,
                max_hyps,
                lm_scale,
                lookahead,
                word_end_recombination: true,
            };
            let mut output = String::new();
            for (utt_id, feats) in features.iter() {
                let h = params.encode(feats).map_err(usage)?;
                let result =
                    decode_utterance(&params, &h, &tree, &vocab, &lm, &cfg).map_err(|e| match e {
                        ptk_core::search::SearchError::VocabMismatch { .. } => {
                            usage(format!("{utt_id}: {e} (check --topology/--augment)"))
                        }
                        other => failure(format!("{utt_id}: {other}")),
                    })?;
                output.push_str(&format_decode_line(utt_id, &result, &tree));
                output.push('\n');
            }
            emit(&out, &output)
        }
        Command::ScoreWer { reference, hyp } => {
            let refs = parse_references(&read(&reference)?)?;
            let mut hyps: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for (idx, line) in read(&hyp)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut fields = line.split('\t');
                let utt = fields.next().unwrap_or("");
                let _score = fields.next().ok_or_else(|| {
                    usage(format!("hypothesis line {}: expected UTT_ID<TAB>score<TAB>words", idx + 1))
                })?;
                let words = fields.next().unwrap_or("");
                hyps.insert(
                    utt.to_string(),
                    words.split_whitespace().map(|w| w.to_string()).collect(),
                );
            }
            let mut totals = WerCounts::default();
            for (utt, ref_words) in &refs {
                let empty = Vec::new();
                let hyp_words = hyps.get(utt).unwrap_or(&empty);
                totals.add(&edit_distance_wer(ref_words, hyp_words));
            }
            println!(
                "WER {:.2}% (S={} I={} D={} N={})",
                100.0 * totals.wer(),
                totals.substitutions,
                totals.insertions,
                totals.deletions,
                totals.ref_words
            );
            Ok(())
        }
        Command::OracleCheck { suite, seed } => {
            let result = match suite {
                Suite::Topology => verify::topology_battery(seed),
                Suite::Gradient => verify::gradient_battery(seed),
                Suite::Search => verify::search_battery(seed),
            };
            match result {
                Ok(summary) => {
                    println!("ok: {summary}");
                    Ok(())
                }
                Err(e) => Err(failure(format!("verification failed: {e}"))),
            }
        }
        Command::Align {
            ckpt,
            lexicon,
            features,
            reference,
            vocab,
            out,
        } => {
            let params = parse_checkpoint(&read(&ckpt)?).map_err(usage)?;
            let (lex, vocab, _) = build_vocab(&lexicon, &vocab)?;
            let features = read_features(&features)?;
            let refs = parse_references(&read(&reference)?)?;
            let mut output = String::new();
            for (utt_id, feats) in features.iter() {
                let Some(words) = refs.get(utt_id) else {
                    return Err(usage(format!("utterance {utt_id} has no reference")));
                };
                let al = force_align(&params, &lex, &vocab, utt_id, feats, words)?;
                output.push_str(&format_alignment(&al));
            }
            emit(&out, &output)
        }
    }
}

/// Viterbi forced alignment of one utterance against its transcript,
/// maximized over pronunciation variants.
fn force_align(
    params: &ScorerParams,
    lex: &Lexicon,
    vocab: &LabelVocabulary,
    utt_id: &str,
    features: &[Vec<f64>],
    words: &[String],
) -> Result<FrameAlignment, CliError> {
    let topology = vocab.topology();
    let h = params.encode(features).map_err(failure)?;
    let scorer = ModelScorer::new(params, &h);

    // variant combinations, best path wins
    let prons: Vec<&[ptk_core::lexicon::Pronunciation]> = words
        .iter()
        .map(|w| {
            let p = lex.pronunciations(w);
            if p.is_empty() {
                Err(usage(format!("{utt_id}: word {w:?} missing from the lexicon")))
            } else {
                Ok(p)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut combo = vec![0usize; words.len()];
    let mut best: Option<(f64, Vec<LabelId>, Vec<bool>, ptk_core::topology::AlignmentPath)> = None;
    loop {
        let mut labels: Vec<LabelId> = Vec::new();
        let mut ends = Vec::new();
        for (i, pron) in prons.iter().enumerate() {
            let pron = &pron[combo[i]];
            for (j, ph) in pron.iter().enumerate() {
                let id = vocab
                    .phoneme_id(ph)
                    .ok_or_else(|| usage(format!("{utt_id}: phoneme {ph} missing from vocabulary")))?;
                labels.push(id);
                ends.push(j + 1 == pron.len());
            }
        }
        if labels.len() <= features.len() {
            let silence = match topology {
                Topology::Rna => SilenceMode::None,
                Topology::Hmm => SilenceMode::Boundaries,
            };
            let g = build_alignment_graph_with_boundaries(&labels, vocab, topology, silence, &ends)
                .map_err(failure)?;
            let (path, score) = viterbi_alignment(&g, &scorer, features.len());
            if !score.is_zero() && best.as_ref().map(|(s, ..)| score.value() > *s).unwrap_or(true)
            {
                best = Some((score.value(), labels, ends, path));
            }
        }
        let mut i = 0;
        loop {
            if i == combo.len() {
                break;
            }
            combo[i] += 1;
            if combo[i] < prons[i].len() {
                break;
            }
            combo[i] = 0;
            i += 1;
        }
        if i == combo.len() || combo.is_empty() {
            break;
        }
    }
    let Some((_, _, ends, path)) = best else {
        return Err(failure(format!(
            "{utt_id}: transcript does not fit in {} frames",
            features.len()
        )));
    };
    Ok(path_to_alignment(utt_id, vocab, &ends, &path))
}

/// Convert a Viterbi path into the alignment file representation: one
/// segment per run of frames sharing a label and transition position, with
/// blank and silence frames as `[SIL]` filler. Repeated labels stay
/// separate segments because their positions differ.
fn path_to_alignment(
    utt_id: &str,
    vocab: &LabelVocabulary,
    word_ends: &[bool],
    path: &ptk_core::topology::AlignmentPath,
) -> FrameAlignment {
    let special = vocab.special_id();
    let mut segments: Vec<Segment> = Vec::new();
    let mut seg_pos = usize::MAX;
    for (t, (&y, &s)) in path.y.iter().zip(path.s.iter()).enumerate() {
        let (label, word_end) = if y == special {
            (SILENCE_SYMBOL.to_string(), false)
        } else {
            let p = vocab.label(y).as_phoneme().expect("speech label on the path");
            (p.base().to_string(), word_ends[s - 1])
        };
        if let Some(seg) = segments.last_mut() {
            if seg.label == label && seg_pos == s {
                seg.end = t;
                continue;
            }
        }
        segments.push(Segment {
            label,
            begin: t,
            end: t,
            word_end,
        });
        seg_pos = s;
    }
    FrameAlignment::new(utt_id.to_string(), segments).expect("viterbi path tiles the utterance")
}
