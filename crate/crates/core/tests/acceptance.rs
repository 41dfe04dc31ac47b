//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see every line.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ptk_core::alignment_io::{make_chunks, FrameTarget, FrameTargets, TransitionKind};
use ptk_core::lexicon::{Augmentation, LabelVocabulary, Lexicon, PrefixTree};
use ptk_core::lm::{parse_arpa, NGramLM};
use ptk_core::model::write_checkpoint;
use ptk_core::search::{decode_utterance, format_decode_line, BeamConfig, DecodeMode};
use ptk_core::synth::{synth_generate, SynthCorpus, SynthSpec};
use ptk_core::topology::Topology;
use ptk_core::training::{train, TrainConfig, TrainOutcome};
use ptk_core::verify;
use ptk_core::wer::{edit_distance_wer, WerCounts};

fn report(criterion: usize, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_topology_oracle() {
    let t0 = Instant::now();
    let result = verify::topology_battery(0);
    let elapsed = t0.elapsed();
    match result {
        Ok(summary) => report(
            1,
            elapsed < Duration::from_secs(30),
            &format!("{summary} in {elapsed:.2?} (limit 30 s)"),
        ),
        Err(e) => report(1, false, &e),
    }
}

#[test]
fn criterion_2_normalization() {
    match verify::normalization_battery(0) {
        Ok(summary) => report(2, true, &format!("{summary}, all within 1e-12")),
        Err(e) => report(2, false, &e),
    }
}

#[test]
fn criterion_3_gradient_check() {
    let t0 = Instant::now();
    let result = verify::gradient_battery(0);
    let elapsed = t0.elapsed();
    match result {
        Ok(summary) => report(
            3,
            elapsed < Duration::from_secs(120),
            &format!("{summary} over 50 configurations in {elapsed:.2?} (limit 2 min)"),
        ),
        Err(e) => report(3, false, &e),
    }
}

#[test]
fn criterion_4_search_oracle() {
    match verify::search_battery(0) {
        Ok(summary) => report(4, true, &format!("{summary}: beam equals exhaustive oracle")),
        Err(e) => report(4, false, &e),
    }
}

// ── Shared end-to-end artifacts for criteria 5 and 7 ─────────────────────

struct Trained {
    outcome: TrainOutcome,
    tree: PrefixTree,
    train_secs: f64,
}

struct E2e {
    synth: SynthCorpus,
    lexicon: Lexicon,
    lm: NGramLM,
    main: Trained,
}

fn train_once(lexicon: &Lexicon, synth: &SynthCorpus, cfg: &TrainConfig) -> Trained {
    let t0 = Instant::now();
    let outcome = train(cfg, lexicon, &synth.to_corpus()).expect("training");
    let train_secs = t0.elapsed().as_secs_f64();
    let lex_aug = lexicon.augmented(cfg.augmentation).unwrap();
    let tree = PrefixTree::build(&lex_aug, &outcome.vocab).unwrap();
    Trained {
        outcome,
        tree,
        train_secs,
    }
}

fn decode_dev(
    trained: &Trained,
    synth: &SynthCorpus,
    lm: &NGramLM,
    mode: DecodeMode,
) -> (WerCounts, String) {
    let cfg = BeamConfig {
        mode,
        ..BeamConfig::default()
    };
    let params = &trained.outcome.state.params;
    let vocab = &trained.outcome.vocab;
    let mut counts = WerCounts::default();
    let mut output = String::new();
    for utt in &synth.dev {
        let h = params.encode(&utt.features).unwrap();
        let dec = decode_utterance(params, &h, &trained.tree, vocab, lm, &cfg).unwrap();
        counts.add(&edit_distance_wer(&utt.words, &dec.word_strings(&trained.tree)));
        output.push_str(&format_decode_line(&utt.utt_id, &dec, &trained.tree));
        output.push('\n');
    }
    (counts, output)
}

fn e2e() -> &'static E2e {
    static CELL: OnceLock<E2e> = OnceLock::new();
    CELL.get_or_init(|| {
        let synth = synth_generate(&SynthSpec::default()).expect("synthesis");
        let lexicon = Lexicon::parse(&synth.lexicon_text).unwrap();
        let lm = parse_arpa(&synth.arpa_text).unwrap();
        let main = train_once(&lexicon, &synth, &TrainConfig::default());
        E2e {
            synth,
            lexicon,
            lm,
            main,
        }
    })
}

#[test]
fn criterion_5_end_to_end_synthetic() {
    let e = e2e();
    let cfg = TrainConfig::default();
    assert_eq!(cfg.topology, Topology::Rna);
    assert_eq!(cfg.augmentation, Augmentation::Eow);
    assert_eq!(cfg.context_size, 1);
    let epochs = cfg.total_epochs();
    assert!(epochs <= 30, "default schedule must stay within 30 epochs");

    let (wer, _) = decode_dev(&e.main, &e.synth, &e.lm, DecodeMode::FullSum);
    let ok = wer.wer() <= 0.05 && e.main.train_secs < 600.0;
    report(
        5,
        ok,
        &format!(
            "dev WER {:.2}% ({} errors / {} words) after {epochs} epochs in {:.1} s (limits: 5%, 10 min)",
            100.0 * wer.wer(),
            wer.errors(),
            wer.ref_words,
            e.main.train_secs
        ),
    );

    // trend checks: reported, non-failing
    let (viterbi_wer, _) = decode_dev(&e.main, &e.synth, &e.lm, DecodeMode::Viterbi);
    let hmm = train_once(
        &e.lexicon,
        &e.synth,
        &TrainConfig {
            topology: Topology::Hmm,
            ..TrainConfig::default()
        },
    );
    let (hmm_wer, _) = decode_dev(&hmm, &e.synth, &e.lm, DecodeMode::FullSum);
    let plain = train_once(
        &e.lexicon,
        &e.synth,
        &TrainConfig {
            augmentation: Augmentation::None,
            ..TrainConfig::default()
        },
    );
    let (plain_wer, _) = decode_dev(&plain, &e.synth, &e.lm, DecodeMode::FullSum);
    let pct = |w: &WerCounts| 100.0 * w.wer();
    println!(
        "  trend: RNA {:.2}% vs HMM {:.2}% dev WER ({})",
        pct(&wer),
        pct(&hmm_wer),
        if wer.wer() <= hmm_wer.wer() { "holds" } else { "reversed" }
    );
    println!(
        "  trend: EOW {:.2}% vs plain phonemes {:.2}% dev WER ({})",
        pct(&wer),
        pct(&plain_wer),
        if wer.wer() <= plain_wer.wer() { "holds" } else { "reversed" }
    );
    println!(
        "  trend: full-sum {:.2}% vs viterbi {:.2}% dev WER ({})",
        pct(&wer),
        pct(&viterbi_wer),
        if wer.wer() <= viterbi_wer.wer() + 0.01 { "holds" } else { "reversed" }
    );
}

#[test]
fn train_dev_loss_decreases_early() {
    // strict decrease over the first five joint epochs on the default corpus
    let e = e2e();
    let cfg = TrainConfig::default();
    let joint = &e.main.outcome.log[cfg.pretrain_epochs..cfg.pretrain_epochs + 5];
    for pair in joint.windows(2) {
        assert!(
            pair[1].dev_loss < pair[0].dev_loss,
            "dev loss stalled: {} -> {}",
            pair[0].dev_loss,
            pair[1].dev_loss
        );
    }
}

#[test]
fn criterion_6_configuration_fidelity() {
    let cfg = TrainConfig::default();
    let mut checks = vec![
        ("label smoothing 0.2", cfg.label_smoothing == 0.2),
        ("loss boost 5", cfg.boost == 5.0),
        ("focal factor 1.0", cfg.focal_gamma == 1.0),
        ("initial LR 0.001", cfg.learning_rate == 0.001),
        ("LR decay 0.9", cfg.lr_decay == 0.9),
        ("sampling rate 0.5", cfg.sampling_rate == 0.5),
    ];

    // 50% chunk overlap: starts at multiples of half the chunk size
    let frames = 256;
    let targets = FrameTargets {
        topology: Topology::Rna,
        frames: vec![
            FrameTarget {
                label: 0,
                kind: TransitionKind::Blank,
                weight: 1.0,
                aux_label: 0,
            };
            frames
        ],
    };
    let features = vec![vec![0.0]; frames];
    let chunks = make_chunks("u", &features, &targets, 128).unwrap();
    let offsets: Vec<usize> = chunks.iter().map(|c| c.start).collect();
    checks.push(("50% chunk overlap", offsets == vec![0, 64, 128]));

    // vocabulary factors: 2x with EOW, 4x with SOW+EOW, plus one special
    let text: String = (0..39).map(|i| format!("W{i}\tp{i:02}\n")).collect();
    let base = Lexicon::parse(&text).unwrap();
    let eow = base.augmented(Augmentation::Eow).unwrap();
    let vocab_eow = LabelVocabulary::build(&eow, Topology::Rna, Augmentation::Eow);
    checks.push(("EOW factor 2 (39 -> 79)", vocab_eow.len() == 2 * 39 + 1));
    let se = base.augmented(Augmentation::SowEow).unwrap();
    let vocab_se = LabelVocabulary::build(&se, Topology::Hmm, Augmentation::SowEow);
    checks.push(("SOW+EOW factor 4 (39 -> 157)", vocab_se.len() == 4 * 39 + 1));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        6,
        failed.is_empty(),
        &if failed.is_empty() {
            format!("{} defaults and factors match the recipe", checks.len())
        } else {
            format!("mismatched: {}", failed.join(", "))
        },
    );
}

#[test]
fn criterion_7_determinism() {
    let e = e2e();
    let second = train_once(&e.lexicon, &e.synth, &TrainConfig::default());
    let ckpt_a = write_checkpoint(&e.main.outcome.state.params);
    let ckpt_b = write_checkpoint(&second.outcome.state.params);
    let (_, decode_a) = decode_dev(&e.main, &e.synth, &e.lm, DecodeMode::FullSum);
    let (_, decode_b) = decode_dev(&second, &e.synth, &e.lm, DecodeMode::FullSum);
    let ok = ckpt_a == ckpt_b && decode_a == decode_b;
    report(
        7,
        ok,
        &format!(
            "checkpoints {} ({} bytes), decode outputs {} ({} lines)",
            if ckpt_a == ckpt_b { "identical" } else { "differ" },
            ckpt_a.len(),
            if decode_a == decode_b { "identical" } else { "differ" },
            decode_a.lines().count()
        ),
    );
}

#[test]
fn criterion_8_lm_backoff_correctness() {
    let arpa = "\\data\\\nngram 1=5\nngram 2=5\n\n\\1-grams:\n\
-0.7\t<s>\t-0.3\n-0.9\t</s>\n-0.5\ta\t-0.2\n-0.8\tb\t-0.1\n-1.0\tc\t0.0\n\n\
\\2-grams:\n-0.2\t<s> a\n-0.4\ta b\n-0.3\tb </s>\n-0.6\ta a\n-0.5\tb c\n\\end\\\n";
    let lm = parse_arpa(arpa).unwrap();
    // joint log10 probabilities, back-off recursion evaluated by hand
    let cases: &[(&[&str], f64)] = &[
        (&["a", "b"], -0.9),
        (&["a", "a"], -1.9),
        (&["b"], -1.4),
        (&["c"], -2.2),
        (&["b", "c", "a"], -3.2),
    ];
    let ln10 = std::f64::consts::LN_10;
    let mut worst: f64 = 0.0;
    for (words, want_log10) in cases {
        let mut state = lm.initial_state();
        let mut total = 0.0;
        for w in words.iter().chain(std::iter::once(&"</s>")) {
            let (lp, next) = lm.score(&state, w);
            total += lp;
            state = next;
        }
        worst = worst.max((total - want_log10 * ln10).abs());
    }
    report(
        8,
        worst < 1e-10,
        &format!("5 hand-scored sentences, max deviation {worst:.2e} (limit 1e-10)"),
    );
}
