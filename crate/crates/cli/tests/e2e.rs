//! End-to-end runs of the `ptk` binary over a small synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn ptk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptk"))
        .args(args)
        .output()
        .expect("spawn ptk")
}

fn ok(args: &[&str]) -> String {
    let out = ptk(args);
    assert!(
        out.status.success(),
        "ptk {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");

    std::fs::write(
        dir.path().join("synth.spec"),
        "seed=1\nlexicon_words=8\ntrain_utterances=12\ndev_utterances=4\nutterance_words=2..3\n",
    )
    .unwrap();
    ok(&[
        "make-synth",
        "--spec",
        &path(&dir.path().join("synth.spec")),
        "--out",
        &path(&corpus),
    ]);
    for f in ["lexicon.txt", "lm.arpa", "train/alignments.txt", "dev/features/all.txt"] {
        assert!(corpus.join(f).exists(), "missing {f}");
    }

    std::fs::write(dir.path().join("train.cfg"), "epochs=3\npretrain_epochs=1\nconst_lr_epochs=1\nhidden_dim=16\nffnn_dim=16\nembed_dim=4\n").unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("train.log");
    let stdout = ok(&[
        "train",
        "--config",
        &path(&dir.path().join("train.cfg")),
        "--lexicon",
        &path(&corpus.join("lexicon.txt")),
        "--align",
        &path(&corpus.join("train/alignments.txt")),
        "--features",
        &path(&corpus.join("train/features")),
        "--dev-align",
        &path(&corpus.join("dev/alignments.txt")),
        "--dev-features",
        &path(&corpus.join("dev/features")),
        "--out",
        &path(&ckpt),
        "--log",
        &path(&log),
        "-s",
        "epochs=2",
    ]);
    assert!(stdout.contains("wrote checkpoint"));
    // the -s override wins over the config file: 1 + 2 epochs
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 3);
    for line in log_text.lines() {
        assert_eq!(line.split('\t').count(), 4);
    }

    let hyp = dir.path().join("dev.hyp");
    ok(&[
        "decode",
        "--ckpt",
        &path(&ckpt),
        "--lexicon",
        &path(&corpus.join("lexicon.txt")),
        "--lm",
        &path(&corpus.join("lm.arpa")),
        "--features",
        &path(&corpus.join("dev/features")),
        "--mode",
        "fullsum",
        "--lm-scale",
        "0.9",
        "--beam",
        "12",
        "--max-hyps",
        "256",
        "--lookahead",
        "--out",
        &path(&hyp),
    ]);
    let hyp_text = std::fs::read_to_string(&hyp).unwrap();
    assert_eq!(hyp_text.lines().count(), 4);
    for line in hyp_text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3);
        fields[1].parse::<f64>().unwrap();
    }

    let wer_out = ok(&[
        "score-wer",
        "--ref",
        &path(&corpus.join("dev/refs.txt")),
        "--hyp",
        &path(&hyp),
    ]);
    assert!(wer_out.starts_with("WER "), "got {wer_out}");

    let aligned = dir.path().join("dev.align");
    ok(&[
        "align",
        "--ckpt",
        &path(&ckpt),
        "--lexicon",
        &path(&corpus.join("lexicon.txt")),
        "--features",
        &path(&corpus.join("dev/features")),
        "--ref",
        &path(&corpus.join("dev/refs.txt")),
        "--out",
        &path(&aligned),
    ]);
    let realigned =
        ptk_core::alignment_io::parse_alignment_file(&std::fs::read_to_string(&aligned).unwrap())
            .unwrap();
    assert_eq!(realigned.len(), 4);

    // decoding is reproducible byte for byte
    let hyp2 = dir.path().join("dev2.hyp");
    ok(&[
        "decode",
        "--ckpt",
        &path(&ckpt),
        "--lexicon",
        &path(&corpus.join("lexicon.txt")),
        "--lm",
        &path(&corpus.join("lm.arpa")),
        "--features",
        &path(&corpus.join("dev/features")),
        "--out",
        &path(&hyp2),
    ]);
    let hyp3 = dir.path().join("dev3.hyp");
    ok(&[
        "decode",
        "--ckpt",
        &path(&ckpt),
        "--lexicon",
        &path(&corpus.join("lexicon.txt")),
        "--lm",
        &path(&corpus.join("lm.arpa")),
        "--features",
        &path(&corpus.join("dev/features")),
        "--out",
        &path(&hyp3),
    ]);
    assert_eq!(
        std::fs::read(&hyp2).unwrap(),
        std::fs::read(&hyp3).unwrap()
    );
}

#[test]
fn oracle_check_passes_and_exit_codes_hold() {
    let out = ptk(&["oracle-check", "--suite", "topology", "--seed", "5"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));

    // usage error: missing file
    let out = ptk(&["score-wer", "--ref", "/no/such/file", "--hyp", "/no/such/file"]);
    assert_eq!(out.status.code(), Some(2));

    // usage error: malformed override
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lex.txt"), "A\ta\n").unwrap();
    let out = ptk(&[
        "train",
        "--lexicon",
        &path(&dir.path().join("lex.txt")),
        "--align",
        &path(&dir.path().join("missing.align")),
        "--features",
        &path(dir.path()),
        "--out",
        &path(&dir.path().join("x.ckpt")),
        "-s",
        "bogus_key=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
