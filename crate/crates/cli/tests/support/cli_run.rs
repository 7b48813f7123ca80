//! Drives the `coins` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"seed = 1

[model]
hidden = 32

[train]
epochs = 2
batch_size = 4
inputs = ["full", "prefix_only"]

[decode]
beam = 2
"#;

pub fn coins(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coins"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("coins binary runs")
}

/// Runs `args` and panics with its stderr unless it succeeds.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = coins(dir, args);
    assert!(
        out.status.success(),
        "coins {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Synthesizes a corpus, trains every model, completes the test split in
/// two modes and evaluates. Everything lands under `dir`.
pub fn full_pipeline(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
    let steps: &[&[&str]] = &[
        &["--out", "synth", "synth", "--stories", "24"],
        &[
            "--out",
            "nsc",
            "build-nsc",
            "--stories",
            "synth/stories.jsonl",
            "--records",
            "synth/records.jsonl",
        ],
        &[
            "--out",
            "vocab",
            "train-vocab",
            "--stories",
            "synth/stories.jsonl",
            "--records",
            "synth/records.jsonl",
        ],
        &[
            "--out",
            "csi",
            "train-csi",
            "--vocab",
            "vocab/vocab.json",
            "--stories",
            "synth/stories.jsonl",
            "--records",
            "synth/records.jsonl",
        ],
        &[
            "--out",
            "enr",
            "enrich",
            "--vocab",
            "vocab/vocab.json",
            "--csi",
            "csi/csi.ckpt",
            "--nsc",
            "nsc/train.jsonl",
        ],
        &[
            "--out",
            "coins",
            "train-coins",
            "--vocab",
            "vocab/vocab.json",
            "--nsc",
            "enr/nsc.jsonl",
            "--csi",
            "csi/csi.ckpt",
        ],
        &[
            "--out",
            "base",
            "train-baseline",
            "--vocab",
            "vocab/vocab.json",
            "--nsc",
            "nsc/train.jsonl",
        ],
        &[
            "--out",
            "comp",
            "complete",
            "--vocab",
            "vocab/vocab.json",
            "--sentence",
            "coins/sentence.ckpt",
            "--csi",
            "coins/csi.ckpt",
            "--nsc",
            "nsc/test.jsonl",
        ],
        &[
            "--mode",
            "oracle",
            "--out",
            "oracle",
            "complete",
            "--vocab",
            "vocab/vocab.json",
            "--sentence",
            "coins/sentence.ckpt",
            "--nsc",
            "nsc/test.jsonl",
        ],
        &[
            "--out",
            "ev",
            "evaluate",
            "--gold",
            "nsc/test.jsonl",
            "--system",
            "comp/completions.jsonl",
            "oracle/completions.jsonl",
            "--ppl-model",
            "coins/sentence.ckpt",
            "coins/sentence.ckpt",
            "--vocab",
            "vocab/vocab.json",
        ],
    ];
    for step in steps {
        let mut args = vec!["--config", "tiny.toml"];
        args.extend_from_slice(step);
        ok(dir, &args);
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
