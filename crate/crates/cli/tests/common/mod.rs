#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"seed = 5

[paths]
corpus_in = "corpus"
commits = "commits.jsonl"
work_dir = "work"

[abstraction]
idiom_budget = 50
mode = "abstract"

[tokenizer]
num_merges = 200
raw_merges = 50

[masking]
window = 64

[model]
num_layers = 1
model_dim = 32
num_heads = 4
ffn_dim = 64
max_positions = 256

[[train.stages]]
tag = "stageA"
objective = "denoise"
steps = 12
batch_size = 4

[[train.stages]]
tag = "finetuned"
objective = "repair"
steps = 12
batch_size = 4

[eval]
test_fraction = 0.3
beam_width = 2
max_len = 48
"#;

pub fn bugforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bugforge"))
        .current_dir(dir)
        .env_remove("BUGFORGE_SEED")
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

#[track_caller]
pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A project directory with the tiny config and a synthetic corpus.
pub fn tiny_project(dir: &Path) {
    std::fs::write(dir.join("bugforge.toml"), TINY_CONFIG).unwrap();
    ok(&bugforge(dir, &["synth", "--repos", "2", "--files-per-repo", "3", "--commits", "40"]));
}

/// Every file below `root`, by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
