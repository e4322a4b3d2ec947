use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn morphkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphkit")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn grad_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = morphkit(dir.path(), &["grad-check", "--hidden", "8", "--vocab", "20", "--per-group", "20", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(v["passed"], true);
}

#[test]
fn normalize_index_mine_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("raw.txt"), "A b c d.\na b c e\n\na b f e\nA G F E\nh g f e\n").unwrap();
    assert_eq!(code(&morphkit(d, &["normalize", "--input", "raw.txt", "--output", "corpus.txt"])), 0);
    let norm = fs::read_to_string(d.join("corpus.txt")).unwrap();
    assert_eq!(norm.lines().count(), 5);
    assert!(norm.starts_with("a b c d .\n"));

    // drop the trailing period so the first sentence matches the chain
    fs::write(d.join("corpus.txt"), "a b c d\na b c e\na b f e\na g f e\nh g f e\n").unwrap();
    assert_eq!(code(&morphkit(d, &["build-index", "--corpus", "corpus.txt", "--output", "idx"])), 0);
    let o = morphkit(d, &["mine", "--corpus", "corpus.txt", "--index", "idx", "--count", "10"]);
    assert_eq!(code(&o), 0);
    let seqs = morphkit::miner::read_sequences(&o.stdout[..]).unwrap();
    let mut got: Vec<String> = seqs.iter().map(|q| q.source().join()).collect();
    got.sort();
    assert_eq!(got, ["a b c d", "h g f e"]);
    assert!(seqs.iter().all(|q| q.steps() == 4));
}

#[test]
fn eval_scores_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seq = morphkit::miner::MorphSequence::new(
        ["a b c d", "a b c e", "a b f e", "a g f e", "h g f e"]
            .iter()
            .map(|t| morphkit::textcore::Sentence::from_tokenized(t).unwrap())
            .collect(),
        morphkit::miner::Provenance::Mined,
    )
    .unwrap();
    let mut buf = Vec::new();
    morphkit::miner::write_sequences(&mut buf, &[seq]).unwrap();
    fs::write(d.join("paths.jsonl"), buf).unwrap();
    let o = morphkit(d, &["eval", "--paths", "paths.jsonl", "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["smoothness_max"], 0.4);
    assert_eq!(v["smoothness_avg"], 0.4);

    fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(code(&morphkit(d, &["eval", "--paths", "empty.jsonl"])), 2);
    assert_eq!(code(&morphkit(d, &["eval", "--paths", "missing.jsonl"])), 2);
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&morphkit(d, &["no-such-command"])), 1);
    assert_eq!(code(&morphkit(d, &["mine", "--corpus", "c"])), 1);
    fs::write(d.join("c.txt"), "a b\n").unwrap();
    fs::write(d.join("i"), "").unwrap();
    let o = morphkit(d, &["mine", "--corpus", "c.txt", "--index", "i", "--eps", "1.5"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&morphkit(d, &["--help"])), 0);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gc.conf"), "hidden = 6\nper_group = 5\njson = true\n").unwrap();
    let o = morphkit(d, &["--config", "gc.conf", "grad-check", "--vocab", "14"]);
    assert_eq!(code(&o), 0);
    let log = String::from_utf8_lossy(&o.stderr);
    assert!(log.contains("\"hidden\":6") && log.contains("\"vocab\":14"), "{log}");
    assert!(serde_json::from_slice::<serde_json::Value>(&o.stdout).is_ok());
}
