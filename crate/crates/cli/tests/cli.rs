use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = "\
languages = en, sw
topics_per_lang = 5
passages_per_topic = 10
vocab_size = 200
topic_terms = 10
passage_len = 20
topic_mix = 0.4
train_queries_per_lang = 40
dev_queries_per_lang = 20
";

const PIPELINE: &str = "\
iterations = 2
warmup_epochs = 3
epochs_per_iter = 2
batch_size = 16
dim = 16
n_generate = 30
eval_k = 10, 100
";

fn lexmine(args: &[&str]) -> Output {
    lexmine_env(args, None)
}

fn lexmine_env(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lexmine"));
    cmd.args(args).env_remove("LEXMINE_DATA_DIR");
    if let Some(d) = data_dir {
        cmd.env("LEXMINE_DATA_DIR", d);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("synth.cfg"), SYNTH).unwrap();
        fs::write(dir.path().join("pipeline.cfg"), PIPELINE).unwrap();
        let f = Fixture { dir };
        ok(&lexmine(&["synth", "--config", f.s("synth.cfg"), "--seed", "4", "--out", f.s("data")]));
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> &'static str {
        Box::leak(self.path(rel).display().to_string().into_boxed_str())
    }
}

/// Relative path → bytes for every file below `root`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Report bytes without the wall-clock field.
fn report_without_timing(path: &Path) -> Value {
    let mut v = json(path);
    v.as_object_mut().unwrap().remove("wall_clock_secs");
    v
}

#[test]
fn synth_is_deterministic() {
    let f = Fixture::new();
    ok(&lexmine(&["synth", "--config", f.s("synth.cfg"), "--seed", "4", "--out", f.s("again")]));
    assert_eq!(tree(&f.path("data")), tree(&f.path("again")));
    ok(&lexmine(&["synth", "--config", f.s("synth.cfg"), "--seed", "5", "--out", f.s("other")]));
    assert_ne!(tree(&f.path("data"))["passages.jsonl"], tree(&f.path("other"))["passages.jsonl"]);
}

#[test]
fn pipeline_writes_every_iteration_and_matches_stagewise_run() {
    let f = Fixture::new();
    let common = ["--config", f.s("pipeline.cfg"), "--seed", "9", "--data", f.s("data")];
    let pipe = lexmine(&[&["pipeline", "--out", f.s("run")][..], &common].concat());
    ok(&pipe);
    let table = String::from_utf8_lossy(&pipe.stdout);
    assert!(table.contains("mrr@10"), "{table}");

    for t in 1..=2 {
        for file in ["mined.jsonl", "checkpoint.bin", "run.trec", "report.json"] {
            assert!(f.path(&format!("run/iter_{t}/{file}")).exists(), "iter_{t}/{file}");
        }
    }
    assert!(f.path("run/iter_2/generated.jsonl").exists());
    let summary = json(&f.path("run/summary.json"));
    assert_eq!(summary["iterations"].as_array().unwrap().len(), 3);

    ok(&lexmine(&[&["warmup", "--out", f.s("staged")][..], &common].concat()));
    for t in ["1", "2"] {
        for stage in ["mine", "generate", "train"] {
            ok(&lexmine(&[&[stage, "--out", f.s("staged"), "--iteration", t][..], &common].concat()));
        }
    }
    for t in 1..=2 {
        let a = f.path(&format!("run/iter_{t}"));
        let b = f.path(&format!("staged/iter_{t}"));
        for file in ["mined.jsonl", "checkpoint.bin", "run.trec", "generator.json"] {
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "iter_{t}/{file}");
        }
        assert_eq!(report_without_timing(&a.join("report.json")), report_without_timing(&b.join("report.json")));
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let f = Fixture::new();
    let common = ["--config", f.s("pipeline.cfg"), "--set", "iterations=1", "--seed", "2", "--data", f.s("data")];
    ok(&lexmine(&[&["--workers", "1", "pipeline", "--out", f.s("w1")][..], &common].concat()));
    ok(&lexmine(&[&["--workers", "4", "pipeline", "--out", f.s("w4")][..], &common].concat()));
    for file in ["iter_1/mined.jsonl", "iter_1/checkpoint.bin", "iter_1/run.trec"] {
        assert_eq!(fs::read(f.path("w1").join(file)).unwrap(), fs::read(f.path("w4").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn data_dir_from_environment() {
    let f = Fixture::new();
    let args = ["warmup", "--config", f.s("pipeline.cfg"), "--seed", "1", "--out", f.s("run")];
    let missing = lexmine(&args);
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));
    ok(&lexmine_env(&args, Some(&f.path("data"))));
    assert!(f.path("run/warmup/report.json").exists());
}

#[test]
fn eval_matches_independent_mrr() {
    let f = Fixture::new();
    let run = "q1 Q0 a 1 3.0 x\nq1 Q0 b 2 2.0 x\nq1 Q0 c 3 1.0 x\nq2 Q0 d 1 5.0 x\nq2 Q0 e 2 4.0 x\nq3 Q0 f 1 1.0 x\n";
    let qrels = "q1\t0\tc\t1\nq2\t0\td\t2\nq3\t0\tz\t1\nq4\t0\ta\t1\n";
    fs::write(f.path("run.trec"), run).unwrap();
    fs::write(f.path("qrels.tsv"), qrels).unwrap();
    let out = lexmine(&["eval", "--run", f.s("run.trec"), "--qrels", f.s("qrels.tsv"), "--k", "10", "--k", "2"]);
    ok(&out);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    // q1: first relevant at rank 3, q2: rank 1, q3 and q4: none.
    let expected10 = (1.0 / 3.0 + 1.0) / 4.0;
    let expected2 = 1.0 / 4.0;
    assert!((report["metrics"]["mrr@10"].as_f64().unwrap() - expected10).abs() < 1e-12);
    assert!((report["metrics"]["mrr@2"].as_f64().unwrap() - expected2).abs() < 1e-12);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let f = Fixture::new();
    let unknown = lexmine(&["synth", "--config", f.s("synth.cfg"), "--set", "bogus_key=1", "--seed", "1", "--out", f.s("x")]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("bogus_key"), "{}", stderr(&unknown));

    let invariant = lexmine(&[
        "pipeline", "--config", f.s("pipeline.cfg"), "--set", "mining.l=1", "--set", "mining.s=3",
        "--seed", "1", "--data", f.s("data"), "--out", f.s("y"),
    ]);
    assert_eq!(invariant.status.code(), Some(2));
    assert!(stderr(&invariant).contains("mining.l"), "{}", stderr(&invariant));

    let no_seed = lexmine(&["synth", "--config", f.s("synth.cfg"), "--out", f.s("z")]);
    assert_eq!(no_seed.status.code(), Some(2));
    assert!(stderr(&no_seed).contains("--seed"), "{}", stderr(&no_seed));

    let zero_workers = lexmine(&["--workers", "0", "synth", "--seed", "1", "--out", f.s("w")]);
    assert_eq!(zero_workers.status.code(), Some(2));
    assert!(stderr(&zero_workers).contains("workers"));
}

#[test]
fn malformed_data_exits_3_with_location() {
    let f = Fixture::new();
    let passages = f.path("data/passages.jsonl");
    let mut text = fs::read_to_string(&passages).unwrap();
    text.push_str("{\"id\": \"broken\", \"text\": \n");
    let line = text.lines().count();
    fs::write(&passages, text).unwrap();
    let out = lexmine(&["warmup", "--config", f.s("pipeline.cfg"), "--seed", "1", "--data", f.s("data"), "--out", f.s("run")]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("passages.jsonl") && err.contains(&format!(":{line}")), "{err}");
}

#[test]
fn existing_output_needs_overwrite() {
    let f = Fixture::new();
    let again = lexmine(&["synth", "--config", f.s("synth.cfg"), "--seed", "4", "--out", f.s("data")]);
    assert_eq!(again.status.code(), Some(2), "{}", stderr(&again));
    ok(&lexmine(&["synth", "--config", f.s("synth.cfg"), "--seed", "4", "--out", f.s("data"), "--overwrite"]));

    let warm = ["warmup", "--config", f.s("pipeline.cfg"), "--seed", "1", "--data", f.s("data"), "--out", f.s("run")];
    ok(&lexmine(&warm));
    let refused = lexmine(&warm);
    assert_eq!(refused.status.code(), Some(2), "{}", stderr(&refused));
    ok(&lexmine(&[&warm[..], &["--overwrite"]].concat()));
}
