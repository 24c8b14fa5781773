use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn seq2cause(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seq2cause"))
        .current_dir(dir)
        .env_remove("SEQ2CAUSE_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed; returns the output paths it printed.
fn ok(dir: &Path, args: &[&str]) -> Vec<PathBuf> {
    let out = seq2cause(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().lines().map(|l| dir.join(l)).collect()
}

fn find(paths: &[PathBuf], stem: &str) -> PathBuf {
    paths
        .iter()
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with(&format!("{stem}-")))
        .unwrap_or_else(|| panic!("no {stem} output in {paths:?}"))
        .clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// SCM, dataset, labeled dataset and plan in `dir`.
struct Fixture {
    dir: TempDir,
    scm: PathBuf,
    data: PathBuf,
    labeled: PathBuf,
    plan: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let scm = find(&ok(d, &["gen-scm", "--vocab", "8", "--memory", "2", "--density", "0.3"]), "scm");
    let data = find(&ok(d, &["sample", "--scm", s(&scm), "--len", "14", "--count", "6"]), "data");
    let out = ok(d, &["plant-labels", "--data", s(&data), "--scm", s(&scm), "--rule", "x1 | x2", "--rule", "x3"]);
    let (labeled, plan) = (find(&out, "labeled"), find(&out, "plan"));
    Fixture { dir, scm, data, labeled, plan }
}

#[test]
fn gen_scm_at_full_density_lists_every_weight() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["gen-scm", "--vocab", "4", "--memory", "1", "--density", "1.0"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(find(&out, "scm")).unwrap()).unwrap();
    let lags = v["weights"].as_array().unwrap();
    assert_eq!(lags.len(), 1);
    assert_eq!(lags[0].as_array().unwrap().len(), 16);
}

#[test]
fn sample_with_zero_count_writes_empty_file() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["sample", "--count", "0", "--len", "8"]);
    assert_eq!(std::fs::read(find(&out, "data")).unwrap(), b"");
}

#[test]
fn reruns_write_identical_bytes_and_echo_the_config() {
    let dir = TempDir::new().unwrap();
    let args = ["sample", "--vocab", "6", "--count", "5", "--len", "10", "--seed", "4"];
    let a = ok(dir.path(), &args);
    let first = std::fs::read(&a[0]).unwrap();
    let b = ok(dir.path(), &args);
    assert_eq!(a, b);
    assert_eq!(std::fs::read(&b[0]).unwrap(), first);

    let name = a[0].file_name().unwrap().to_str().unwrap();
    let hash = name.trim_start_matches("data-").trim_end_matches(".jsonl");
    let echo = std::fs::read_to_string(dir.path().join(format!("sample-config-{hash}.toml"))).unwrap();
    assert!(echo.contains("seed = 4"));

    let other = ok(dir.path(), &["sample", "--vocab", "6", "--count", "5", "--len", "10", "--seed", "5"]);
    assert_ne!(other, a);
}

#[test]
fn out_dir_does_not_change_the_hash() {
    let dir = TempDir::new().unwrap();
    let a = ok(dir.path(), &["gen-scm", "--vocab", "5"]);
    let b = ok(dir.path(), &["--out", "sub", "gen-scm", "--vocab", "5"]);
    assert_eq!(a[0].file_name(), b[0].file_name());
    assert!(b[0].starts_with(dir.path().join("sub")));
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(seq2cause(d, &["gen-scm", "--density", "1.5"]).status.code(), Some(2));
    assert_eq!(seq2cause(d, &["no-such-command"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[scm]\nvocab = 3\n").unwrap();
    assert_eq!(seq2cause(d, &["--config", "bad.toml", "gen-scm"]).status.code(), Some(2));
    assert_eq!(seq2cause(d, &["plant-labels", "--data", "missing.jsonl", "--vocab", "4"]).status.code(), Some(1));

    std::fs::write(d.join("bad.jsonl"), "{\"tokens\":[4,1]}\n{\"tokens\":[4,9]}\n").unwrap();
    let out = seq2cause(d, &["plant-labels", "--data", "bad.jsonl", "--vocab", "4", "--rule", "x1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "seed = 9\n[scm]\nvocab_size = 3\nmemory = 1\ndensity = 1.0\n").unwrap();
    let out = ok(d, &["--config", "c.toml", "gen-scm"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out[0]).unwrap()).unwrap();
    assert_eq!(v["vocab_size"], 3);
    assert_eq!(v["seed"], 9);
    let out = ok(d, &["--config", "c.toml", "gen-scm", "--vocab", "5"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out[0]).unwrap()).unwrap();
    assert_eq!(v["vocab_size"], 5);
}

#[test]
fn plant_labels_adds_one_label_per_rule() {
    let f = fixture();
    let text = std::fs::read_to_string(&f.labeled).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["labels"].as_array().unwrap().len(), 2);
    }
    let plan = std::fs::read_to_string(&f.plan).unwrap();
    assert!(plan.contains("x3"));
}

#[test]
fn trace_with_infinite_threshold_gives_empty_graphs() {
    let f = fixture();
    let out = ok(f.dir.path(), &["discover-trace", "--data", s(&f.data), "--scm", s(&f.scm), "--context", "3", "--tau", "inf"]);
    for stem in ["trace", "summary"] {
        let text = std::fs::read_to_string(find(&out, stem)).unwrap();
        assert_eq!(text.lines().count(), 6);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["edges"].as_array().unwrap().is_empty(), "{line}");
        }
    }
}

#[test]
fn union_fusion_of_one_graph_is_identity() {
    let f = fixture();
    let d = f.dir.path();
    let out = ok(d, &[
        "discover-oscar", "--data", s(&f.labeled), "--scm", s(&f.scm), "--plan", s(&f.plan),
        "--context", "3", "--rollouts", "8",
    ]);
    let graphs = std::fs::read_to_string(find(&out, "oscar")).unwrap();
    let first = graphs.lines().find(|l| l.contains("\"src\"")).expect("some sequence has an edge");
    std::fs::write(d.join("one.jsonl"), format!("{first}\n")).unwrap();
    let fused = ok(d, &["fuse", "--graphs", "one.jsonl", "--strategy", "union"]);

    let edges = |text: &str| -> Vec<(String, String)> {
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["edges"].as_array().unwrap().iter().map(|e| (e["src"].to_string(), e["dst"].to_string())).collect()
    };
    assert_eq!(edges(&std::fs::read_to_string(find(&fused, "fused")).unwrap()), edges(first));
    assert!(fused.iter().any(|p| p.extension().unwrap() == "dot"));
}

#[test]
fn eval_of_identical_graphs_scores_one() {
    let f = fixture();
    let d = f.dir.path();
    let out = ok(d, &["discover-trace", "--data", s(&f.data), "--scm", s(&f.scm), "--context", "3", "--tau", "0.01"]);
    let summary = find(&out, "summary");
    let eval = ok(d, &["eval", "--pred", s(&summary), "--truth", s(&summary)]);
    let csv = std::fs::read_to_string(find(&eval, "eval")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "f1").unwrap();
    for line in lines {
        assert_eq!(line.split(',').nth(col).unwrap().parse::<f64>().unwrap(), 1.0, "{line}");
    }
}

#[test]
fn bench_writes_one_row_per_seed_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("b.toml"),
        "[bench]\nkind = \"trace\"\nn_seeds = 3\n[bench.trace]\nseq_len = 24\nn_sequences = 2\n[bench.trace.scm]\nvocab_size = 10\ndensity = 0.1\n",
    )
    .unwrap();
    let out = ok(d, &["--config", "b.toml", "bench"]);
    let csv = std::fs::read_to_string(find(&out, "bench")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[0].starts_with("config_hash,"));
    assert!(lines[4].contains('±'));

    let out = ok(d, &["bench", "--kind", "fusion-sim", "--seeds", "2", "--count", "50"]);
    let csv = std::fs::read_to_string(find(&out, "bench")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let f = fixture();
    let d = f.dir.path();
    let commands: [Vec<&str>; 3] = [
        vec!["discover-trace", "--data", s(&f.data), "--scm", s(&f.scm), "--context", "3"],
        vec!["discover-trace", "--data", s(&f.data), "--scm", s(&f.scm), "--context", "3", "--estimator", "perturbed", "--eps", "0.1"],
        vec!["discover-oscar", "--data", s(&f.labeled), "--scm", s(&f.scm), "--plan", s(&f.plan), "--context", "3", "--rollouts", "8"],
    ];
    for args in &commands {
        let mut reference: Option<Vec<Vec<u8>>> = None;
        for workers in ["1", "4", "8"] {
            let out_dir = format!("w{workers}");
            let mut full = vec!["--workers", workers, "--out", out_dir.as_str()];
            full.extend(args.iter().copied());
            let bytes: Vec<Vec<u8>> = ok(d, &full).iter().map(|p| std::fs::read(p).unwrap()).collect();
            match &reference {
                None => reference = Some(bytes),
                Some(r) => assert!(r == &bytes, "{args:?} differs at {workers} workers"),
            }
        }
    }
}

#[test]
fn workers_default_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_seq2cause"))
        .current_dir(dir.path())
        .env("SEQ2CAUSE_THREADS", "2")
        .args(["gen-scm", "--vocab", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_seq2cause"))
        .current_dir(dir.path())
        .env("SEQ2CAUSE_THREADS", "many")
        .args(["gen-scm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
