use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lrca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrca")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lrca(args);
    assert!(
        out.status.success(),
        "lrca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_pipeline(root: &Path) {
    let spec = root.join("spec.toml");
    fs::write(&spec, "n_normal_train = 40\nn_normal_fit = 40\nn_faulty = 24\n").unwrap();
    let run = root.join("run.toml");
    fs::write(&run, "seed = 5\n[train]\nepochs = 8\n").unwrap();
    let data = root.join("data");
    ok(&["gen", "--config", s(&spec), "--out", s(&data)]);
    let losses = ok(&["train", "--dataset", s(&data), "--config", s(&run)]);
    assert_eq!(losses.lines().count(), 8);
    ok(&["fit-normal", "--dataset", s(&data)]);
    ok(&["eval", "--dataset", s(&data)]);
}

#[test]
fn default_spec_pipeline_reports_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--out", s(&data)]);
    ok(&["train", "--dataset", s(&data)]);
    ok(&["fit-normal", "--dataset", s(&data)]);
    let stdout = ok(&["eval", "--dataset", s(&data)]);
    assert!(stdout.lines().last().unwrap().starts_with("inference: "));
    let csv = fs::read_to_string(data.join("report/report.csv")).unwrap();
    let all: Vec<&str> = csv.lines().filter(|l| l.split(',').nth(1) == Some("ALL")).collect();
    assert_eq!(all.len(), 2);
    assert!(all[0].starts_with("faasrca,ALL,400,"));
    assert!(all[1].starts_with("direct,ALL,400,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("report/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 100);
}

#[test]
fn identical_runs_give_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_pipeline(a.path());
    small_pipeline(b.path());
    for f in ["data/model.lrca", "data/normal_patterns.tsv", "data/report/report.csv", "data/report/plot.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // Re-running in place overwrites with the same bytes.
    let data = a.path().join("data");
    let before = fs::read(data.join("report/report.csv")).unwrap();
    ok(&["eval", "--dataset", s(&data)]);
    assert_eq!(fs::read(data.join("report/report.csv")).unwrap(), before);
}

#[test]
fn seed_flag_overrides_config_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let data = dir.path().join("data");
    let model = dir.path().join("m.lrca");
    ok(&[
        "train", "--dataset", s(&data), "--config", s(&dir.path().join("run.toml")),
        "--seed", "11", "--out", s(&model),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.lrca.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["train"]["seed"], 11);
    assert_eq!(manifest["config"]["train"]["epochs"], 8);
}

#[test]
fn localize_single_trace_and_unknown_type() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let data = dir.path().join("data");

    let lines = ok(&["localize", "--dataset", s(&data), "--trace", "faulty-000000", "--methods", "faasrca,direct"]);
    let parsed: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0]["method"], "faasrca");
    assert_eq!(parsed[1]["method"], "direct");

    // Copy one trace and rewrite its request parameters to an unseen type.
    let odd = dir.path().join("odd");
    fs::create_dir(&odd).unwrap();
    for ext in ["spans", "logs", "metrics"] {
        let name = format!("faulty-000000.{ext}.jsonl");
        let text = fs::read_to_string(data.join("faulty").join(&name)).unwrap();
        let text = text
            .replace("\"query-orders\"", "\"billing\"")
            .replace("\"create-ticket\"", "\"billing\"");
        fs::write(odd.join(name), text).unwrap();
    }
    let out = lrca(&[
        "localize", "--dataset", s(&odd),
        "--model", s(&data.join("model.lrca")),
        "--store", s(&data.join("normal_patterns.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("http.host=billing"));
}

#[test]
fn localize_writes_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let data = dir.path().join("data");
    let out = dir.path().join("ranked.jsonl");
    let stdout = ok(&["localize", "--dataset", s(&data), "--out", s(&out)]);
    assert!(stdout.is_empty());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 24);
    assert!(dir.path().join("ranked.jsonl.manifest.json").is_file());
}

#[test]
fn stale_store_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let data = dir.path().join("data");
    ok(&["train", "--dataset", s(&data), "--config", s(&dir.path().join("run.toml")), "--seed", "99"]);
    let out = lrca(&["eval", "--dataset", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit-normal"));
}

#[test]
fn exit_codes() {
    assert_eq!(lrca(&[]).status.code(), Some(1));
    assert_eq!(lrca(&["train"]).status.code(), Some(1));
    assert_eq!(lrca(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = lrca(&["eval", "--dataset", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("lrca train"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochs = 0\n").unwrap();
    let out = lrca(&["train", "--dataset", s(dir.path()), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}
