// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_assertscope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn assertscope")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dump_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.actd");
    let out = run(&["localize", "--input", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.actd"));
}

#[test]
fn missing_pipeline_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.actd");
    let out = run(&["pipeline", "--input", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.actd"));
}

#[test]
fn bad_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.actd");
    fs::write(&bogus, b"not a dump").unwrap();
    fs::write(bogus.with_extension("meta.json"), b"[]").unwrap();
    let out = run(&["localize", "--input", s(&bogus), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_thread_count_exits_1() {
    let out = bin().env("ASSERTSCOPE_THREADS", "many").arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dump = d.join("plant.actd");
    ok(&["synth", "--out", s(&dump), "--seed", "3"]);
    assert!(dump.with_extension("meta.json").exists());
    let truth = read_json(&dump.with_extension("truth.json"));
    let spec = read_json(&dump.with_extension("spec.json"));
    assert_eq!(spec["seed"], 3);

    let clean = d.join("clean.actd");
    ok(&["debias", "--input", s(&dump), "--out", s(&clean)]);
    let reports = read_json(&clean.with_extension("debias.json"));
    assert_eq!(reports.as_array().unwrap().len(), 16);

    let sim = d.join("sim");
    ok(&["similarity", "--input", s(&dump), "--layer", "5", "--out", s(&sim), "--borderline", "620"]);
    let regions = read_json(&sim.join("regions.json"));
    assert!(regions["within_high"].as_f64().unwrap() > regions["cross"].as_f64().unwrap());
    assert!(sim.join("similarity.csv").exists() && sim.join("similarity.svg").exists());

    let loc = d.join("loc");
    ok(&["localize", "--input", s(&dump), "--out", s(&loc)]);
    let curve = read_json(&loc.join("localize.json"));
    assert_eq!(curve["best_layer"], 5);

    // Labels from the generator's record: meta order is the sample order.
    let meta = read_json(&dump.with_extension("meta.json"));
    let ids: Vec<String> =
        meta.as_array().unwrap().iter().map(|m| m["sample_id"].as_str().unwrap().to_owned()).collect();
    let groups: Vec<String> =
        truth["groups"].as_array().unwrap().iter().map(|g| g.as_str().unwrap().to_owned()).collect();
    let labels: BTreeMap<&str, &str> = ids.iter().zip(&groups).map(|(i, g)| (i.as_str(), g.as_str())).collect();
    let label_path = d.join("labels.json");
    fs::write(&label_path, serde_json::to_string(&labels).unwrap()).unwrap();

    let high_ids: Vec<&String> = ids[620..].iter().collect();
    let ids_path = d.join("ids.json");
    fs::write(&ids_path, serde_json::to_string(&high_ids).unwrap()).unwrap();
    let high_labels: BTreeMap<&str, &str> =
        high_ids.iter().map(|i| (i.as_str(), labels[i.as_str()])).collect();
    let high_label_path = d.join("high_labels.json");
    fs::write(&high_label_path, serde_json::to_string(&high_labels).unwrap()).unwrap();

    let emb = d.join("emb");
    ok(&[
        "embed", "--input", s(&dump), "--layer", "5", "--out", s(&emb), "--ids", s(&ids_path), "--labels",
        s(&high_label_path), "--iterations", "300",
    ]);
    let csv = fs::read_to_string(emb.join("embedding.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert!(fs::read_to_string(emb.join("embedding.svg")).unwrap().contains("<svg"));

    let vectors = d.join("vectors.json");
    ok(&[
        "steer", "--input", s(&dump), "--layer", "5", "--labels", s(&label_path), "--baseline", "low-other",
        "--out", s(&vectors),
    ]);
    let v = read_json(&vectors);
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|x| x["label"].as_str().unwrap()).collect();
    assert_eq!(names, ["high-emotional", "high-logical", "low-emotional"]);

    let abl = d.join("abl");
    ok(&["ablate", "--input", s(&dump), "--vectors", s(&vectors), "--groups", s(&label_path), "--out", s(&abl)]);
    let rows = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert!(rows.starts_with("vector,layer,group,n,rmse_before,rmse_after,delta,sem,flagged"));
    assert_eq!(rows.lines().count(), 1 + 3 * 4);
    assert!(abl.join("ablation.svg").exists() && abl.join("ablation.json").exists());
}

#[test]
fn steer_with_unknown_baseline_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dump = d.join("p.actd");
    ok(&["synth", "--out", s(&dump)]);
    let labels = d.join("l.json");
    fs::write(&labels, r#"{"s0000": "a", "s0001": "a"}"#).unwrap();
    let out = run(&[
        "steer", "--input", s(&dump), "--layer", "5", "--labels", s(&labels), "--baseline", "zzz", "--out",
        s(&d.join("v.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zzz"));
}

const MANIFEST: [&str; 13] = [
    "ablation.csv",
    "ablation.svg",
    "config.json",
    "embedding.csv",
    "embedding.svg",
    "layers.csv",
    "layers.svg",
    "partition.csv",
    "partition.svg",
    "similarity.csv",
    "similarity.svg",
    "steering.json",
    "summary.json",
];

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn pipeline_manifest_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["pipeline", "--synth-default", "--seed", "4", "--tsne-iterations", "400", "--out", s(&a)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("best layer 5"));
    assert_eq!(listing(&a), MANIFEST);

    let cfg = read_json(&a.join("config.json"));
    assert_eq!(cfg["tsne_iterations"], 400);
    assert!(cfg.get("out").is_none());

    // Re-running from the echoed config under a thread cap reproduces every artifact.
    let out = bin()
        .env("ASSERTSCOPE_THREADS", "2")
        .args(["pipeline", "--config", s(&a.join("config.json")), "--out", s(&b)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in MANIFEST {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }

    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["best_layer"], 5);
    assert_eq!(summary["recovery"].as_array().unwrap().len(), 2);
}

#[test]
fn pipeline_without_source_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pipeline", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}
