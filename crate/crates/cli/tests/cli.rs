use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn smartfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smartfd")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/motorway.toml")
}

/// A synthetic dataset generated from the bundled fixture.
fn dataset(root: &Path) -> PathBuf {
    let dir = root.join("data");
    let out = smartfd(&["--out-dir", s(&dir), "synth", s(&fixture())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_dataset_truth_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    for f in ["links.csv", "timeseries.csv", "events.csv", "signs.csv", "truth.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let truth = json(&dir.join("truth.json"));
    // Link i gets the dataset seed plus i.
    assert_eq!(truth["links"][1]["synth"]["seed"], 2025);
    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 5);
}

#[test]
fn ingest_round_trips_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("ingested");
    let out = smartfd(&["--out-dir", s(&out_dir), "ingest", "--data", s(&dir)]);
    assert_eq!(code(&out), 0);
    for f in ["links.csv", "timeseries.csv", "events.csv", "signs.csv"] {
        assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(out_dir.join("dataset").join(f)).unwrap(), "{f}");
    }
    let summary = json(&out_dir.join("ingest.json"));
    assert_eq!(summary["usable"].as_array().unwrap().len(), 7);
}

#[test]
fn manifest_hashes_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("fit");
    let out = smartfd(&["--out-dir", s(&out_dir), "--links", "B1,C1", "fit", "--data", s(&dir), "--starts", "10"]);
    assert_eq!(code(&out), 0);
    let manifest = json(&out_dir.join("manifest.json"));
    let outputs = manifest["outputs"].as_array().unwrap();
    let paths: Vec<&str> = outputs.iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(paths, ["fit/B1.json", "fit/C1.json", "fit/ranking.csv"]);
    for o in outputs {
        let bytes = fs::read(out_dir.join(o["path"].as_str().unwrap())).unwrap();
        let hex: String = sha256(&bytes);
        assert_eq!(o["sha256"].as_str().unwrap(), hex);
    }
    let fit = json(&out_dir.join("fit/B1.json"));
    assert_eq!(fit["config_hash"], manifest["config_hash"]);
    let ranking = fs::read_to_string(out_dir.join("fit/ranking.csv")).unwrap();
    assert!(ranking.starts_with("link_id,model,rmse,r2,sse\n"));
    assert_eq!(ranking.lines().count(), 1 + 2 * 7);
}

fn sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let config = tmp.path().join("run.toml");
    fs::write(&config, "model = \"greenshields\"\nstarts = 5\n").unwrap();
    let out_dir = tmp.path().join("out");
    let args = ["--config", s(&config), "--out-dir", s(&out_dir), "--links", "A1", "fit", "--data", s(&dir)];
    assert_eq!(code(&smartfd(&args)), 0);
    let manifest = json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["settings"]["model"], "greenshields");

    let mut args = args.to_vec();
    args.extend(["--model", "daganzo_newell"]);
    assert_eq!(code(&smartfd(&args)), 0);
    let manifest = json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["settings"]["model"], "daganzo_newell");
    assert_eq!(manifest["settings"]["starts"], 5);
}

#[test]
fn kde_writes_grid_and_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("kde");
    let out = smartfd(&["--out-dir", s(&out_dir), "--links", "V1", "kde", "--data", s(&dir), "--grid", "64x64"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = json(&out_dir.join("kde/V1.json"));
    assert_eq!(grid["values"].as_array().unwrap().len(), 64 * 64);
    let modes = fs::read_to_string(out_dir.join("kde/V1.modes.csv")).unwrap();
    assert!(modes.starts_with("x,y,kde,density,flow\n"));
    assert!(modes.lines().count() >= 3, "{modes}");
}

#[test]
fn cluster_links_recovers_archetypes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("clusters");
    let out = smartfd(&["--out-dir", s(&out_dir), "--links", "A1,A2,B1,B2,C1,C2", "cluster-links", "--data", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("clusters/assignments.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(labels, ["0", "0", "1", "1", "2", "2"]);
    let dendrogram = json(&out_dir.join("clusters/dendrogram.json"));
    assert_eq!(dendrogram.as_array().unwrap().len(), 5);
}

#[test]
fn input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("out");
    let bad_config = tmp.path().join("bad.toml");
    fs::write(&bad_config, "colour = 1\n").unwrap();
    let missing = tmp.path().join("missing");
    let cases: Vec<Vec<&str>> = vec![
        vec!["fit", "--data", s(&missing)],
        vec!["--links", "nope", "fit", "--data", s(&dir)],
        vec!["fit", "--data", s(&dir), "--model", "bogus"],
        vec!["--config", s(&bad_config), "fit", "--data", s(&dir)],
        vec!["kde", "--data", s(&dir), "--grid", "12"],
        vec!["--links", "A1,B1", "cluster-links", "--data", s(&dir), "--k", "5"],
        vec!["frobnicate"],
    ];
    for case in cases {
        let mut args = vec!["--out-dir", s(&out_dir)];
        args.extend(&case);
        let out = smartfd(&args);
        assert_eq!(code(&out), 2, "{case:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn optimizer_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let config = tmp.path().join("hard.toml");
    // One iteration cannot meet a tolerance this tight.
    fs::write(&config, "max_iterations = 1\ntolerance = 1e-300\n").unwrap();
    let out_dir = tmp.path().join("out");
    let args = [
        "--config",
        s(&config),
        "--out-dir",
        s(&out_dir),
        "--links",
        "A1",
        "fit",
        "--data",
        s(&dir),
        "--model",
        "continuous_triangle",
        "--starts",
        "2",
    ];
    let out = smartfd(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn modes_by_limit_reports_relative_change() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = dataset(tmp.path());
    let out_dir = tmp.path().join("modes");
    let out = smartfd(&["--out-dir", s(&out_dir), "--links", "V1", "modes", "--by-limit", "--data", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&out_dir.join("modes/V1.json"));
    let segments: Vec<&String> = m["modes"].as_object().unwrap().keys().collect();
    assert_eq!(segments, ["40mph", "50mph", "60mph", "70mph"]);
    assert_eq!(m["relative_change"]["from"], "40mph");
    assert_eq!(m["relative_change"]["to"], "70mph");
    let distances = fs::read_to_string(out_dir.join("modes/V1.distances.csv")).unwrap();
    assert!(distances.starts_with("segment,mode,distance\n"));
    // Every point of every segment contributes one distance.
    assert_eq!(distances.lines().count(), 1 + 4 * 300);
}
