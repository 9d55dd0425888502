use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn weights() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/tinycnn.mcgw")
}

fn mcgaec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcgaec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = mcgaec(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!("name = \"cli\"\nweights = {:?}\n\n[forest]\nn_trees = 40\n", s(&weights()));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = ok(&["synth", "--out", s(&data), "--per-class", "8", "--seed", "2"]);
    assert_eq!(synth["samples"], 24);
    let manifest = data.join("manifest.csv");
    let config = write_config(dir.path());
    let out = dir.path().join("out");

    let extracted = ok(&["extract", "--manifest", s(&manifest), "--config", s(&config), "--out", s(&out)]);
    assert_eq!(extracted["samples"], 24);
    let train = ok(&["train", "--manifest", s(&manifest), "--config", s(&config), "--out", s(&out)]);
    assert_eq!(train["feature_dim"], 384);
    for f in ["metrics.json", "run_meta.json", "forest.bin", "roc_normal.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let eval_out = dir.path().join("eval");
    let model = out.join("forest.bin");
    let eval = ok(&["evaluate", "--manifest", s(&manifest), "--config", s(&config), "--model", s(&model), "--out", s(&eval_out)]);
    assert!(eval["overall_accuracy"].as_f64().unwrap() > 0.5);
    assert!(eval_out.join("metrics.json").exists());

    let roc_out = dir.path().join("roc");
    let roc = ok(&["export-roc", "--manifest", s(&manifest), "--config", s(&config), "--model", s(&model), "--out", s(&roc_out)]);
    assert_eq!(roc["files"].as_array().unwrap().len(), 3);

    let ab_out = dir.path().join("ablate");
    let ab = ok(&["ablate", "--manifest", s(&manifest), "--config", s(&config), "--configs", "oct_s1,proposed", "--out", s(&ab_out)]);
    assert_eq!(ab["rows"], 2);
    assert_eq!(std::fs::read_to_string(ab_out.join("ablation.csv")).unwrap().lines().count(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--per-class", "8", "--seed", "4"]);
    let manifest = data.join("manifest.csv");
    let config = write_config(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        ok(&["--threads", threads, "train", "--manifest", s(&manifest), "--config", s(&config), "--out", s(&out)]);
        outputs.push((std::fs::read(out.join("metrics.json")).unwrap(), std::fs::read(out.join("forest.bin")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--per-class", "6", "--seed", "1"]);
    let manifest = data.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let victim = text.lines().nth(2).unwrap().split(',').next().unwrap().to_string();
    let oct = data.join("images").join(format!("{victim}_oct.png"));
    std::fs::write(&oct, b"not a png").unwrap();

    let config = write_config(dir.path());
    let out = mcgaec(&["train", "--manifest", s(&manifest), "--config", s(&config), "--out", s(&dir.path().join("out"))]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("JSON on stderr");
    assert_eq!(err["error"], "DecodeError");
    assert_eq!(err["sample_id"], victim.as_str());

    let out = mcgaec(&["train", "--manifest", s(&dir.path().join("nope.csv")), "--config", s(&config)]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "FileNotFound");
    assert!(err["sample_id"].is_null());
}
