use std::ffi::OsStr;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use normforge::commands::RunConfig;
use serde_json::Value;

fn normforge<A: AsRef<OsStr>>(args: impl IntoIterator<Item = A>) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normforge"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err(out: &Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"].clone()
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_match_presets() {
    for (file, preset) in [
        ("reference.json", RunConfig::reference()),
        ("tiny.json", RunConfig::tiny()),
    ] {
        let text = fs::read_to_string(configs().join(file)).unwrap();
        assert_eq!(text, preset.to_json(), "{file}");
    }
}

#[test]
fn reference_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let short = ["--set", "train.epochs=2"];
    ok(&normforge(["gen", "--out", s(&d.join("gen"))]));
    let corpus = d.join("gen/corpus.jsonl");
    let pre = ok(&normforge(
        [
            &["pretrain", "--out", s(&d.join("pre")), "--corpus", s(&corpus)][..],
            &short,
        ]
        .concat(),
    ));
    assert_eq!(pre["epochs"], 2);
    let ckpt = d.join("pre/checkpoint.json");
    let emb = ok(&normforge([
        "embed",
        "--out",
        s(&d.join("emb")),
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
    ]));
    assert_eq!(emb["rows"], 800);
    let ana = ok(&normforge([
        "analyze",
        "--out",
        s(&d.join("ana")),
        "--embeddings",
        s(&d.join("emb/embeddings.csv")),
    ]));
    assert!(ana["group_knn_accuracy"].as_f64().unwrap() > 0.5);
    for f in [
        "gen/config.json",
        "pre/loss.csv",
        "ana/projection.csv",
        "ana/metrics.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }

    // the echoed config alone reproduces the pre-training run
    ok(&normforge([
        "pretrain",
        "--config",
        s(&d.join("pre/config.json")),
        "--out",
        s(&d.join("again")),
    ]));
    assert_eq!(
        fs::read(&ckpt).unwrap(),
        fs::read(d.join("again/checkpoint.json")).unwrap()
    );
}

#[test]
fn gradcheck_on_tiny_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(&normforge([
        "gradcheck",
        "--config",
        s(&configs().join("tiny.json")),
        "--out",
        s(dir.path()),
    ]));
    assert_eq!(v["passed"], true);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn all_zero_weights_fail_with_no_task() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = configs().join("tiny.json");
    let mut args: Vec<String> = [
        "pretrain",
        "--config",
        s(&tiny),
        "--out",
        s(dir.path()),
        "--corpus",
        "missing.jsonl",
    ]
    .map(String::from)
    .to_vec();
    for w in ["edge_w", "node_w", "branch_w", "community_w"] {
        args.extend(["--set".to_string(), format!("train.{w}=0")]);
    }
    let e = err(&normforge(&args));
    assert_eq!(e["code"], "CONFIG_NO_TASK");
    assert_eq!(e["module"], "tasks");
}

#[test]
fn errors_carry_code_and_module() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let e = err(&normforge(["gen", "--out", out, "--set", "train.momentum=1"]));
    assert_eq!(e["code"], "CONFIG_INVALID");
    let e = err(&normforge([
        "pretrain",
        "--out",
        out,
        "--corpus",
        s(&dir.path().join("none.jsonl")),
    ]));
    assert_eq!(
        (e["code"].as_str(), e["module"].as_str()),
        (Some("CORPUS_IO"), Some("graph"))
    );
    let e = err(&normforge(["embed", "--out", out]));
    assert_eq!(e["code"], "CONFIG_INVALID");
    let bad = Command::new(env!("CARGO_BIN_EXE_normforge"))
        .args(["gen", "--out", out])
        .env("NORMFORGE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(err(&bad)["code"], "CONFIG_INVALID");
}

#[test]
fn ingest_accepts_headerless_data_with_grouping_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tiny = configs().join("tiny.json");
    ok(&normforge(["gen", "--config", s(&tiny), "--out", s(&d.join("gen"))]));
    let text = fs::read_to_string(d.join("gen/corpus.jsonl")).unwrap();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(d.join("data.jsonl"), body).unwrap();
    let mut map = serde_json::Map::new();
    for p in RunConfig::tiny().synth.profiles {
        map.insert(p.community_id, p.group_id.into());
    }
    fs::write(d.join("grouping.json"), Value::Object(map).to_string()).unwrap();
    let (ing, data, grouping) = (d.join("ing"), d.join("data.jsonl"), d.join("grouping.json"));
    let args = [
        "ingest",
        "--out",
        s(&ing),
        "--data",
        s(&data),
        "--grouping",
        s(&grouping),
    ];
    let v = ok(&normforge(args));
    assert_eq!(v["discussions"], 8);
    assert_eq!(fs::read(d.join("ing/corpus.jsonl")).unwrap(), text.into_bytes());

    fs::write(&grouping, "{}").unwrap();
    let e = err(&normforge(args));
    assert_eq!(e["code"], "CORPUS_GROUPING");
}
