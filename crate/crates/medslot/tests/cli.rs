use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use medslot::cli::run;

fn medslot(args: &[&str]) -> i32 {
    let mut argv = vec!["medslot"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 12] = [
    "--embed-dim",
    "8",
    "--hidden",
    "8",
    "--layers",
    "1",
    "--epochs",
    "2",
    "--batch-size",
    "8",
    "--dropout",
    "0",
];

/// synth + convert into `dir`, returning the pairs path.
fn corpus(dir: &Path, docs: &str) -> PathBuf {
    let synth = dir.join("synth");
    assert_eq!(
        medslot(&["--quiet", "synth", "--docs", docs, "--out", p(&synth)]),
        0
    );
    let pairs = dir.join("pairs.jsonl");
    assert_eq!(
        medslot(&[
            "--quiet",
            "convert",
            "--docs",
            p(&synth.join("docs")),
            "--annotations",
            p(&synth.join("annotations")),
            "--out",
            p(&pairs),
        ]),
        0
    );
    pairs
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(medslot(&["frobnicate"]), 1);
    assert_eq!(medslot(&[]), 1);
    assert_eq!(medslot(&["convert", "--docs", "x"]), 1);
    assert_eq!(
        medslot(&["evaluate", "--pred", "a", "--ref", "b", "--bogus"]),
        1
    );
    assert_eq!(
        medslot(&["synth", "--docs", "0", "--out", "/nonexistent/x"]),
        1
    );
    assert_eq!(medslot(&["--help"]), 0);
    assert_eq!(medslot(&["bpe", "--help"]), 0);
}

#[test]
fn invalid_config_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let code = medslot(&[
        "train",
        "--pairs",
        "missing.jsonl",
        "--val",
        "missing.jsonl",
        "--out",
        p(&out),
        "--hidden",
        "7",
    ]);
    assert_eq!(code, 1);
    let code = medslot(&[
        "train-semi",
        "--paired",
        "a",
        "--text",
        "b",
        "--frames",
        "c",
        "--gamma",
        "1.5",
        "--out-nlu",
        p(&out),
        "--out-nlg",
        p(&out),
    ]);
    assert_eq!(code, 1);
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"doc_id\": 3}\n").unwrap();
    let out = dir.path().join("report.json");
    assert_eq!(
        medslot(&[
            "--quiet",
            "evaluate",
            "--pred",
            p(&bad),
            "--ref",
            p(&bad),
            "--out",
            p(&out)
        ]),
        2
    );
    assert!(!out.exists());
    assert_eq!(
        medslot(&["--quiet", "evaluate", "--pred", "nope", "--ref", "nope"]),
        2
    );
    let ckpt = dir.path().join("m.ckpt");
    fs::write(&ckpt, b"MEDSLOT\0garbage").unwrap();
    let pred = dir.path().join("pred.jsonl");
    assert_eq!(
        medslot(&[
            "--quiet",
            "predict",
            "--model",
            p(&ckpt),
            "--in",
            p(&bad),
            "--out",
            p(&pred)
        ]),
        2
    );
    assert!(!pred.exists());
}

#[test]
fn self_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = corpus(dir.path(), "5");
    let report = dir.path().join("report.json");
    assert_eq!(
        medslot(&[
            "--quiet",
            "evaluate",
            "--pred",
            p(&pairs),
            "--ref",
            p(&pairs),
            "--out",
            p(&report)
        ]),
        0
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["macro_f1"], 1.0);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = corpus(dir.path(), "3");
    let out = dir.path().join("m.ckpt");
    let mut args = vec![
        "--quiet",
        "train",
        "--pairs",
        p(&pairs),
        "--val",
        p(&pairs),
        "--out",
        p(&out),
    ];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(&["--lr", "1e308"]);
    assert_eq!(medslot(&args), 3);
    assert!(!out.exists());
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pairs = corpus(d, "6");
    let codes = d.join("codes.bpe");
    assert_eq!(
        medslot(&[
            "--quiet",
            "bpe",
            "learn",
            "--in",
            p(&pairs),
            "--merges",
            "50",
            "--out",
            p(&codes)
        ]),
        0
    );
    let bpe_pairs = d.join("pairs.bpe.jsonl");
    let code = medslot(&[
        "--quiet",
        "bpe",
        "apply",
        "--codes",
        p(&codes),
        "--in",
        p(&pairs),
        "--out",
        p(&bpe_pairs),
    ]);
    assert_eq!(code, 0);
    assert!(fs::read_to_string(&bpe_pairs).unwrap().contains("@@"));

    let model = d.join("m.ckpt");
    let log = d.join("log.csv");
    let mut args = vec![
        "--quiet",
        "--seed",
        "4",
        "train",
        "--pairs",
        p(&pairs),
        "--val",
        p(&pairs),
        "--out",
        p(&model),
        "--bpe",
        p(&codes),
        "--log",
        p(&log),
    ];
    args.extend_from_slice(&TINY);
    assert_eq!(medslot(&args), 0);
    let log = fs::read_to_string(&log).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 3);

    let pred = d.join("pred.jsonl");
    assert_eq!(
        medslot(&[
            "--quiet",
            "predict",
            "--model",
            p(&model),
            "--in",
            p(&pairs),
            "--out",
            p(&pred)
        ]),
        0
    );
    let report = d.join("report.json");
    assert_eq!(
        medslot(&[
            "--quiet",
            "evaluate",
            "--pred",
            p(&pred),
            "--ref",
            p(&pairs),
            "--out",
            p(&report)
        ]),
        0
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let macro_f1 = json["macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&macro_f1));

    let pred2 = d.join("pred2.jsonl");
    assert_eq!(
        medslot(&[
            "--quiet",
            "predict",
            "--model",
            p(&model),
            "--in",
            p(&pairs),
            "--out",
            p(&pred2)
        ]),
        0
    );
    assert_eq!(fs::read(&pred).unwrap(), fs::read(&pred2).unwrap());
}

#[test]
fn semi_supervised_and_match() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pairs = corpus(d, "4");
    let synth = d.join("synth");
    let matched = d.join("matched.jsonl");
    let code = medslot(&[
        "--quiet",
        "match",
        "--records",
        p(&synth.join("prescriptions.csv")),
        "--notes",
        p(&synth.join("notes.jsonl")),
        "--dedup",
        "--out",
        p(&matched),
    ]);
    assert_eq!(code, 0);
    assert!(!fs::read_to_string(&matched).unwrap().is_empty());

    let (nlu, nlg, log) = (d.join("nlu.ckpt"), d.join("nlg.ckpt"), d.join("joint.csv"));
    let mut args = vec![
        "--quiet",
        "train-semi",
        "--paired",
        p(&matched),
        "--text",
        p(&pairs),
        "--frames",
        p(&pairs),
        "--val",
        p(&pairs),
        "--out-nlu",
        p(&nlu),
        "--out-nlg",
        p(&nlg),
        "--log",
        p(&log),
    ];
    args.extend_from_slice(&TINY);
    assert_eq!(medslot(&args), 0);
    assert!(nlu.exists() && nlg.exists());
    let log = fs::read_to_string(&log).unwrap();
    assert!(
        log.starts_with("epoch,nlu_train,nlg_train,nlg_unpaired,nlu_unpaired,nlu_val,nlg_val\n")
    );
}

#[test]
fn binary_reads_seed_from_environment() {
    let bin = env!("CARGO_BIN_EXE_medslot");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let status = Command::new(bin)
        .args(["--quiet", "synth", "--docs", "2", "--out", p(&a)])
        .env("MEDSLOT_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    let status = Command::new(bin)
        .args([
            "--quiet",
            "--seed",
            "9",
            "synth",
            "--docs",
            "2",
            "--out",
            p(&b),
        ])
        .env_remove("MEDSLOT_SEED")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(a.join("prescriptions.csv")).unwrap(),
        fs::read(b.join("prescriptions.csv")).unwrap()
    );
    let out = Command::new(bin).arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn json_logs_are_json() {
    let bin = env!("CARGO_BIN_EXE_medslot");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args([
            "--json-logs",
            "synth",
            "--docs",
            "1",
            "--out",
            p(dir.path()),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["event"], "wrote");
    assert_eq!(v["count"], 1);
}
