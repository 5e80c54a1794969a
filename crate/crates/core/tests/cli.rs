use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn posco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posco")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn params_reports_no_coattention_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = posco(&["params", "--vocab-size", "100", "--out-dir", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = json(&dir.path().join("params.json"));
    assert_eq!(b["co_attention"], 0);
    assert_eq!(b["pos_embedding"], 39 * 32);
    let off = tempfile::tempdir().unwrap();
    posco(&["params", "--vocab-size", "100", "--pos-embedding", "off", "--turns", "4", "--out-dir", path(off.path())]);
    let c = json(&off.path().join("params.json"));
    assert_eq!(b["total"].as_u64().unwrap() - c["total"].as_u64().unwrap(), 39 * 32);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": {"max_turns": 2, "seed": 5}, "train": {"epochs": 9}}"#).unwrap();
    let out = dir.path().join("o");
    let o = posco(&["params", "--config", path(&cfg), "--seed", "8", "--vocab-size", "50", "--out-dir", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stored = json(&out.join("config.json"));
    assert_eq!(stored["model"]["max_turns"], 2);
    assert_eq!(stored["model"]["seed"], 8);
    assert_eq!(stored["train"]["seed"], 8);
    assert_eq!(stored["train"]["epochs"], 9);
    let printed: Value = serde_json::from_str(
        String::from_utf8_lossy(&o.stdout)
            .split("\ncomponent")
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(printed, stored);
}

#[test]
fn trace_emits_one_block_per_turn_and_domain() {
    let dir = tempfile::tempdir().unwrap();
    let o = posco(&["trace", "--turns", "3", "--dev-size", "4", "--index", "2", "--out-dir", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = json(&dir.path().join("trace.json"));
    let records = records.as_array().unwrap();
    for domain in ["passage", "question"] {
        let turns: Vec<u64> = records
            .iter()
            .filter(|r| r["domain"] == domain)
            .map(|r| r["turn"].as_u64().unwrap())
            .collect();
        assert_eq!(turns, vec![1, 2, 3]);
    }
    let map = std::fs::read_to_string(dir.path().join("heatmap.txt")).unwrap();
    assert_eq!(map.lines().filter(|l| l.starts_with("token")).count(), 2);
    assert!(map.lines().all(|l| l.starts_with('#') || l.starts_with("token") || l.split_whitespace().count() >= 1));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = posco(&[
        "train", "--task", "synthetic-choice", "--train-size", "24", "--dev-size", "8", "--epochs", "1", "--turns", "2",
        "--out-dir", path(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["datasets"].as_array().unwrap().len(), 2);
    assert!(manifest["datasets"][0]["sha256"].as_str().unwrap().len() == 64);

    let ckpt = run.join("checkpoint.json");
    let mut reports = Vec::new();
    for name in ["e1", "e2"] {
        let out = dir.path().join(name);
        let o = posco(&["eval", "--checkpoint", path(&ckpt), "--config", path(&run.join("manifest.json")), "--out-dir", path(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(std::fs::read(out.join("eval_report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], std::fs::read(run.join("dev_report.json")).unwrap());

    let out = dir.path().join("p");
    let o = posco(&["predict", "--checkpoint", path(&ckpt), "--config", path(&run.join("manifest.json")), "--out-dir", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 8);
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["probabilities"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn file_backed_extractive_task() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("squad.json");
    std::fs::write(
        &data,
        r#"{"data": [{"title": "t", "paragraphs": [{"context": "The fair opened in London in 1862.",
            "qas": [{"id": "q1", "question": "Where did the fair open?", "is_impossible": false,
                     "answers": [{"text": "London", "answer_start": 19}]},
                    {"id": "q2", "question": "Who closed it?", "is_impossible": true, "answers": []}]}]}]}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = posco(&["train", "--task", "extractive", "--data", path(&data), "--epochs", "2", "--out-dir", path(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("p");
    let o = posco(&[
        "predict", "--task", "extractive", "--data", path(&data), "--checkpoint", path(&run.join("checkpoint.json")),
        "--delta", "1e9", "--out-dir", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["answer_text"], "");
        assert_eq!(v["delta"], 1e9);
    }
}

#[test]
fn tag_writes_pretagged_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "The cat sat.\n\nShe quickly ran home\n").unwrap();
    let out = dir.path().join("o");
    let o = posco(&["tag", "--data", path(&input), "--out-dir", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("tagged.tsv")).unwrap();
    let parsed = posco::pos::parse_pretagged(&text).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0].len(), 4);
    assert_eq!(parsed[0][0].tag, posco::pos::PosTag::Dt);
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = posco(&[
        "sweep", "--preset", "turns", "--turns-axis", "0,1", "--strategy-axis", "average,forgetting", "--seeds", "13",
        "--train-size", "16", "--dev-size", "8", "--epochs", "1", "--out-dir", path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = json(&dir.path().join("sweep.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["mean"], rows[1]["mean"]);
    let tsv = std::fs::read_to_string(dir.path().join("sweep.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
}

#[test]
fn errors_are_single_lines_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32); 5] = [
        (&["train", "--no-such-flag"], 2),
        (&["eval", "--checkpoint", "/definitely/missing.json"], 2),
        (&["params", "--strategy", "sideways"], 2),
        (&["params", "--corrupt-rate", "3", "--vocab-size", "10"], 2),
        (&["tag"], 2),
    ];
    for (args, code) in cases {
        let mut full = args.to_vec();
        full.extend(["--out-dir", path(dir.path())]);
        let o = posco(&full);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error kind="), "{err}");
    }

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 99}").unwrap();
    let o = posco(&["eval", "--checkpoint", path(&bad), "--out-dir", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=checkpoint"));
}

#[test]
fn help_lists_shared_flags() {
    for sub in ["train", "eval", "predict", "tag", "params", "trace", "sweep"] {
        let o = posco(&[sub, "--help"]);
        assert!(o.status.success());
        let help = String::from_utf8_lossy(&o.stdout);
        for flag in [
            "--config", "--seed", "--turns", "--strategy", "--pos-embedding", "--corrupt-rate", "--out-dir", "--task",
            "--data",
        ] {
            assert!(help.contains(flag), "{sub} help lacks {flag}");
        }
    }
}
