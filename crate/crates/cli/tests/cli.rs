use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn kgllm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgllm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(name), text).unwrap();
}

/// Three train triples over six entities, two labeled test rows.
fn tiny_fb13(root: &Path) -> std::path::PathBuf {
    let dir = root.join("FB13");
    write(
        &dir,
        "entity2text.txt",
        "e1\tSteve Jobs\ne2\tApple Inc.\ne3\tEverett T Moore\ne4\tLibrarian\ne5\tJosip Škorić\ne6\tmale\n",
    );
    write(
        &dir,
        "relation2text.txt",
        "founded\tfounded\nprofession\tprofession\ngender\thas gender\n",
    );
    write(
        &dir,
        "train.tsv",
        "e1\tfounded\te2\ne3\tprofession\te4\ne5\tgender\te6\n",
    );
    write(&dir, "dev.tsv", "e1\tfounded\te2\t1\n");
    write(
        &dir,
        "test.tsv",
        "e1\tfounded\te2\t1\ne3\tfounded\te6\t-1\n",
    );
    dir
}

#[test]
fn stats_prints_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tiny_fb13(tmp.path());
    let o = kgllm(&["stats", "--dataset", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("FB13: 6 / 3 / 3 / 1 / 2"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn stats_on_empty_fixture_is_all_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    for f in [
        "entity2text.txt",
        "relation2text.txt",
        "train.tsv",
        "dev.tsv",
        "test.tsv",
    ] {
        write(&dir, f, "");
    }
    let o = kgllm(&[
        "stats",
        "--dataset",
        dir.to_str().unwrap(),
        "--kind",
        "WN18RR",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("WN18RR: 0 / 0 / 0 / 0 / 0"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kgllm(&[
        "stats",
        "--dataset",
        tmp.path().join("WN11").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));

    let o = kgllm(&["stats", "--dataset", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "kind cannot be inferred");

    let o = kgllm(&["eval", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = tmp.path().join("WN11");
    write(&bad, "entity2text.txt", "a\tA\n");
    write(&bad, "relation2text.txt", "r\tR\n");
    write(&bad, "train.tsv", "a\tr\n");
    write(&bad, "dev.tsv", "");
    write(&bad, "test.tsv", "");
    let o = kgllm(&["stats", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("train.tsv:1"), "{}", stderr(&o));
}

#[test]
fn classification_export_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tiny_fb13(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = kgllm(&[
            "export",
            "--dataset",
            dir.to_str().unwrap(),
            "--task",
            "triple_classification",
            "--negative-ratio",
            "1.0",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(&out).unwrap()
    };
    let a = run("a.jsonl");
    let b = run("b.jsonl");
    assert_eq!(Sha256::digest(&a), Sha256::digest(&b));

    let text = String::from_utf8(a).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(
        lines[0]["prompt"],
        "Is this true: Steve Jobs founded Apple Inc.?"
    );
    assert_eq!(lines[0]["response"], "Yes, this is true.");
    let negatives = lines
        .iter()
        .filter(|l| l["response"] == "No, this is not true.")
        .count();
    assert_eq!(negatives, 3);

    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("a.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["template_version"], "kgc-prompts/1");
    assert!(manifest["tool_version"]
        .as_str()
        .unwrap()
        .starts_with("kgllm "));
    assert_eq!(manifest["seeds"]["seed"], 4);
    assert_eq!(manifest["records"]["records"], 6);
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tiny_fb13(tmp.path());
    let out = tmp.path().join("tail.jsonl");
    let cfg = tmp.path().join("export.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\ntask = \"entity_prediction\"\ndirections = \"head\"\nout = {:?}\n",
            dir.to_str().unwrap(),
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = kgllm(&[
        "export",
        "--config",
        cfg.to_str().unwrap(),
        "--directions",
        "tail",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(first["prompt"], "Steve Jobs founded");
    assert_eq!(first["response"], "Apple Inc.");

    fs::write(&cfg, "datset = \"x\"\n").unwrap();
    let o = kgllm(&["export", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_with_oracle_then_rescore() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tiny_fb13(tmp.path());
    let out = tmp.path().join("run");
    let o = kgllm(&[
        "eval",
        "--dataset",
        dir.to_str().unwrap(),
        "--task",
        "classification",
        "--backend",
        "oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("1.000"), "{table}");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["score"], 1.0);
    assert_eq!(report["metrics"]["n"], 2);
    assert_eq!(report["template_version"], "kgc-prompts/1");

    let o = kgllm(&["rescore", out.join("run.jsonl").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), table);
    assert_eq!(
        fs::read_to_string(out.join("rescore.json")).unwrap(),
        fs::read_to_string(out.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(out.join("rescore.txt")).unwrap(),
        fs::read_to_string(out.join("report.txt")).unwrap()
    );
}

#[test]
fn sample_neighbors_and_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tiny_fb13(tmp.path());
    let o = kgllm(&[
        "sample",
        "--dataset",
        dir.to_str().unwrap(),
        "--entity",
        "e1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "e2\tApple Inc.\n");
    let o = kgllm(&[
        "sample",
        "--dataset",
        dir.to_str().unwrap(),
        "--entity",
        "e1",
        "--exclude",
        "e2",
    ]);
    assert_eq!(stdout(&o), "");

    let o = kgllm(&[
        "sample",
        "--dataset",
        dir.to_str().unwrap(),
        "--task",
        "entity",
        "--limit",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0]["prompt"],
        "What/Who/When/Where/Why founded Apple Inc.?"
    );
    assert_eq!(lines[1]["prompt"], "Steve Jobs founded");
}
