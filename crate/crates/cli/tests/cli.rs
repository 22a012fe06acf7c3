use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn charlee(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charlee"))
        .args(args)
        .env("CHARLEE_OUT", out)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = charlee(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &str = r#"{
  "dataset": { "kind": "synthetic", "n_per_class": 6, "noise_std": 0.1, "seed": 0, "test_seed": 1 },
  "seeds": [0],
  "n_checkpoints": 3,
  "epochs": 2,
  "warmup_epochs": 2,
  "head_hidden": [8],
  "classifier_maps": 6,
  "toee": { "epochs": 3, "maps": 6 }
}"#;

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

fn pipeline(out: &Path, cfg: &str) {
    for cmd in ["synth", "rank", "train", "eval", "toee"] {
        ok(&[cmd, "--config", cfg, "--delta", "0.5"], out);
    }
}

#[test]
fn pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, &cfg);
    pipeline(&b, &cfg);
    let files = [
        "synthetic/data/train.ts",
        "synthetic/data/test.csv",
        "synthetic/ranking.json",
        "synthetic/delta-0.5/seed-0/params.bin",
        "synthetic/delta-0.5/seed-0/history.csv",
        "synthetic/delta-0.5/seed-0/eval.json",
        "synthetic/delta-0.5/seed-0/traces.jsonl",
        "synthetic/delta-0.5/seed-0/alignment.json",
        "synthetic/delta-0.5/toee.csv",
    ];
    for f in files {
        let x = fs::read(a.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let report = tmp.path().join("report.csv");
    ok(&["report", a.to_str().unwrap(), "--out", report.to_str().unwrap()], &a);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
    assert!(text.contains("synthetic"));
}

#[test]
fn exit_codes_by_failure_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{ "no_such_field": 1 }"#).unwrap();
    assert_eq!(charlee(&["synth", "--config", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));
    assert_eq!(charlee(&["train", "--delta", "1.5"], tmp.path()).status.code(), Some(2));

    let missing = tmp.path().join("missing.json");
    fs::write(
        &missing,
        r#"{ "dataset": { "kind": "files", "train": "nope/train.ts", "test": "nope/test.ts" } }"#,
    )
    .unwrap();
    assert_eq!(charlee(&["rank", "--config", missing.to_str().unwrap()], tmp.path()).status.code(), Some(3));

    let cfg = small_config(tmp.path());
    assert_eq!(charlee(&["eval", "--config", &cfg], tmp.path()).status.code(), Some(3));
}
