use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqedit::{Checkpoint, Tensor};

fn seqedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqedit"))
        .args(args)
        .output()
        .expect("spawn seqedit")
}

fn ok(args: &[&str]) -> String {
    let out = seqedit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    seqedit(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let base = Checkpoint::new([
        ("a".to_string(), Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
        ("b".to_string(), Tensor::vector(&[0.5, 0.5, 0.5])),
    ])
    .unwrap();
    let ft = Checkpoint::new([
        ("a".to_string(), Tensor::new(vec![2, 2], vec![1.5, 2.0, 0.0, 4.25]).unwrap()),
        ("b".to_string(), Tensor::vector(&[0.5, -1.5, 0.75])),
    ])
    .unwrap();
    let (bp, fp) = (dir.join("base.ckpt"), dir.join("ft.ckpt"));
    base.save(&bp).unwrap();
    ft.save(&fp).unwrap();
    (bp, fp)
}

#[test]
fn ckpt_diff_trim_stats_apply() {
    let dir = tempfile::tempdir().unwrap();
    let (base, ft) = write_pair(dir.path());
    let tau = dir.path().join("tau.ckpt");
    let trimmed = dir.path().join("tau_t.ckpt");
    let out = dir.path().join("out.ckpt");
    ok(&["ckpt", "diff", "--minuend", p(&ft), "--subtrahend", p(&base), "--out", p(&tau)]);
    let t = Checkpoint::load(&tau).unwrap();
    assert_eq!(t.get("a").unwrap().values(), &[0.5, 0.0, -3.0, 0.25]);
    assert_eq!(t.get("b").unwrap().values(), &[0.0, -2.0, 0.25]);

    ok(&["ckpt", "trim", "--in", p(&tau), "--k", "0.5", "--scope", "global", "--out", p(&trimmed)]);
    let stats: serde_json::Value = serde_json::from_str(&ok(&["ckpt", "stats", "--in", p(&trimmed), "--json"])).unwrap();
    assert_eq!(stats["n_total"], 7);
    assert_eq!(stats["n_nonzero"], 4);
    assert_eq!(stats["kind"], "delta");
    let kept = Checkpoint::load(&trimmed).unwrap();
    // the two 0.25 entries tie; "a" comes first in canonical order
    assert_eq!(kept.get("a").unwrap().values(), &[0.5, 0.0, -3.0, 0.25]);
    assert_eq!(kept.get("b").unwrap().values(), &[0.0, -2.0, 0.0]);

    ok(&["ckpt", "apply", "--base", p(&base), "--tau", p(&tau), "--out", p(&out)]);
    let edited = Checkpoint::load(&out).unwrap();
    assert_eq!(edited.get("a").unwrap().values(), &[1.2, 2.0, 1.8, 4.1]);
    assert_eq!(edited.get("b").unwrap().values(), &[0.5, -0.3, 0.6]);

    let text = ok(&["ckpt", "stats", "--in", p(&out)]);
    assert!(text.contains("kind       model"), "{text}");
}

#[test]
fn ckpt_commands_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (base, ft) = write_pair(dir.path());
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    for out in [&a, &b] {
        ok(&["ckpt", "diff", "--minuend", p(&ft), "--subtrahend", p(&base), "--out", p(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (base, ft) = write_pair(dir.path());
    let missing = dir.path().join("missing.ckpt");
    let out = dir.path().join("o.ckpt");
    assert_eq!(code(&["ckpt", "stats", "--in", p(&missing)]), 1);

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(code(&["ckpt", "stats", "--in", p(&garbage)]), 2);

    let other = dir.path().join("other.ckpt");
    Checkpoint::new([("a".to_string(), Tensor::vector(&[1.0]))]).unwrap().save(&other).unwrap();
    assert_eq!(code(&["ckpt", "diff", "--minuend", p(&ft), "--subtrahend", p(&other), "--out", p(&out)]), 2);
    // apply wants a delta as tau
    assert_eq!(code(&["ckpt", "apply", "--base", p(&base), "--tau", p(&ft), "--out", p(&out)]), 2);
    assert_eq!(code(&["ckpt", "trim", "--in", p(&base), "--k", "0", "--out", p(&out)]), 2);
    assert!(!out.exists());

    let nested = dir.path().join("no/such/dir/o.ckpt");
    assert_eq!(code(&["ckpt", "diff", "--minuend", p(&ft), "--subtrahend", p(&base), "--out", p(&nested)]), 1);

    assert_eq!(code(&["bench", "run"]), 2);
    assert_eq!(code(&[]), 2);
}

#[test]
fn config_problems_are_listed_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "bogus": 3, "merge": {"lambda": -1, "k": 2}}"#).unwrap();
    let run = dir.path().join("run");
    let out = seqedit(&["--config", p(&cfg), "bench", "run", "--out-dir", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("lambda") && err.contains('k'), "{err}");
    assert!(!run.exists());
    assert_eq!(code(&["--config", p(&dir.path().join("absent.json")), "--print-config"]), 1);
}

#[test]
fn print_config_round_trips() {
    let text = ok(&["--print-config"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["merge"]["method"], "ties");
    assert_eq!(v["merge"]["lambda"], 0.6);
    assert_eq!(v["merge"]["k"], 0.5);
    assert_eq!(v["train"]["stage0"]["epochs"], 60);
    assert_eq!(v["train"]["later"]["lr"], 5e-4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, &text).unwrap();
    assert_eq!(ok(&["--config", p(&cfg), "--print-config"]), text);
    let seeded: serde_json::Value = serde_json::from_str(&ok(&["--seed", "7", "--print-config"])).unwrap();
    assert_eq!(seeded["seed"], 7);
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.json");
    std::fs::write(&cfg, r#"{"domains": {"count": 3}, "train": {"stage0": {"epochs": 15}}}"#).unwrap();
    cfg
}

#[test]
fn bench_run_layout_rows_and_rerun_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["--config", p(&cfg), "bench", "run", "--out-dir", p(out), "--methods", "finetune,ties"]);
    }
    for rel in ["tables/stages.csv", "tables/final.csv", "tables/curve.csv", "tables/compare.csv", "tables/initial.csv"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    for rel in ["checkpoints/theta0.ckpt", "checkpoints/finetune.ckpt", "checkpoints/ties.ckpt"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }

    let stages = std::fs::read_to_string(a.join("tables/stages.csv")).unwrap();
    let rows: Vec<&str> = stages.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, (stage, method)) in rows.iter().zip([(1, "finetune"), (1, "ties"), (2, "finetune"), (2, "ties")]) {
        assert!(row.starts_with(&format!("{stage},{method},")), "{row}");
    }
    for row in rows.iter().filter(|r| r.contains(",finetune,")) {
        // WERR against itself is 0, or blank when its AWER is 0
        let cells: Vec<&str> = row.split(',').collect();
        let (awer, werr) = (cells[cells.len() - 2], cells[cells.len() - 1]);
        assert_eq!(werr, if awer == "0" { "" } else { "0" }, "{row}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["domains"]["count"], 3);
    for f in manifest["files"].as_array().unwrap() {
        let bytes = std::fs::read(a.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], bytes.len());
        assert_eq!(f["fnv1a64"], format!("{:016x}", seqedit::seed::fnv1a64(&bytes)));
    }
    assert!(a.join("stages/stage_1.json").exists() && a.join("stages/stage_2.json").exists());
    assert!(!a.join("stages/stage_3.json").exists());

    let table = ok(&["report", "table", "--in", p(&a), "--format", "csv"]);
    assert_eq!(table, std::fs::read_to_string(a.join("tables/final.csv")).unwrap());
    let curve = ok(&["report", "curve", "--in", p(&a)]);
    assert_eq!(curve, std::fs::read_to_string(a.join("tables/curve.csv")).unwrap());
}

#[test]
fn sweep_with_one_value_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = ok(&["--config", p(&cfg), "sweep", "lambda", "--stage", "2", "--grid", "0.5"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "lambda,previous,new,all");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.5,"));
    assert_eq!(code(&["--config", p(&cfg), "sweep", "lambda", "--stage", "3"]), 2);
    assert_eq!(code(&["--config", p(&cfg), "sweep", "lambda", "--grid", "0.2,nan"]), 2);
}

#[test]
fn report_on_empty_dir_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["report", "table", "--in", p(dir.path())]), 2);
    std::fs::create_dir(dir.path().join("stages")).unwrap();
    std::fs::write(dir.path().join("stages/stage_1.json"), "{").unwrap();
    assert_eq!(code(&["report", "curve", "--in", p(dir.path())]), 2);
}

#[test]
fn report_matches_golden_fixture() {
    let run = fixture("run");
    let md = ok(&["report", "table", "--in", p(&run), "--format", "md"]);
    assert_eq!(md, std::fs::read_to_string(fixture("table.md")).unwrap());
    let curve = ok(&["report", "curve", "--in", p(&run), "--format", "csv"]);
    assert_eq!(curve, std::fs::read_to_string(fixture("curve.csv")).unwrap());
}
