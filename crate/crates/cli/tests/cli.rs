use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cursor_attn::formats::{read_dataset, sha256_file};
use cursor_attn::image::decode_png;
use cursor_attn_core::raster::{render_session, RenderKind, RenderStyle};
use cursor_attn_core::stats::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cursor-attn"));
    c.env_remove("CURSOR_ATTN_JOBS");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn synthetic_dataset(dir: &Path, count: &str) -> PathBuf {
    ok(&["synth", "--count", count, "--seed", "5", "--out", "raw.jsonl"], dir);
    ok(&["ingest", "raw.jsonl", "--out", "ds.jsonl"], dir);
    dir.join("ds.jsonl")
}

#[test]
fn ingest_counts_drops() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture("sessions");
    let stdout = ok(&["ingest", fx.to_str().unwrap(), "--out", "d.jsonl"], tmp.path());
    assert!(stdout.contains("kept 8"), "{stdout}");
    assert!(stdout.contains("dropped-short 2"), "{stdout}");
    assert!(stdout.contains("dropped-neutral 2"), "{stdout}");
    assert_eq!(read_dataset(&tmp.path().join("d.jsonl")).unwrap().len(), 8);
    assert_eq!(fs::read(tmp.path().join("d.jsonl")).unwrap(), fs::read(fixture("dataset8.jsonl")).unwrap());
}

#[test]
fn ingest_empty_directory_warns_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = run(&["ingest", "empty", "--out", "d.jsonl"], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(tmp.path().join("d.jsonl")).unwrap(), "");
}

#[test]
fn corrupt_line_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let good = fs::read_to_string(fixture("sessions/fx-00.json")).unwrap();
    let good: serde_json::Value = serde_json::from_str(&good).unwrap();
    let text = format!("{}\n{{\"session_id\": \"x\", \n", good);
    fs::write(tmp.path().join("bad.jsonl"), text).unwrap();
    let stderr = err(&["ingest", "bad.jsonl"], tmp.path());
    assert!(stderr.starts_with("error:malformed-input:"), "{stderr}");
    assert!(stderr.contains("bad.jsonl:2:"), "{stderr}");

    let mut neg = good.clone();
    neg["events"][0]["x"] = serde_json::json!(-4);
    fs::write(tmp.path().join("neg.jsonl"), format!("{good}\n{good}\n{neg}\n")).unwrap();
    let stderr = err(&["ingest", "neg.jsonl"], tmp.path());
    assert!(stderr.starts_with("error:invalid-value:"), "{stderr}");
    assert!(stderr.contains("neg.jsonl:3:"), "{stderr}");
}

#[test]
fn render_counts_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = fixture("dataset8.jsonl");
    let ds = ds.to_str().unwrap();
    ok(&["render", ds, "--style", "traj-color", "--out", "one"], tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("one/renders/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 8);
    let pngs = |d: &str| {
        let mut v: Vec<_> = fs::read_dir(tmp.path().join(d).join("renders"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(pngs("one").len(), 8);

    ok(&["render", ds, "--all-styles", "--out", "a", "--jobs", "4"], tmp.path());
    ok(&["render", ds, "--all-styles", "--out", "b", "--jobs", "1"], tmp.path());
    let (a, b) = (pngs("a"), pngs("b"));
    assert_eq!(a.len(), 80);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    assert_eq!(
        fs::read(tmp.path().join("a/renders/manifest.json")).unwrap(),
        fs::read(tmp.path().join("b/renders/manifest.json")).unwrap()
    );

    // decoded PNG equals the in-memory render
    let sessions = read_dataset(Path::new(ds)).unwrap();
    let style = RenderStyle::new(RenderKind::Heatmap, true);
    let path = tmp.path().join(format!("a/renders/{}-heatmap-ad.png", sessions[0].session.session_id));
    assert_eq!(decode_png(&fs::read(path).unwrap()).unwrap(), render_session(&sessions[0].session, style).unwrap());
}

#[test]
fn render_rejects_unknown_style() {
    let tmp = tempfile::tempdir().unwrap();
    let stderr = err(&["render", fixture("dataset8.jsonl").to_str().unwrap(), "--style", "sketch"], tmp.path());
    assert!(stderr.starts_with("error:invalid-value:"), "{stderr}");
}

#[test]
fn train_writes_report_and_guards_combinations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synthetic_dataset(dir, "80");
    let args = ["train", "ds.jsonl", "--arch", "gru", "--repr", "timeseries", "--budget", "2", "--k", "2"];
    let short = ["--max-epochs", "4", "--seed", "11"];
    ok(&[&args[..], &short, &["--out", "o1", "--jobs", "1"]].concat(), dir);
    ok(&[&args[..], &short, &["--out", "o2", "--jobs", "4"]].concat(), dir);

    let report_path = dir.join("o1/reports/gru-timeseries-s11.report.json");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert!(json["auc"].as_f64().is_some());
    let report: EvalReport = serde_json::from_value(json).unwrap();
    report.verify().unwrap();
    assert_eq!(report.sample_ids.len(), report.scores.len());
    assert!(dir.join("o1/models/gru-timeseries-s11.model").exists());

    // same seed: identical report, model and logged configs regardless of --jobs
    for f in ["reports/gru-timeseries-s11.report.json", "models/gru-timeseries-s11.model"] {
        assert_eq!(fs::read(dir.join("o1").join(f)).unwrap(), fs::read(dir.join("o2").join(f)).unwrap(), "{f}");
    }
    let log = |d: &str| -> Vec<serde_json::Value> {
        fs::read_to_string(dir.join(d).join("logs/gru-timeseries-s11.trials.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    assert_eq!(log("o1").len(), 4);
    assert_eq!(log("o1"), log("o2"));

    let stderr = err(&["train", "ds.jsonl", "--arch", "cnn", "--repr", "timeseries"], dir);
    assert!(stderr.starts_with("error:invalid-value:"), "{stderr}");
    let stderr = err(&["train", "ds.jsonl", "--arch", "lstm", "--repr", "traj"], dir);
    assert!(stderr.starts_with("error:invalid-value:"), "{stderr}");
    let stderr = err(&["train", "ds.jsonl", "--arch", "gru", "--repr", "timeseries", "--ratios", "0.5,0.5"], dir);
    assert!(stderr.starts_with("error:invalid-value:"), "{stderr}");
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synthetic_dataset(dir, "60");
    fs::write(
        dir.join("cfg.json"),
        r#"{"arch": "gru", "repr": "timeseries", "budget": 1, "k": 1, "max_epochs": 2, "seed": 3, "jobs": 2}"#,
    )
    .unwrap();
    ok(&["--config", "cfg.json", "train", "ds.jsonl", "--seed", "8", "--out", "o"], dir);
    let report: EvalReport =
        serde_json::from_slice(&fs::read(dir.join("o/reports/gru-timeseries-s8.report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 8);
    assert_eq!(report.config["budget"], "1");
    assert_eq!(report.config["max_epochs"], "2");
}

#[test]
fn compare_needs_two_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synthetic_dataset(dir, "60");
    ok(
        &[
            "train",
            "ds.jsonl",
            "--arch",
            "gru",
            "--repr",
            "timeseries",
            "--budget",
            "1",
            "--k",
            "1",
            "--max-epochs",
            "2",
            "--out",
            "o",
        ],
        dir,
    );
    let stderr = err(&["compare", "o/reports/gru-timeseries-s0.report.json"], dir);
    assert!(stderr.starts_with("error:too-few-reports:"), "{stderr}");

    ok(
        &[
            "train",
            "ds.jsonl",
            "--arch",
            "simplernn",
            "--repr",
            "timeseries",
            "--budget",
            "1",
            "--k",
            "1",
            "--max-epochs",
            "2",
            "--out",
            "o",
        ],
        dir,
    );
    let stdout = ok(
        &[
            "compare",
            "o/reports/gru-timeseries-s0.report.json",
            "o/reports/simplernn-timeseries-s0.report.json",
            "--out",
            "cmp.json",
        ],
        dir,
    );
    assert!(stdout.contains("vs"), "{stdout}");
    let cmp: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("cmp.json")).unwrap()).unwrap();
    assert!(cmp["omnibus"].is_null());
    assert_eq!(cmp["pairwise"].as_array().unwrap().len(), 1);
    assert_eq!(cmp["pairwise"][0]["result"]["test"], "wilcoxon");
    assert_eq!(
        cmp["inputs"][0]["sha256"].as_str().unwrap(),
        sha256_file(&dir.join("o/reports/gru-timeseries-s0.report.json")).unwrap()
    );
}

#[test]
fn run_manifest_trains_valid_pairs_and_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synthetic_dataset(dir, "60");
    fs::write(
        dir.join("run.json"),
        r#"{"dataset": "ds.jsonl", "out": "runs", "seed": 2, "archs": ["gru", "simplernn", "lstm", "cnn"],
            "representations": ["timeseries"], "budget": 1, "k": 1, "max_epochs": 2}"#,
    )
    .unwrap();
    let stdout = ok(&["run", "run.json"], dir);
    assert!(stdout.contains("skipped cnn-timeseries"), "{stdout}");
    let cmp: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("runs/reports/comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["groups"].as_array().unwrap().len(), 3);
    assert_eq!(cmp["omnibus"]["test"], "friedman");
}
