use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use spikedistill::data::read_pgm;
use spikedistill::events::video_to_events;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spikedistill"));
    c.env_remove("SPIKEDISTILL_THREADS").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn synth_small(out: &Path, seed: &str) {
    ok(&[
        "synth-data",
        "--out",
        p(out),
        "--seed",
        seed,
        "--subjects",
        "3",
        "--sequences",
        "7",
        "--frames",
        "16",
        "--size",
        "16",
    ]);
}

/// Config for a 16x16 dataset with narrow networks.
fn small_config(dir: &Path, data: &Path, epochs: usize) -> PathBuf {
    let widths = [4, 6, 6, 8, 8];
    let cfg = serde_json::json!({
        "seed": 3,
        "data": { "root": data },
        "nets": {
            "student": { "height": 16, "width": 16, "widths": widths },
            "teacher": {
                "height": 16, "width": 16,
                "event_widths": widths, "intensity_widths": widths
            }
        },
        "optim": { "epochs": epochs, "batch_size": 4 },
        "output_dir": dir.join("runs"),
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_dir(stdout: &str) -> PathBuf {
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory printed");
    PathBuf::from(line)
}

fn manifest(root: &Path) -> Value {
    serde_json::from_slice(&fs::read(root.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn missing_out_is_usage_error() {
    let out = run(&["synth-data", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_small(&a, "5");
    synth_small(&b, "5");
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn synth_data_refuses_non_empty_dir_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let args = [
        "synth-data",
        "--out",
        p(tmp.path()),
        "--subjects",
        "2",
        "--sequences",
        "1",
        "--frames",
        "16",
        "--size",
        "8",
    ];
    assert_eq!(run(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn subject_count_is_respected() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "synth-data",
        "--out",
        p(tmp.path()),
        "--subjects",
        "2",
        "--sequences",
        "3",
        "--frames",
        "16",
        "--size",
        "8",
    ]);
    let m = manifest(tmp.path());
    let subjects: std::collections::BTreeSet<u64> = m["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["subject"].as_u64().unwrap())
        .collect();
    assert_eq!(subjects.len(), 2);
}

fn write_clip(dir: &Path, frames: &[Vec<u8>]) {
    fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        let mut bytes = b"P5\n4 3\n255\n".to_vec();
        bytes.extend_from_slice(f);
        fs::write(dir.join(format!("{i:04}.pgm")), bytes).unwrap();
    }
}

#[test]
fn constant_frames_give_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, &vec![vec![90u8; 12]; 5]);
    let out = tmp.path().join("ev.csv");
    ok(&["simulate-events", "--in", p(&clip), "--out", p(&out)]);
    assert_eq!(csv_rows(&out), 0);
    assert!(out.with_extension("evfr").is_file());
}

#[test]
fn halving_threshold_does_not_lose_events() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "2");
    let m = manifest(&data);
    let clip = data.join(m["samples"][0]["frames"].as_str().unwrap());
    let (full, half) = (tmp.path().join("full.csv"), tmp.path().join("half.csv"));
    ok(&[
        "simulate-events",
        "--in",
        p(&clip),
        "--out",
        p(&full),
        "--threshold",
        "0.2",
    ]);
    ok(&[
        "simulate-events",
        "--in",
        p(&clip),
        "--out",
        p(&half),
        "--threshold",
        "0.1",
    ]);
    assert!(csv_rows(&full) > 0);
    assert!(csv_rows(&half) >= csv_rows(&full));

    let mut paths: Vec<PathBuf> = fs::read_dir(&clip)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    let frames: Vec<_> = paths.iter().map(|p| read_pgm(p).unwrap()).collect();
    let lib = video_to_events(&frames, 0.2, 1e-3).unwrap();
    assert_eq!(csv_rows(&full), lib.len());
}

#[test]
fn non_30_fps_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, &vec![vec![90u8; 12]; 3]);
    let out = run(&[
        "simulate-events",
        "--in",
        p(&clip),
        "--out",
        p(&tmp.path().join("e.csv")),
        "--fps",
        "25",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train-teacher",
        "--override",
        "optim.learning_rate=0.1",
        "--override",
        &format!("output_dir={}", p(tmp.path())),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_teacher_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["distill-student", "--teacher", p(&tmp.path().join("nope"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher checkpoint"));
}

#[test]
fn override_lands_in_resolved_config_and_eval_is_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "1");
    let cfg = small_config(tmp.path(), &data, 1);
    let stdout = ok(&[
        "train-teacher",
        "--config",
        p(&cfg),
        "--override",
        "optim.lr0=0.01",
    ]);
    let dir = run_dir(&stdout);
    let resolved: Value =
        serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["optim"]["lr0"], 0.01);
    assert_eq!(resolved["optim"]["epochs"], 1);

    let ckpt = dir.join("checkpoint");
    let first = run_dir(&ok(&[
        "evaluate",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ckpt),
    ]));
    let a = fs::read(first.join("report.json")).unwrap();
    let second = run_dir(&ok(&[
        "evaluate",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ckpt),
    ]));
    assert_eq!(first, second);
    assert_eq!(a, fs::read(second.join("report.json")).unwrap());
}

#[test]
fn diverging_run_exits_nonzero_and_keeps_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "1");
    let cfg = small_config(tmp.path(), &data, 3);
    let out = run(&[
        "train-teacher",
        "--config",
        p(&cfg),
        "--override",
        "optim.lr0=1e300",
        "--override",
        "nets.init_rate=null",
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runs: Vec<PathBuf> = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].join("train_log.jsonl").is_file());
}

#[test]
fn full_pipeline_smoke() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth-data", "--out", p(&data), "--seed", "0"]);
    let runs = tmp.path().join("runs");
    let common = [
        "--override".to_string(),
        format!("data.root={}", p(&data)),
        "--override".to_string(),
        format!("output_dir={}", p(&runs)),
        "--override".to_string(),
        "optim.epochs=3".to_string(),
    ];
    let with = |head: &[&str], extra: Option<(&str, &Path)>| {
        let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        args.extend(common.iter().cloned());
        if let Some((flag, path)) = extra {
            args.push(flag.to_string());
            args.push(p(path).to_string());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    };
    let teacher = run_dir(&with(&["train-teacher"], None));
    let student = run_dir(&with(
        &["distill-student"],
        Some(("--teacher", &teacher.join("checkpoint"))),
    ));
    assert_eq!(
        fs::read_to_string(student.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let eval = run_dir(&with(
        &["evaluate"],
        Some(("--checkpoint", &student.join("checkpoint"))),
    ));
    let report: Value =
        serde_json::from_slice(&fs::read(eval.join("report.json")).unwrap()).unwrap();
    assert!(report["war"].as_f64().is_some());
    let prof = run_dir(&with(
        &["profile"],
        Some(("--checkpoint", &student.join("checkpoint"))),
    ));
    assert!(fs::read_to_string(prof.join("report.txt"))
        .unwrap()
        .contains("pJ"));
    assert!(
        start.elapsed() < Duration::from_secs(600),
        "{:?}",
        start.elapsed()
    );
}
