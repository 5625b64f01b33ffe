use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stmamba::data::{read_archive, synth_generate, write_archive, SynthConfig};

fn stmamba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmamba")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const SMALL: [&str; 12] = [
    "--channels", "3", "--samples", "250", "--classes", "2", "--trials-per-class", "12", "--test-per-class", "6", "--epochs",
    "2",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap(), "--snr", "20"];
    args.extend(SMALL);
    args.extend(extra);
    stmamba(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = train(&run, &["--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test accuracy"));
    let mut names: Vec<String> = fs::read_dir(&run).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["history.jsonl", "manifest.json", "model.ckpt", "report.json", "standardization.json", "test.eta"]);
    assert_eq!(fs::read_to_string(run.join("history.jsonl")).unwrap().lines().count(), 2);

    let eval = stmamba(&["--json", "eval", "--checkpoint", s(&run.join("model.ckpt")), "--data", s(&run.join("test.eta"))]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let trained = report(&run)["test"].clone();
    let evaluated = json(&eval);
    assert_eq!(evaluated["accuracy"], trained["accuracy"]);
    assert_eq!(evaluated["confusion"], trained["confusion"]);
    assert_eq!(evaluated["loss"], trained["loss"]);
}

#[test]
fn rerun_from_manifest_is_bitwise_in_f64() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = train(&a, &["--seed", "3", "--precision", "f64"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = stmamba(&["train", "--manifest", s(&a.join("manifest.json")), "--out", s(&b)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("test.eta")).unwrap(), fs::read(b.join("test.eta")).unwrap());
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(ra["test_native"], rb["test_native"]);
    assert_eq!(ra["test"], rb["test"]);
    let strip = |dir: &Path| -> Vec<Value> {
        fs::read_to_string(dir.join("history.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("seconds");
                v
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn existing_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), &[])), 0);
    let again = train(dir.path(), &[]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("manifest"));
}

#[test]
fn every_ablation_trains() {
    let dir = tempfile::tempdir().unwrap();
    for ablation in ["none", "temporal", "spatial"] {
        let run = dir.path().join(ablation);
        let out = train(&run, &["--ablation", ablation]);
        assert_eq!(code(&out), 0, "{ablation}: {}", stderr(&out));
        assert!(report(&run)["n_parameters"].as_u64().unwrap() > 0);
    }
    let table = stmamba(&["--json", "table", s(&dir.path().join("none")), s(&dir.path().join("spatial"))]);
    assert_eq!(code(&table), 0, "{}", stderr(&table));
    assert_eq!(json(&table)["columns"], serde_json::json!(["synth/spatial_only", "synth/none"]));
}

fn synth_archive(dir: &Path, channels: usize, classes: usize) -> PathBuf {
    let path = dir.join(format!("synth_{channels}_{classes}.eta"));
    let out = stmamba(&[
        "synth", "--channels", &channels.to_string(), "--classes", &classes.to_string(), "--samples", "250",
        "--trials-per-class", "4", "--test-per-class", "2", "--output", s(&path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn dataset_geometry_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_archive(dir.path(), 3, 2);
    let out = stmamba(&["train", "--dataset", "2a", "--data", s(&data), "--out", s(&dir.path().join("r")), "--epochs", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("22 channels"), "{}", stderr(&out));
    assert!(!dir.path().join("r").join("manifest.json").exists());

    let out = stmamba(&["train", "--dataset", "2b", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train(&run, &[])), 0);
    let ckpt = run.join("model.ckpt");

    let other = synth_archive(dir.path(), 4, 2);
    let out = stmamba(&["eval", "--checkpoint", s(&ckpt), "--data", s(&other)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let test = read_archive(run.join("test.eta")).unwrap();
    let empty = dir.path().join("empty.eta");
    write_archive(&test.subset(&[]), &empty).unwrap();
    let out = stmamba(&["eval", "--checkpoint", s(&ckpt), "--data", s(&empty)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no trials"));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 10);
    let broken = run.join("broken.ckpt");
    fs::write(&broken, &bytes).unwrap();
    let out = stmamba(&["eval", "--checkpoint", s(&broken), "--data", s(&run.join("test.eta"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    fs::write(&broken, b"{not json\n").unwrap();
    assert_eq!(code(&stmamba(&["eval", "--checkpoint", s(&broken), "--data", s(&run.join("test.eta"))])), 3);
}

fn csv_fixture(dir: &Path, ragged: bool) {
    fs::create_dir_all(dir).unwrap();
    let mut manifest = String::from("file,label,session,sampling_rate_hz\n");
    for trial in 0..4 {
        let mut body = String::from("C3,Cz,C4\n");
        for t in 0..6 {
            body.push_str(&format!("{},{},{}\n", trial + t, 0.5 * t as f32, -(trial as f32)));
        }
        if ragged && trial == 2 {
            body.push_str("1.0,2.0\n");
        }
        fs::write(dir.join(format!("t{trial}.csv")), body).unwrap();
        manifest.push_str(&format!("t{trial}.csv,{},T,250\n", trial % 2));
    }
    fs::write(dir.join("manifest.csv"), manifest).unwrap();
}

#[test]
fn convert_is_idempotent_and_reports_ragged_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("csv");
    csv_fixture(&csv, false);
    let (a, b) = (dir.path().join("a.eta"), dir.path().join("b.eta"));
    for out in [&a, &b] {
        let r = stmamba(&["convert", "--from", "csv", "--to", "eta", "--input", s(&csv), "--output", s(out)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let set = read_archive(&a).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set.trial(1)[..6], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(set.labels, [0, 1, 0, 1]);

    let bad = dir.path().join("bad");
    csv_fixture(&bad, true);
    let r = stmamba(&["convert", "--from", "csv", "--to", "eta", "--input", s(&bad), "--output", s(&dir.path().join("c.eta"))]);
    assert_eq!(code(&r), 3);
    assert!(stderr(&r).contains("t2.csv") && stderr(&r).contains("row"), "{}", stderr(&r));
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_archive(dir.path(), 3, 2);
    let first = fs::read(&a).unwrap();
    fs::remove_file(&a).unwrap();
    assert_eq!(fs::read(synth_archive(dir.path(), 3, 2)).unwrap(), first);
    let direct = synth_generate(&SynthConfig { session: "T".into(), ..SynthConfig::new(4, 2, 3, 250, 10.0, 0) }).unwrap();
    let set = read_archive(&a).unwrap();
    assert_eq!(set.subset(&(0..8).collect::<Vec<_>>()).trials, direct.trials);
    assert_eq!(set.sessions(), ["T", "E"]);
}

#[test]
fn selftest_passes_and_catches_an_injected_fault() {
    let clean = stmamba(&["--json", "selftest"]);
    assert_eq!(code(&clean), 0, "{}", String::from_utf8_lossy(&clean.stdout));
    assert!(json(&clean).as_array().unwrap().iter().all(|r| r["passed"] == true));

    let faulty = stmamba(&["--json", "selftest", "--inject-fault", "conv2d"]);
    assert_eq!(code(&faulty), 1);
    let failed: Vec<String> = json(&faulty)
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["name"].as_str().unwrap().to_string())
        .collect();
    assert!(failed.contains(&"gradient/conv2d".to_string()), "{failed:?}");
    assert!(!failed.contains(&"gradient/linear".to_string()));
}

#[test]
fn bench_checks_equivalence_and_rejects_kernel_for_selective_systems() {
    let out = stmamba(&["--json", "bench", "--scan", "par", "--L", "300", "--d", "4,8", "--repeats", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = json(&out)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["max_rel_diff"].as_f64().unwrap() < 1e-4));

    let out = stmamba(&["bench", "--scan", "kernel", "--L", "64"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("time-invariant"));
    assert_eq!(code(&stmamba(&["bench", "--scan", "kernel", "--lti", "--L", "64", "--repeats", "1"])), 0);
}
