use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtc_core::dataset::load_features;
use dtc_core::metrics::{evaluate, EvalReport};
use dtc_core::trainer::{initialize, TrainConfig};
use dtc_core::{EncoderParams, FeatureFormat};

fn dtc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dtc(args);
    assert!(
        out.status.success(),
        "dtc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// 6 labelled and 3 unlabelled classes, encoder pretrained with 2 probe classes held out.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth", "--labeled-classes", "6", "--unlabeled-classes", "3", "--per-class", "30",
            "--dim", "8", "--sep", "8", "--seed", "2", "--out", s(&root.join("data")),
        ]);
        ok(&[
            "pretrain", "--labeled", s(&root.join("data/labeled.csv")), "--n-probe", "2",
            "--epochs", "8", "--seed", "2", "--out", s(&root.join("pre")),
        ]);
        Fixture { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn synth_writes_two_feature_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "synth".to_string(), "--labeled-classes".into(), "5".into(), "--unlabeled-classes".into(), "5".into(),
            "--per-class".into(), "100".into(), "--dim".into(), "20".into(), "--sep".into(), "6".into(),
            "--seed".into(), "1".into(), "--out".into(), out.display().to_string(),
        ]
    };
    for name in ["a", "b"] {
        let a = args(&dir.path().join(name));
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for file in ["labeled.csv", "unlabeled.csv", "truth.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    assert_eq!(line_count(&dir.path().join("a/labeled.csv")), 501);
    assert_eq!(line_count(&dir.path().join("a/unlabeled.csv")), 501);
    assert!(dir.path().join("a/manifest.toml").exists());
}

#[test]
fn binary_format_round_trips_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth", "--labeled-classes", "3", "--unlabeled-classes", "2", "--per-class", "10",
        "--dim", "4", "--sep", "6", "--format", "binary", "--out", s(&data),
    ]);
    let x = load_features(&data.join("unlabeled.bin"), FeatureFormat::Binary).unwrap();
    assert_eq!(x.rows(), 20);
    ok(&["pretrain", "--labeled", s(&data.join("labeled.bin")), "--epochs", "2", "--out", s(&dir.path().join("pre"))]);
}

#[test]
fn usage_errors_exit_with_one() {
    let out = dtc(&["synth", "--labeled-classes", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = dtc(&["cluster", "--encoder", "e", "--unlabeled", "u", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1), "neither --k nor --auto-k");
    let out = dtc(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(dtc(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_a_file_error() {
    let f = Fixture::new();
    let out = dtc(&[
        "cluster", "--encoder", s(&f.path("nope.dtce")), "--unlabeled", s(&f.path("data/unlabeled.csv")),
        "--k", "3", "--out", s(&f.path("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.dtce"));
}

#[test]
fn cluster_without_epochs_is_the_kmeans_initialization() {
    let f = Fixture::new();
    let out = f.path("c");
    let stdout = ok(&[
        "cluster", "--encoder", s(&f.path("pre/encoder.dtce")), "--unlabeled", s(&f.path("data/unlabeled.csv")),
        "--k", "3", "--epochs", "0", "--warmup", "0", "--seed", "4", "--truth", s(&f.path("data/truth.csv")),
        "--out", s(&out),
    ]);
    assert!(stdout.contains("ACC"));
    let encoder = EncoderParams::from_checkpoint(&fs::read(f.path("pre/encoder.dtce")).unwrap()).unwrap();
    let x = load_features(&f.path("data/unlabeled.csv"), FeatureFormat::Csv).unwrap();
    let init = initialize(&encoder, &x, &TrainConfig::new(3, 4)).unwrap();
    let expected: String = std::iter::once("id,cluster".to_string())
        .chain(x.ids().iter().zip(init.p.hard_labels()).map(|(id, c)| format!("{id},{c}")))
        .map(|l| l + "\n")
        .collect();
    assert_eq!(fs::read_to_string(out.join("assignments.csv")).unwrap(), expected);
    assert_eq!(line_count(&out.join("trace.csv")), 1);
}

#[test]
fn cluster_trace_has_one_row_per_epoch() {
    let f = Fixture::new();
    let out = f.path("c");
    ok(&[
        "cluster", "--encoder", s(&f.path("pre/encoder.dtce")), "--unlabeled", s(&f.path("data/unlabeled.csv")),
        "--k", "3", "--variant", "tep", "--warmup", "2", "--epochs", "3", "--out", s(&out),
    ]);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,phase,kl_loss,consistency_loss,omega");
    assert_eq!(lines.len(), 6);
    assert!(lines[2].starts_with("1,warmup,") && lines[3].starts_with("2,main,"));
}

#[test]
fn auto_k_estimates_before_clustering() {
    let f = Fixture::new();
    let out = f.path("auto");
    let stdout = ok(&[
        "cluster", "--encoder", s(&f.path("pre/encoder.dtce")), "--unlabeled", s(&f.path("data/unlabeled.csv")),
        "--auto-k", "--labeled", s(&f.path("data/labeled.csv")), "--n-probe", "2", "--split-seed", "2",
        "--k-max", "6", "--warmup", "1", "--epochs", "2", "--out", s(&out),
    ]);
    assert!(stdout.contains("k_final"), "{stdout}");
    assert!(out.join("estimate_sweep.csv").exists());
    let report = fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("[estimate]"));
}

#[test]
fn estimate_with_zero_k_max_has_a_single_sweep_point() {
    let f = Fixture::new();
    let out = f.path("e");
    ok(&[
        "estimate-k", "--encoder", s(&f.path("pre/encoder.dtce")), "--labeled", s(&f.path("data/labeled.csv")),
        "--unlabeled", s(&f.path("data/unlabeled.csv")), "--n-probe", "2", "--split-seed", "2",
        "--k-max", "0", "--out", s(&out),
    ]);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0,"));
    let report = fs::read_to_string(out.join("estimate.toml")).unwrap();
    assert!(report.contains("k_hat = ") && report.contains("k_final = "));
}

#[test]
fn estimate_recovers_the_novel_count() {
    let f = Fixture::new();
    let out = f.path("e");
    ok(&[
        "estimate-k", "--encoder", s(&f.path("pre/encoder.dtce")), "--labeled", s(&f.path("data/labeled.csv")),
        "--unlabeled", s(&f.path("data/unlabeled.csv")), "--n-probe", "2", "--split-seed", "2",
        "--k-max", "8", "--out", s(&out),
    ]);
    let report: toml::Table = fs::read_to_string(out.join("estimate.toml")).unwrap().parse().unwrap();
    let k_final = report["k_final"].as_integer().unwrap();
    assert!((2..=4).contains(&k_final), "k_final {k_final}");
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn eval_of_relabelled_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (a, t) = (dir.path().join("a.csv"), dir.path().join("t.csv"));
    write(&a, "id,cluster\nx,7\ny,7\nz,2\nw,0\n");
    write(&t, "id,label\nw,1\nz,0\ny,5\nx,5\n");
    let stdout = ok(&["eval", "--assignments", s(&a), "--truth", s(&t), "--format", "csv", "--out", s(&dir.path().join("o"))]);
    assert_eq!(stdout, "acc,nmi,count_error,n_points\n1,1,0,4\n");
    assert_eq!(fs::read_to_string(dir.path().join("o/eval.csv")).unwrap(), stdout);
}

#[test]
fn eval_matches_the_metrics_module() {
    let dir = tempfile::tempdir().unwrap();
    let (a, t) = (dir.path().join("a.csv"), dir.path().join("t.csv"));
    let predicted = [0, 0, 1, 1, 2, 2, 2, 0];
    let truth = [0, 0, 0, 1, 1, 1, 2, 2];
    let body = |header: &str, v: &[usize]| {
        let mut s = format!("id,{header}\n");
        v.iter().enumerate().for_each(|(i, c)| s.push_str(&format!("r{i},{c}\n")));
        s
    };
    write(&a, &body("cluster", &predicted));
    write(&t, &body("label", &truth));
    let stdout = ok(&["eval", "--assignments", s(&a), "--truth", s(&t), "--format", "csv", "--out", s(&dir.path().join("o"))]);
    let EvalReport { acc, nmi, .. } = evaluate(&truth, &predicted).unwrap();
    assert_eq!(stdout.lines().nth(1).unwrap(), format!("{acc},{nmi},0,8"));
    assert_eq!(acc, 0.5);
}

#[test]
fn eval_reports_join_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (a, t) = (dir.path().join("a.csv"), dir.path().join("t.csv"));
    write(&a, "id,cluster\nx,0\ny,1\n");
    write(&t, "id,label\np,0\nq,1\n");
    let out = dtc(&["eval", "--assignments", s(&a), "--truth", s(&t), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("join error") && err.contains("x, y"), "{err}");
}

#[test]
fn sweep_rejects_an_empty_value_list() {
    let out = dtc(&["sweep", "--encoder", "e", "--unlabeled", "u", "--truth", "t", "--sweep", "k", "--values", "", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let f = Fixture::new();
    let out = f.path("s");
    ok(&[
        "sweep", "--encoder", s(&f.path("pre/encoder.dtce")), "--unlabeled", s(&f.path("data/unlabeled.csv")),
        "--truth", s(&f.path("data/truth.csv")), "--sweep", "bottleneck", "--values", "2,3", "--k", "3",
        "--warmup", "1", "--epochs", "1", "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "bottleneck,acc,nmi");
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
}

#[test]
fn replay_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, t) = (dir.path().join("a.csv"), dir.path().join("t.csv"));
    write(&a, "id,cluster\nx,0\ny,1\n");
    write(&t, "id,label\nx,0\ny,1\n");
    let out = dir.path().join("o");
    ok(&["eval", "--assignments", s(&a), "--truth", s(&t), "--out", s(&out)]);
    ok(&["replay", s(&out.join("manifest.toml"))]);
    write(&t, "id,label\nx,1\ny,1\n");
    let res = dtc(&["replay", s(&out.join("manifest.toml"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("changed"));
}

#[test]
fn thread_override_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_dtc"))
        .env("DTC_THREADS", "0")
        .args(["eval", "--assignments", "a", "--truth", "t", "--out", "o"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
