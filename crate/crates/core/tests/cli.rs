use std::path::Path;

use vqs_core::cli;
use vqs_core::metrics::{evaluate_run, report_csv, report_json, SubsetBounds};
use vqs_core::par::Execution;
use vqs_core::pipeline::PredictionManifest;
use vqs_core::synth::dataset::load_gt;
use vqs_core::synth::DatasetManifest;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn vqs(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(
        std::iter::once("vqs").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> Run {
    let r = vqs(args);
    assert_eq!(r.code, 0, "vqs {}: {}", args.join(" "), r.stderr);
    r
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn small_dataset(dir: &Path) -> String {
    let data = s(&dir.join("data"));
    ok(&[
        "gen", "--scenes", "3", "--seed", "9", "--out", &data, "--size", "24x32", "--frames",
        "8-12",
    ]);
    data
}

#[test]
fn eval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let pred = s(&dir.path().join("pred.json"));
    let report = dir.path().join("out/report.json");
    ok(&[
        "infer",
        "--data",
        &data,
        "--out",
        &pred,
        "--patch-size",
        "4",
        "--model-dim",
        "8",
    ]);
    let printed = ok(&["eval", "--gt", &data, "--pred", &pred, "--out", &s(&report)]).stdout;

    let m = DatasetManifest::read(Path::new(&data)).unwrap();
    let gt: Vec<_> = m
        .scenes
        .iter()
        .map(|e| load_gt(Path::new(&data), e).unwrap())
        .collect();
    let preds = PredictionManifest::read(Path::new(&pred))
        .unwrap()
        .responses()
        .unwrap();
    let run = evaluate_run(&gt, &preds, &SubsetBounds::default(), Execution::Sequential).unwrap();
    let json = report_json(&run.report);
    assert_eq!(printed, json);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), json);
    assert_eq!(
        std::fs::read_to_string(report.with_extension("csv")).unwrap(),
        report_csv(&run.report)
    );
    let csv = ok(&["eval", "--gt", &data, "--pred", &pred, "--format", "csv"]).stdout;
    assert_eq!(csv, report_csv(&run.report));
}

#[test]
fn sidecars_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let pred = s(&dir.path().join("pred.json"));
    let args = [
        "infer",
        "--data",
        &data,
        "--out",
        &pred,
        "--patch-size",
        "4",
        "--model-dim",
        "8",
        "--seed",
        "2",
    ];
    ok(&args);
    let first = std::fs::read(dir.path().join("pred.json.run.json")).unwrap();
    let first_pred = std::fs::read(&pred).unwrap();
    ok(&args);
    assert_eq!(
        std::fs::read(dir.path().join("pred.json.run.json")).unwrap(),
        first
    );
    assert_eq!(std::fs::read(&pred).unwrap(), first_pred);
    let record: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(record["command"]["Infer"]["pipeline"]["stages"], 2);
    assert_eq!(record["config_digest"].as_str().unwrap().len(), 64);
    let gen: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("data/run.json")).unwrap()).unwrap();
    assert_eq!(gen["command"]["Gen"]["seed"], 9);
}

#[test]
fn train_then_infer_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&dir.path().join("data"));
    ok(&[
        "gen",
        "--scenes",
        "1",
        "--seed",
        "2",
        "--out",
        &data,
        "--size",
        "16x16",
        "--frames",
        "5-5",
        "--occurrences",
        "1-1",
    ]);
    let ckpt = s(&dir.path().join("ck.bin"));
    let train = [
        "train",
        "--data",
        &data,
        "--out",
        &ckpt,
        "--steps",
        "4",
        "--lr",
        "1e-3",
        "--patch-size",
        "4",
        "--model-dim",
        "8",
        "--stages",
        "1",
        "--gamma",
        "1",
    ];
    ok(&train);
    let curve = std::fs::read_to_string(dir.path().join("ck.bin.curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "step,total,dice,mask_bce,iou_head,occ_bce");
    assert_eq!(lines.len(), 1 + 5);
    let first = std::fs::read(&ckpt).unwrap();
    ok(&train);
    assert_eq!(std::fs::read(&ckpt).unwrap(), first);

    let pred = s(&dir.path().join("pred.json"));
    let infer = [
        "infer",
        "--data",
        &data,
        "--ckpt",
        &ckpt,
        "--out",
        &pred,
        "--patch-size",
        "4",
        "--model-dim",
        "8",
        "--stages",
        "1",
        "--gamma",
        "1",
    ];
    ok(&infer);
    let fresh = s(&dir.path().join("fresh.json"));
    ok(&[
        "infer",
        "--data",
        &data,
        "--out",
        &fresh,
        "--patch-size",
        "4",
        "--model-dim",
        "8",
        "--stages",
        "1",
        "--gamma",
        "1",
    ]);
    let a = PredictionManifest::read(Path::new(&pred)).unwrap();
    let b = PredictionManifest::read(Path::new(&fresh)).unwrap();
    assert_ne!(a.checkpoint_digest, b.checkpoint_digest);

    let wrong = vqs(&[
        "infer",
        "--data",
        &data,
        "--ckpt",
        &ckpt,
        "--out",
        &pred,
        "--model-dim",
        "16",
        "--patch-size",
        "4",
        "--stages",
        "1",
        "--gamma",
        "1",
    ]);
    assert_eq!(wrong.code, 1);
    assert!(wrong.stderr.starts_with("{\"error\":"));
}

#[test]
fn validate_reports_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let clean = ok(&["validate", "--data", &data]);
    assert!(clean.stdout.starts_with("ok: 3 scenes"));
    std::fs::remove_file(dir.path().join("data/scenes/scene_0001/params.json")).unwrap();
    let r = vqs(&["validate", "--data", &data]);
    assert_eq!(r.code, 1);
    assert!(
        r.stdout
            .lines()
            .any(|l| l.starts_with("scene_0001: missing")),
        "{}",
        r.stdout
    );
    assert!(r.stdout.contains("content digest"));
    let err: serde_json::Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["error"], "validation");
}

#[test]
fn stats_and_gen_presets() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&dir.path().join("sub"));
    ok(&[
        "gen", "--scenes", "2", "--seed", "1", "--out", &data, "--preset", "subsets",
    ]);
    let csv = ok(&["stats", "--data", &data, "--format", "csv"]).stdout;
    assert!(csv.starts_with("stat,lo,hi,count\n"));
    let out = dir.path().join("stats.json");
    let json = ok(&["stats", "--data", &data, "--out", &s(&out)]).stdout;
    assert_eq!(std::fs::read_to_string(&out).unwrap(), json);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["scenes"], 2);
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        vqs(&["gen", "--scenes", "0", "--out", &s(dir.path())]).code,
        1
    );
    assert_eq!(vqs(&["gen", "--scenes", "two", "--out", "x"]).code, 2);
    assert_eq!(vqs(&[]).code, 2);
    let r = vqs(&["infer", "--data", "x", "--out", "y", "--stages", "3"]);
    assert_eq!(r.code, 1);
    let v: serde_json::Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(v["error"], "config");
    let data = small_dataset(dir.path());
    let r = vqs(&[
        "eval",
        "--gt",
        &data,
        "--pred",
        &s(&dir.path().join("missing.json")),
    ]);
    assert_eq!(r.code, 1);
}
