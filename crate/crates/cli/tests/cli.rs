use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crownfit::evalsuite::{summarize, CaseReport, CorpusSummary};
use crownfit_cli::Manifest;

const TINY: [&str; 8] = [
    "synth.raster_size=32",
    "synth_hard.raster_size=32",
    "corpus.train=4",
    "corpus.val=3",
    "corpus.test=2",
    "train.epochs=1",
    "seeds=[0]",
    "report.plot_cases=2",
];

fn crownfit(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crownfit"));
    cmd.args(args).arg("--out").arg(out);
    for s in TINY.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], extra: &[&str]) -> String {
    let o = crownfit(out, args, extra);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Asserts a failed run printed exactly one `error[CODE]: ...` line.
fn fails_with(o: &Output, code: &str) {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "stderr: {err}");
}

fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn count_dirs(path: &Path) -> usize {
    std::fs::read_dir(path).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count()
}

#[test]
fn corpus_generation_is_sized_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-data"], &["corpus.train=10"]);
    let run = run_dir(tmp.path());
    assert_eq!(count_dirs(&run.join("corpus/train")), 10);
    assert_eq!(count_dirs(&run.join("corpus/val")), 3);
    assert_eq!(count_dirs(&run.join("corpus/test")), 2);
    let first: Manifest = read(&run.join("corpus/manifest.json"));
    ok(tmp.path(), &["gen-data"], &["corpus.train=10"]);
    let second: Manifest = read(&run.join("corpus/manifest.json"));
    assert_eq!(first, second);
    assert_eq!(first.splits.values().map(|s| s.count).sum::<usize>(), 15);
}

#[test]
fn train_eval_report_round() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let modes = ["modes=[\"Cond3\"]"];
    ok(out, &["gen-data"], &modes);
    ok(out, &["train"], &modes);
    let run = run_dir(out);
    let model = run.join("models/Cond3/seed-0");
    assert!(model.join("checkpoint.cfck").is_file());
    let curves = std::fs::read_to_string(model.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("step,loss_D,loss_G_adv,loss_L1,loss_H"));
    assert_eq!(lines.count(), 4);

    ok(out, &["eval"], &modes);
    for split in ["val", "test"] {
        let dir = run.join("eval/Cond3/seed-0").join(split);
        let summary: CorpusSummary = read(&dir.join("summary.json"));
        let mut reports: Vec<CaseReport> = std::fs::read_dir(dir.join("cases"))
            .unwrap()
            .map(|e| read(&e.unwrap().path()))
            .collect();
        reports.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        assert_eq!(summarize(&reports).unwrap(), summary);
        assert_eq!(summary.mean_iou.is_some(), split == "val");
        assert_eq!(count_dirs(&dir), 2);
    }

    ok(out, &["report"], &modes);
    for table in ["quality.csv", "penetration.csv", "contact.csv"] {
        let text = std::fs::read_to_string(run.join("report").join(table)).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2, "{table}");
        assert!(rows[1].starts_with("Cond3,1,"));
        assert_eq!(rows[0].split(',').count(), rows[1].split(',').count());
    }
    let svg_dir = run.join("report/histograms/Cond3/val");
    let svgs: Vec<_> = std::fs::read_dir(&svg_dir).unwrap().collect();
    assert_eq!(svgs.len(), 2);
    for e in svgs {
        let svg = std::fs::read_to_string(e.unwrap().path()).unwrap();
        assert!(svg.contains(r#"data-x-min="-0.5" data-x-max="0.5""#));
    }
    let png = std::fs::read(run.join("report/panels/Cond3/test").join(
        std::fs::read_dir(run.join("report/panels/Cond3/test")).unwrap().next().unwrap().unwrap().file_name(),
    ))
    .unwrap();
    assert_eq!(&png[1..4], b"PNG");
}

#[test]
fn designed_crowns_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-data"], &[]);
    ok(tmp.path(), &["eval", "--mode", "design"], &[]);
    let run = run_dir(tmp.path());
    let val: CorpusSummary = read(&run.join("eval/Design/val/summary.json"));
    assert_eq!(val.penetration_rate, 0.0);
    assert_eq!(val.mean_rmse, Some(0.0));
    assert_eq!(val.mean_iou, Some(1.0));
    assert_eq!(val.mean_boundary_f, Some(1.0));
    let test: CorpusSummary = read(&run.join("eval/Design/test/summary.json"));
    assert_eq!(test.penetration_rate, 0.0);
    assert_eq!(test.mean_rmse, None);
    assert_eq!(test.n_cases, 2);
}

#[test]
fn cond1_with_histogram_weight_is_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let o = crownfit(tmp.path(), &["train", "--mode", "Cond1"], &["lambda_h.Cond1=0.002"]);
    fails_with(&o, "E_CONFIG");
    assert!(!tmp.path().exists() || std::fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn failures_print_one_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    fails_with(&crownfit(tmp.path(), &["report"], &[]), "E_MISSING");
    fails_with(&crownfit(tmp.path(), &["train", "--mode", "HistW"], &[]), "E_MISSING");
    fails_with(&crownfit(tmp.path(), &["eval", "--split", "holdout"], &[]), "E_USAGE");
    fails_with(&crownfit(tmp.path(), &["gen-data"], &["corpus.bogus=1"]), "E_CONFIG");
    let o = Command::new(env!("CARGO_BIN_EXE_crownfit")).arg("frobnicate").output().unwrap();
    fails_with(&o, "E_USAGE");
    assert_eq!(o.status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_crownfit"))
        .args(["gen-data", "--config", "/nonexistent/exp.toml"])
        .output()
        .unwrap();
    fails_with(&missing, "E_IO");
}

#[test]
fn eval_before_training_names_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-data"], &[]);
    let o = crownfit(tmp.path(), &["eval", "--mode", "HistU", "--split", "val"], &[]);
    fails_with(&o, "E_MISSING");
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint.cfck"));
}
