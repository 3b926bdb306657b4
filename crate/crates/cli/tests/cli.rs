use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use discnet::resnet::{build_model, load_checkpoint, ModelConfig};
use discnet_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn call(args: &[String]) -> i32 {
    run(args.iter().cloned())
}

macro_rules! argv {
    ($($a:expr),* $(,)?) => { vec![$($a.to_string()),*] };
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
}

fn cohort(patients: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let c = root.join("cohort");
    assert_eq!(call(&argv!["phantom", "--out", s(&c), "--patients", patients, "--seed", seed]), EXIT_OK);
    Fixture {
        manifest: c.join("manifest.csv"),
        _dir: dir,
        root,
    }
}

fn train(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(name);
    let mut a = argv!["train", "--manifest", s(&f.manifest), "--out", s(&out), "--epochs-frozen", 1, "--epochs-unfrozen", 1];
    a.extend(extra.iter().map(|x| x.to_string()));
    assert_eq!(call(&a), EXIT_OK);
    out
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn phantom_is_byte_identical_for_a_seed() {
    let a = cohort(10, 7);
    let b = cohort(10, 7);
    assert_eq!(read(&a.manifest), read(&b.manifest));
    let img = "cohort/images/P0004_OS_v2.pgm";
    assert_eq!(read(&a.root.join(img)), read(&b.root.join(img)));
    let other = cohort(10, 8);
    assert_ne!(read(&a.manifest), read(&other.manifest));
}

#[test]
fn zero_patients_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(call(&argv!["phantom", "--out", s(dir.path()), "--patients", 0]), EXIT_USAGE);
}

#[test]
fn default_cohort_validates_without_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    assert_eq!(call(&argv!["phantom", "--out", s(&c)]), EXIT_OK);
    let v = dir.path().join("v");
    assert_eq!(call(&argv!["validate", "--manifest", s(&c.join("manifest.csv")), "--out", s(&v)]), EXIT_OK);
    let text = fs::read_to_string(v.join("exclusions.csv")).unwrap();
    assert_eq!(text.trim(), "line,patient_id,reason");
    let rows = fs::read_to_string(c.join("manifest.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 200 * 2 * 3);
}

#[test]
fn usage_and_runtime_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(call(&argv![]), EXIT_USAGE);
    assert_eq!(call(&argv!["frobnicate"]), EXIT_USAGE);
    assert_eq!(call(&argv!["phantom", "--out", s(dir.path()), "--bogus", 1]), EXIT_USAGE);
    assert_eq!(call(&argv!["split", "--out", s(dir.path())]), EXIT_USAGE);
    assert_eq!(call(&argv!["phantom", "--out", s(dir.path()), "--patients", "many"]), EXIT_USAGE);
    assert_eq!(call(&argv!["phantom", "--help"]), EXIT_OK);
    let missing = dir.path().join("nope.csv");
    assert_eq!(call(&argv!["split", "--manifest", s(&missing), "--out", s(dir.path())]), EXIT_RUNTIME);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_discnet");
    let out = Command::new(bin).args(["phantom", "--patients", "0", "--out", "unused"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3 patients"));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&out.stdout).contains("lr-find"));
}

#[test]
fn config_file_with_overrides_and_resolved_copy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("c");
    fs::write(&cfg, format!("out = {}\npatients = 50\nseed = 4\n", s(&out))).unwrap();
    assert_eq!(call(&argv!["phantom", "--config", s(&cfg), "--patients", 5]), EXIT_OK);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("patients = 5\n"));
    assert!(resolved.contains("seed = 4\n"));
    // rerunning from the resolved copy reproduces the cohort
    let again = dir.path().join("again");
    assert_eq!(call(&argv!["phantom", "--config", s(&out.join("config.resolved")), "--out", s(&again)]), EXIT_OK);
    assert_eq!(read(&out.join("manifest.csv")), read(&again.join("manifest.csv")));
}

#[test]
fn split_command_matches_train_split() {
    let f = cohort(12, 1);
    let sp = f.root.join("split");
    assert_eq!(call(&argv!["split", "--manifest", s(&f.manifest), "--out", s(&sp), "--seed", 5]), EXIT_OK);
    let t = train(&f, "t", &["--seed", "5", "--epochs", "0"]);
    assert_eq!(read(&sp.join("split.csv")), read(&t.join("split.csv")));
    assert!(sp.join("config.resolved").exists());
}

#[test]
fn train_rerun_is_identical_and_inputs_untouched() {
    let f = cohort(12, 2);
    let before = read(&f.manifest);
    let a = train(&f, "a", &["--seed", "3"]);
    let b = train(&f, "b", &["--seed", "3"]);
    assert_eq!(read(&a.join("history.csv")), read(&b.join("history.csv")));
    assert_eq!(read(&a.join("model.ckpt")), read(&b.join("model.ckpt")));
    assert_eq!(read(&f.manifest), before);
    let hist = fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);
    assert!(hist.contains(",frozen,") && hist.contains(",unfrozen,"));

    // reusing the written split leaves it as it was
    let split = read(&a.join("split.csv"));
    let c = train(&f, "c", &["--seed", "3", "--split", &s(&a.join("split.csv"))]);
    assert_eq!(read(&a.join("split.csv")), split);
    assert_eq!(read(&c.join("history.csv")), read(&a.join("history.csv")));
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let f = cohort(8, 3);
    let out = train(&f, "z", &["--epochs", "0", "--seed", "11"]);
    let saved = load_checkpoint(out.join("model.ckpt")).unwrap();
    let init = build_model(&ModelConfig::micro(), 11).unwrap();
    assert_eq!(saved.params(), init.params());
    assert_eq!(saved.bn_stats(), init.bn_stats());
    let hist = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1);
}

#[test]
fn patient_in_two_splits_aborts_training() {
    let f = cohort(8, 4);
    let bad = f.root.join("bad_split.csv");
    fs::write(&bad, "patient_id,split\nP0001,train\nP0001,valid\nP0002,train\nP0003,test\n").unwrap();
    let out = f.root.join("t");
    let code = call(&argv!["train", "--manifest", s(&f.manifest), "--out", s(&out), "--split", s(&bad), "--epochs", 1]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(!out.join("model.ckpt").exists());
}

fn eval(f: &Fixture, ckpt: &Path, split: &Path, name: &str, extra: &[&str]) -> (i32, PathBuf) {
    let out = f.root.join(name);
    let mut a = argv!["eval", "--checkpoint", s(ckpt), "--manifest", s(&f.manifest), "--split", s(split), "--out", s(&out), "--boot", 200];
    a.extend(extra.iter().map(|x| x.to_string()));
    (call(&a), out)
}

#[test]
fn eval_writes_every_artifact_deterministically() {
    let f = cohort(20, 5);
    let t = train(&f, "t", &[]);
    let (ckpt, split) = (t.join("model.ckpt"), t.join("split.csv"));
    let (code, a) = eval(&f, &ckpt, &split, "ea", &[]);
    assert_eq!(code, EXIT_OK);
    for file in ["report.csv", "summary.txt", "roc.svg", "scatter.svg", "violin.svg", "bland_altman.svg", "lowess.svg", "predictions.csv", "config.resolved"] {
        assert!(a.join(file).exists(), "{file}");
    }
    let (_, b) = eval(&f, &ckpt, &split, "eb", &[]);
    for file in ["report.csv", "summary.txt", "roc.svg", "predictions.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let (_, c) = eval(&f, &ckpt, &split, "ec", &["--seed", "9"]);
    assert_ne!(read(&a.join("report.csv")), read(&c.join("report.csv")));
}

#[test]
fn empty_split_is_an_error() {
    let f = cohort(10, 6);
    let t = train(&f, "t", &["--ratios", "0.8,0.2,0", "--epochs", "0"]);
    let (code, _) = eval(&f, &t.join("model.ckpt"), &t.join("split.csv"), "e", &[]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn gradcam_views_determinism_and_head_check() {
    let f = cohort(6, 7);
    let t = train(&f, "t", &["--epochs", "1"]);
    let stereo = f.root.join("stereo");
    assert_eq!(call(&argv!["phantom", "--out", s(&stereo), "--patients", 3, "--stereo", "--visits", 1]), EXIT_OK);
    let photo = stereo.join("images/P0002_OD_v1.pgm");
    let ckpt = t.join("model.ckpt");
    let run_cam = |name: &str, target: &str| {
        let out = f.root.join(name);
        (call(&argv!["gradcam", "--checkpoint", s(&ckpt), "--out", s(&out), "--target", target, s(&photo)]), out)
    };
    let (code, a) = run_cam("ga", "regression");
    assert_eq!(code, EXIT_OK);
    let heatmaps: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with("_heatmap.pgm"))
        .collect();
    assert_eq!(heatmaps.len(), 2);
    let (_, b) = run_cam("gb", "regression");
    for file in ["P0002_OD_v1_left_heatmap.pgm", "P0002_OD_v1_right_overlay.ppm", "P0002_OD_v1_left.svg"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let (code, _) = run_cam("gc", "abnormality");
    assert_eq!(code, EXIT_USAGE);
}

fn records(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn gallery_matches_eval_and_is_seeded() {
    let f = cohort(20, 8);
    let t = train(&f, "t", &["--head", "both"]);
    let (ckpt, split) = (t.join("model.ckpt"), t.join("split.csv"));
    let (code, e) = eval(&f, &ckpt, &split, "e", &[]);
    assert_eq!(code, EXIT_OK);
    let predictions = records(&e.join("predictions.csv"));

    let gallery = |name: &str, seed: u64| {
        let out = f.root.join(name);
        let a = argv!["gallery", "--checkpoint", s(&ckpt), "--manifest", s(&f.manifest), "--split", s(&split), "--out", s(&out), "--n", 3, "--seed", seed];
        assert_eq!(call(&a), EXIT_OK);
        out
    };
    let a = gallery("ga", 1);
    let mut shown = 0;
    for sheet in ["correct", "incorrect"] {
        for r in records(&a.join(format!("{sheet}.csv"))) {
            assert!(predictions.contains(&r), "{r}");
            let cols: Vec<&str> = r.split(',').collect();
            let svg = fs::read_to_string(a.join(format!("{sheet}.svg"))).unwrap();
            assert!(svg.contains(&format!("OCT {} um, predicted {} um", cols[6], cols[7])));
            assert!(svg.contains(&format!("P(abnormal) {}", cols[8])));
            shown += 1;
        }
    }
    assert!(shown > 0);
    let b = gallery("gb", 1);
    assert_eq!(read(&a.join("correct.svg")), read(&b.join("correct.svg")));
    assert_eq!(read(&a.join("correct.csv")), read(&b.join("correct.csv")));
}

#[test]
fn gallery_needs_classification_head() {
    let f = cohort(8, 9);
    let t = train(&f, "t", &["--epochs", "0"]);
    let out = f.root.join("g");
    let a = argv!["gallery", "--checkpoint", s(&t.join("model.ckpt")), "--manifest", s(&f.manifest), "--split", s(&t.join("split.csv")), "--out", s(&out)];
    assert_eq!(call(&a), EXIT_USAGE);
}

#[test]
fn perfect_classifier_leaves_incorrect_sheet_empty() {
    let f = cohort(10, 10);
    // every reference label abnormal, and a model that always says abnormal
    let text = fs::read_to_string(&f.manifest).unwrap();
    let relabeled: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let mut cols: Vec<&str> = l.split(',').collect();
                *cols.last_mut().unwrap() = "outside";
                format!("{}\n", cols.join(","))
            }
        })
        .collect();
    let manifest = f.root.join("cohort/relabeled.csv");
    fs::write(&manifest, relabeled).unwrap();

    let mut cfg = ModelConfig::micro();
    cfg.head = discnet::resnet::Head::Classification;
    let mut m = build_model(&cfg, 0).unwrap();
    m.zero_heads();
    let bias = (0..m.params().len()).find(|&i| m.param_name(i) == "head_classification.bias").unwrap();
    m.params_mut()[bias].data_mut()[0] = 40.0;
    let ckpt = f.root.join("always.ckpt");
    discnet::resnet::save_checkpoint(&m, &ckpt).unwrap();

    let sp = f.root.join("sp");
    assert_eq!(call(&argv!["split", "--manifest", s(&manifest), "--out", s(&sp)]), EXIT_OK);
    let out = f.root.join("g");
    let a = argv!["gallery", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", s(&sp.join("split.csv")), "--out", s(&out), "--n", 4];
    assert_eq!(call(&a), EXIT_OK);
    assert!(records(&out.join("incorrect.csv")).is_empty());
    assert!(fs::read_to_string(out.join("incorrect.svg")).unwrap().contains("no examples"));
    assert_eq!(records(&out.join("correct.csv")).len(), 4);
}

#[test]
fn lr_find_writes_table() {
    let f = cohort(8, 11);
    let out = f.root.join("lr");
    let a = argv!["lr-find", "--manifest", s(&f.manifest), "--out", s(&out), "--steps", 20, "--batch-size", 16];
    assert_eq!(call(&a), EXIT_OK);
    let rows = records(&out.join("lr_find.csv"));
    assert!(!rows.is_empty() && rows.len() <= 20);
    assert!(out.join("config.resolved").exists());
}
