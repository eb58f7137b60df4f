use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use confseg::dataio::{load_pgm, save_cmap};
use confseg::experiment::ExperimentConfig;
use confseg::label::{Channel, ConfidenceMap, ConfidenceThreshold};

fn confseg<S: AsRef<OsStr>>(dir: &Path, args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confseg"))
        .args(args)
        .current_dir(dir)
        .env_remove("CONFSEG_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn confseg")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const TINY: &str = r#"{
  "thresholds": [0, 100], "folds": 3, "test_patients": 2, "max_folds": 1, "patients": 8,
  "seg_model": {"width": 32, "height": 32, "encoder_widths": [4, 8, 8], "lateral_width": 8},
  "seg_train": {"epochs": 2, "lr": 0.003, "batch_size": 8},
  "task_train": {"epochs": 1, "batch_size": 4},
  "pair_caps": {"train": 12, "val": 6, "test": 6},
  "phantom": {"width": 32, "height": 32, "frames": 4}
}"#;

fn tiny_cohort(dir: &Path) {
    std::fs::write(dir.join("tiny.json"), TINY).unwrap();
    ok(&confseg(dir, &["--config", "tiny.json", "--seed", "5", "--out", "cohort", "phantom-gen"]));
    ok(&confseg(dir, &["--config", "tiny.json", "--cohort", "cohort", "split"]));
}

#[test]
fn print_config_is_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = confseg(dir.path(), &["print-config"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, &text).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cmap = dir.path().join("z.cmap");
    save_cmap(&ConfidenceMap::zeros(4, 3).unwrap(), &cmap).unwrap();
    let out = confseg(dir.path(), &["threshold", "--cmap", "z.cmap", "-t", "37"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("37"));
    assert_eq!(confseg(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(confseg(dir.path(), &["split"]).status.code(), Some(2));
}

#[test]
fn threshold_on_zero_map_is_black() {
    let dir = tempfile::tempdir().unwrap();
    save_cmap(&ConfidenceMap::zeros(5, 4).unwrap(), &dir.path().join("z.cmap")).unwrap();
    ok(&confseg(dir.path(), &["--out", "masks", "threshold", "--cmap", "z.cmap", "-t", "0"]));
    for c in Channel::ALL {
        let img = load_pgm(&dir.path().join(format!("masks/z_t000_{}.pgm", c.name()))).unwrap();
        assert_eq!(img.dims(), (5, 4));
        assert!(img.pixels().iter().all(|&p| p == 0));
    }
}

#[test]
fn threshold_sweep_shrinks_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (9, 7);
    let values: Vec<u8> = (0..w * h * 6).map(|i| ((i * 37) % 101) as u8).collect();
    save_cmap(&ConfidenceMap::from_values(w, h, values).unwrap(), &dir.path().join("m.cmap")).unwrap();
    ok(&confseg(dir.path(), &["--out", "sweep", "threshold", "--cmap", "m.cmap", "--sweep"]));
    assert_eq!(std::fs::read_dir(dir.path().join("sweep")).unwrap().count(), 42);
    for c in Channel::ALL {
        let counts: Vec<usize> = ConfidenceThreshold::ALL
            .iter()
            .map(|t| {
                let p: PathBuf = dir.path().join(format!("sweep/m_t{:03}_{}.pgm", t.level(), c.name()));
                let img = load_pgm(&p).unwrap();
                assert!(img.pixels().iter().all(|&v| v == 0 || v == 255));
                img.pixels().iter().filter(|&&v| v == 255).count()
            })
            .collect();
        assert!(counts.windows(2).all(|p| p[0] >= p[1]), "{c:?}: {counts:?}");
    }
}

#[test]
fn seg_run_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cohort(dir.path());
    for out in ["r1", "r2"] {
        ok(&confseg(dir.path(), &["--config", "tiny.json", "--cohort", "cohort", "--out", out, "run"]));
    }
    for f in ["seg_results.csv", "seg_report.csv", "seg_summary.csv", "seg_sweep.svg"] {
        let a = std::fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let report = std::fs::read_to_string(dir.path().join("r1/seg_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "threshold,iou,weighted_ce,soft_ce,trimap_loss");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,") && lines[2].starts_with("100,"));
    let txt = std::fs::read_to_string(dir.path().join("r1/seg_report.txt")).unwrap();
    assert!(txt.contains("config sha256: ") && txt.contains("# seed: 0") && txt.contains("# deviation: "));
}

#[test]
fn staged_subcommands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cohort(dir.path());
    let base = ["--config", "tiny.json", "--cohort", "cohort", "--task", "sf_regress"];
    let with = |out: &str, cmd: &str| -> Vec<String> {
        base.iter().chain(&["--out", out, cmd]).map(|s| s.to_string()).collect()
    };
    ok(&confseg(dir.path(), &with("whole", "run")));
    for cmd in ["train-seg", "train-task", "eval-task", "report"] {
        ok(&confseg(dir.path(), &with("staged", cmd)));
    }
    let a = std::fs::read(dir.path().join("whole/sf_regress_results.csv")).unwrap();
    let b = std::fs::read(dir.path().join("staged/sf_regress_results.csv")).unwrap();
    assert_eq!(a, b);
    let seg = confseg(dir.path(), &with("staged", "eval-seg"));
    ok(&seg);
    assert!(dir.path().join("staged/seg_results.csv").exists());
}

#[test]
fn failed_sub_runs_exit_nonzero_with_logs() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cohort(dir.path());
    let out = confseg(dir.path(), &["--config", "tiny.json", "--cohort", "cohort", "--out", "empty", "eval-seg"]);
    assert_eq!(out.status.code(), Some(1));
    let logs: Vec<_> = std::fs::read_dir(dir.path().join("empty/logs")).unwrap().collect();
    assert_eq!(logs.len(), 2);
}

#[test]
fn data_dir_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cohort(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_confseg"))
        .args(["--config", "tiny.json", "split"])
        .current_dir(dir.path())
        .env("CONFSEG_DATA_DIR", dir.path().join("cohort"))
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = confseg(dir.path(), &["gradcheck"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
