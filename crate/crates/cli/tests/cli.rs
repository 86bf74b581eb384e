use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisylab_cli::sweep::prepare;
use noisylab_cli::ExperimentConfig;
use noisylab_core::data::{write_jsonl, Example};
use noisylab_core::{Checkpoint, Dataset, LabelSet};

fn noisylab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisylab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NOISYLAB_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn text_file(dir: &Path, n: usize, k: usize) -> PathBuf {
    let examples = (0..n).map(|i| Example::new(format!("d{i}"), format!("word{} filler", i % 17))).collect();
    let ds = Dataset::new(examples, k, Some((0..n).map(|i| i % k).collect()), None).unwrap();
    let path = dir.join("clean.jsonl");
    write_jsonl(&ds, &path).unwrap();
    path
}

fn read_pairs(path: &Path) -> Vec<(usize, usize)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                v["clean_label"].as_u64().unwrap() as usize,
                v["noisy_label"].as_u64().unwrap() as usize,
            )
        })
        .collect()
}

#[test]
fn inject_uniform_hits_the_requested_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let input = text_file(tmp.path(), 4000, 4);
    let o = noisylab(
        &["inject", "--input", input.to_str().unwrap(), "--output", "noisy.jsonl", "-k", "4",
          "--type", "uniform", "--level", "0.4", "--seed", "7"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs = read_pairs(&tmp.path().join("noisy.jsonl"));
    let wrong = pairs.iter().filter(|(c, n)| c != n).count() as f64 / pairs.len() as f64;
    let bound = 4.0 * (0.4f64 * 0.6 / 4000.0).sqrt();
    assert!((wrong - 0.4).abs() < bound, "{wrong}");
    assert!(stdout(&o).contains(&format!("realized FDR: {wrong:.4}")), "{}", stdout(&o));
    assert!(stdout(&o).contains("(generator matrix): true"));
}

#[test]
fn inject_sflip_at_one_half_is_not_dominant() {
    let tmp = tempfile::tempdir().unwrap();
    let input = text_file(tmp.path(), 200, 4);
    let o = noisylab(
        &["inject", "--input", input.to_str().unwrap(), "--output", "o.jsonl", "-k", "4",
          "--type", "sflip", "--level", "0.5"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("diagonally dominant (generator matrix): false"), "{}", stdout(&o));
}

#[test]
fn inject_rejects_non_stochastic_matrix_naming_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let input = text_file(tmp.path(), 20, 2);
    fs::write(tmp.path().join("m.csv"), "0.9,0.1\n0.5,0.6\n").unwrap();
    let o = noisylab(
        &["inject", "--input", input.to_str().unwrap(), "--output", "o.jsonl", "-k", "2",
          "--type", "matrix", "--matrix", "m.csv"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 1"), "{}", stderr(&o));
}

#[test]
fn inject_conflicting_flags_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let input = text_file(tmp.path(), 20, 2);
    for extra in [
        vec!["--type", "uniform", "--level", "0.2", "--matrix", "m.csv"],
        vec!["--type", "matrix", "--level", "0.2"],
        vec!["--type", "uniform"],
    ] {
        let mut args = vec!["inject", "--input", input.to_str().unwrap(), "--output", "o.jsonl", "-k", "2"];
        args.extend(extra.iter());
        let o = noisylab(&args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", stderr(&o));
    }
}

#[test]
fn inject_rules_reports_the_empirical_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let input = text_file(tmp.path(), 170, 2);
    fs::write(tmp.path().join("r.jsonl"), "{\"keyword\": \"word3\", \"class\": 1}\n").unwrap();
    let o = noisylab(
        &["inject", "--input", input.to_str().unwrap(), "--output", "o.jsonl", "-k", "2",
          "--type", "rules", "--rules", "r.jsonl"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs = read_pairs(&tmp.path().join("o.jsonl"));
    // word3 marks documents 3, 20, 37, ...; the even ones are class 0 and flip.
    let expected = (0..170).filter(|i| i % 17 == 3 && i % 2 == 0).count();
    assert_eq!(pairs.iter().filter(|(c, n)| c != n).count(), expected);
    assert!(stdout(&o).contains("(empirical matrix)"));
}

const SWEEP: &str = r#"
trials = 5
[data]
source = "synth"
k = 3
n = 300
margin = 0.4
seed = 5
[noise]
type = "uniform"
level = 0.3
seed = 6
[train]
max_epochs = 4
eval_every = 20
seed = 40
[[strategies]]
name = "WN"
[[strategies]]
name = "LS"
alpha = 0.2
"#;

fn trial_dirs(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for s in fs::read_dir(root).unwrap() {
        let s = s.unwrap().path();
        if s.is_dir() {
            for t in fs::read_dir(&s).unwrap() {
                out.push(t.unwrap().path());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn sweep_layout_determinism_and_interruption() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("sweep.toml"), SWEEP).unwrap();
    for out in ["a", "b"] {
        let o = noisylab(&["run", "sweep.toml", "--output", out, "--jobs", "2"], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = trial_dirs(&tmp.path().join("a"));
    assert_eq!(a.len(), 10);
    for dir in &a {
        for f in ["record.jsonl", "summary.json", "best.ckpt", "final.ckpt", "snapshot.json"] {
            assert!(dir.join(f).is_file(), "{}/{f}", dir.display());
        }
        assert!(!dir.join("INCOMPLETE").exists());
        let twin = tmp.path().join("b").join(dir.strip_prefix(tmp.path().join("a")).unwrap());
        for f in ["summary.json", "record.jsonl", "best.ckpt"] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(twin.join(f)).unwrap(), "{f}");
        }
    }

    let o = noisylab(&["report", "a"], tmp.path());
    assert!(o.status.success());
    let full = stdout(&o);
    assert!(full.contains("\nLS,5,") && full.contains("\nWN,5,"), "{full}");

    fs::write(a[0].join("INCOMPLETE"), "running\n").unwrap();
    let o = noisylab(&["report", "a"], tmp.path());
    assert!(o.status.success());
    assert!(stderr(&o).contains("skipping incomplete run"), "{}", stderr(&o));
    assert!(stdout(&o).contains("\nLS,4,"), "{}", stdout(&o));
}

#[test]
fn reported_accuracy_is_reproducible_from_the_best_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("sweep.toml");
    fs::write(&cfg_path, SWEEP.replace("trials = 5", "trials = 1")).unwrap();
    let o = noisylab(&["run", "sweep.toml", "-o", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let data = prepare(&cfg).unwrap();
    for label in ["WN", "LS"] {
        let dir = tmp.path().join("out").join(label).join("trial_0");
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        let ckpt = Checkpoint::load(dir.join("best.ckpt")).unwrap();
        let acc = ckpt.params.evaluate(&data.test, LabelSet::Clean).unwrap();
        assert_eq!(acc, summary["best_test_acc"].as_f64().unwrap());
        assert_eq!(ckpt.step, summary["best_step"].as_u64().unwrap());
    }
}

fn write_summary(dir: &Path, acc: f64, gap: f64, auc: Option<f64>) {
    fs::create_dir_all(dir).unwrap();
    let s = serde_json::json!({
        "strategy": "WN", "best_step": 10, "final_step": 20, "best_val_acc": 0.5,
        "best_test_acc": acc, "final_test_acc": acc - gap, "reported_test_acc": acc,
        "memorization_gap": gap, "stop_reason": "patience", "auc": auc,
    });
    fs::write(dir.join("summary.json"), s.to_string()).unwrap();
}

#[test]
fn report_matches_hand_aggregation() {
    let tmp = tempfile::tempdir().unwrap();
    let accs = [0.81, 0.79, 0.84, 0.80, 0.86];
    let gaps = [0.05, 0.02, 0.0, 0.04, 0.01];
    let aucs = [0.9, 0.8, 0.85, 0.95, 0.7];
    for t in 0..5 {
        write_summary(&tmp.path().join(format!("s/WN/trial_{t}")), accs[t], gaps[t], Some(aucs[t]));
    }
    write_summary(&tmp.path().join("s/LS/trial_0"), 0.5, 0.1, None);

    // Spreadsheet-style: mean = 0.82, squared deviations sum to 0.0034.
    let std = (0.0034f64 / 4.0).sqrt();
    let expected_wn = format!("WN,5,82.00±{:.2},2.40,0.8400", 100.0 * std);
    let o = noisylab(&["report", "s", "-o", "r.csv"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    assert_eq!(
        csv,
        format!("strategy,trials,test_acc,memorization_gap,auc\nLS,1,50.00±0.00,10.00,\n{expected_wn}\n")
    );
    assert!(stderr(&o).contains("LS: single trial"), "{}", stderr(&o));
}

#[test]
fn report_without_completed_runs_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s/WN/trial_0");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("INCOMPLETE"), "failed: boom\n").unwrap();
    let o = noisylab(&["report", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no completed runs"));
}

#[test]
fn diagnose_writes_csvs_consistent_with_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("sweep.toml"), SWEEP.replace("trials = 5", "trials = 1")).unwrap();
    assert!(noisylab(&["run", "sweep.toml", "-o", "out"], tmp.path()).status.success());
    let dir = tmp.path().join("out/WN/trial_0");
    let o = noisylab(&["diagnose", dir.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let roc = fs::read_to_string(dir.join("roc.csv")).unwrap();
    let mut lines = roc.lines();
    assert_eq!(lines.next(), Some("threshold,fpr,tpr"));
    assert_eq!(lines.next(), Some("inf,0,0"));
    let pts: Vec<(f64, f64)> = roc
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect();
    assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    let auc: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert!((auc - summary["auc"].as_f64().unwrap()).abs() < 1e-12);

    let hist = fs::read_to_string(dir.join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_left,bin_right,count_correct,count_wrong"));
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(2).map(|c| c.parse::<usize>().unwrap()).sum::<usize>())
        .sum();
    assert_eq!(total, 240);
    assert!(dir.join("report.csv").is_file());
}

#[test]
fn diagnose_zero_noise_is_degenerate_not_a_crash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SWEEP
        .replace("trials = 5", "trials = 1")
        .replace("type = \"uniform\"\nlevel = 0.3\nseed = 6", "type = \"none\"");
    fs::write(tmp.path().join("sweep.toml"), cfg).unwrap();
    let o = noisylab(&["run", "sweep.toml", "-o", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = noisylab(&["diagnose", "out/WN/trial_0"], tmp.path());
    assert_eq!(o.status.code(), Some(noisylab_cli::EXIT_DEGENERATE as i32), "{}", stderr(&o));
    assert!(stderr(&o).contains("no ROC curve"));

    fs::remove_file(tmp.path().join("out/WN/trial_0/snapshot.json")).unwrap();
    let o = noisylab(&["diagnose", "out/WN/trial_0"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no loss snapshot"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), SWEEP.replace("trials = 5", "trials = 1")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_noisylab"))
        .args(["run", "tiny.toml"])
        .current_dir(tmp.path())
        .env("NOISYLAB_OUTPUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("root/tiny/WN/trial_0/summary.json").is_file());
}

#[test]
fn config_typos_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), SWEEP.replace("max_epochs", "max_epoch")).unwrap();
    let o = noisylab(&["run", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("max_epoch"), "{}", stderr(&o));
}

#[test]
fn failed_run_keeps_a_marker_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let labelled = |n: usize, clean: bool| {
        let examples = (0..n).map(|i| Example::new(format!("d{i}"), format!("w{}", i % 2))).collect();
        let labels = Some((0..n).map(|i| i % 2).collect());
        if clean {
            Dataset::new(examples, 2, labels, None).unwrap()
        } else {
            Dataset::new(examples, 2, None, labels).unwrap()
        }
    };
    write_jsonl(&labelled(20, true), tmp.path().join("train.jsonl")).unwrap();
    write_jsonl(&labelled(6, true), tmp.path().join("val.jsonl")).unwrap();
    // The test set has no clean labels to score against.
    write_jsonl(&labelled(6, false), tmp.path().join("test.jsonl")).unwrap();
    let cfg = r#"
trials = 1
[data]
source = "files"
k = 2
train = "train.jsonl"
val = "val.jsonl"
test = "test.jsonl"
dims = 64
[[strategies]]
name = "WN"
"#;
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let o = noisylab(&["run", "c.toml", "-o", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let marker = fs::read_to_string(tmp.path().join("out/WN/trial_0/INCOMPLETE")).unwrap();
    assert!(marker.starts_with("failed:"), "{marker}");
    assert!(stderr(&o).contains("WN trial 0 failed"), "{}", stderr(&o));
}

#[test]
fn nmat_matrix_of_the_wrong_size_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("t.csv"), "1,0,0\n0,1,0\n0,0,1\n").unwrap();
    let cfg = SWEEP
        .replace("k = 3", "k = 2")
        .replace("name = \"LS\"\nalpha = 0.2", "name = \"NMat\"\nmatrix = \"t.csv\"");
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let o = noisylab(&["run", "c.toml", "-o", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("3x3"), "{}", stderr(&o));
    assert!(!tmp.path().join("out/WN").exists());
}
