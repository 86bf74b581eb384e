use noisylab_core::data::{split, synth_dataset};
use noisylab_core::diagnostics::{histogram, roc, separability_report, snapshot_losses, write_report_csv};
use noisylab_core::noise::{fdr, inject, matrix_from_pairs, single_flip_matrix, cyclic_flip_map, uniform_matrix};
use noisylab_core::trainer::{compare_val_policies, train};
use noisylab_core::{Arch, Checkpoint, Dataset, LabelSet, SplitSpec, Strategy, TrainConfig};

fn noisy_synth(k: usize, n: usize, eps: f64, seed: u64) -> (Dataset, Dataset, Dataset) {
    let ds = synth_dataset(k, n, 0.3, seed).unwrap();
    let noisy = inject(ds.clean_labels().unwrap(), &uniform_matrix(k, eps).unwrap(), seed + 1).unwrap();
    let ds = ds.with_noisy_labels(noisy).unwrap();
    split(&ds, &SplitSpec::new(0.8, 0.1, 0.1, seed + 2).unwrap()).unwrap()
}

#[test]
fn vanilla_peaks_then_declines_under_uniform_noise() {
    let (tr, va, te) = noisy_synth(4, 2000, 0.4, 40);
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: usize::MAX,
        arch: Arch::Mlp { hidden: 32 },
        seed: 3,
        ..Default::default()
    };
    let out = train(&tr, &va, &te, &Strategy::Vanilla, &cfg).unwrap();
    let gap = out.record.memorization_gap();
    assert!(gap >= 0.05, "best {:?} last {:?}", out.record.best(), out.record.last());

    // Noisy-validation selection costs less than memorisation does.
    let cmp = compare_val_policies(&tr, &va, &te, &Strategy::Vanilla, &TrainConfig { patience: 10, ..cfg }).unwrap();
    assert!(cmp.gap.abs() < gap, "{cmp:?} vs {gap}");
}

#[test]
fn checkpoints_on_disk_reproduce_recorded_accuracies() {
    let (tr, va, te) = noisy_synth(3, 600, 0.3, 50);
    let out = train(&tr, &va, &te, &Strategy::LabelSmoothing { alpha: 0.1 }, &TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.best.save(dir.path().join("best.ckpt")).unwrap();
    out.last.save(dir.path().join("final.ckpt")).unwrap();
    let best = Checkpoint::load(dir.path().join("best.ckpt")).unwrap();
    let last = Checkpoint::load(dir.path().join("final.ckpt")).unwrap();
    assert_eq!(best, out.best);
    assert_eq!(best.step, out.record.best_step());
    assert_eq!(last.step, out.record.final_step());
    assert_eq!(best.params.evaluate(&te, LabelSet::Clean).unwrap(), out.record.best().test_acc);
    assert_eq!(best.params.evaluate(&va, LabelSet::Noisy).unwrap(), out.record.best().val_acc);
    assert_eq!(last.params.evaluate(&te, LabelSet::Clean).unwrap(), out.record.last().test_acc);
}

#[test]
fn forward_correction_with_the_true_matrix_handles_single_flip_noise() {
    let ds = synth_dataset(4, 2000, 0.3, 60).unwrap();
    let t = single_flip_matrix(4, 0.35, &cyclic_flip_map(4)).unwrap();
    let noisy = inject(ds.clean_labels().unwrap(), &t, 61).unwrap();
    let ds = ds.with_noisy_labels(noisy).unwrap();
    let (tr, va, te) = split(&ds, &SplitSpec::new(0.8, 0.1, 0.1, 62).unwrap()).unwrap();
    let est = matrix_from_pairs(tr.clean_labels().unwrap(), tr.noisy_labels().unwrap(), 4).unwrap();
    assert!(est.max_abs_diff(&t) < 0.05);
    let out = train(&tr, &va, &te, &Strategy::NMat(est), &TrainConfig::default()).unwrap();
    assert!(out.record.best().test_acc > 0.9, "{:?}", out.record.best());
}

#[test]
fn separability_table_over_strategies() {
    let (tr, va, te) = noisy_synth(3, 900, 0.4, 70);
    let eps = fdr(tr.clean_labels().unwrap(), tr.noisy_labels().unwrap()).unwrap();
    let strategies = [
        Strategy::Vanilla,
        Strategy::CoTeaching { eps, ramp_epochs: 5 },
        Strategy::NMwR { lambda: 1e-3 },
    ];
    let cfg = TrainConfig {
        max_epochs: 10,
        ..Default::default()
    };
    let mut runs = Vec::new();
    for s in &strategies {
        let out = train(&tr, &va, &te, s, &cfg).unwrap();
        let snap = snapshot_losses(&out.best, &tr).unwrap();
        assert_eq!(snap.step, out.record.best_step());
        let h = histogram(&snap, 20).unwrap();
        assert_eq!(h.correct.iter().sum::<usize>() + h.wrong.iter().sum::<usize>(), tr.len());
        assert_eq!(h.wrong.iter().sum::<usize>(), snap.wrong_count());
        runs.push((s.name().to_string(), out.record, snap));
    }
    let rows = separability_report(&runs).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["CT", "NMwR", "WN"]);
    for row in &rows {
        let (_, record, snap) = runs.iter().find(|r| r.0 == row.strategy).unwrap();
        assert_eq!(row.auc, Some(roc(snap).unwrap().auc));
        assert_eq!(row.best_test_acc, record.best().test_acc);
    }
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("strategy,auc,best_val_acc,best_test_acc,final_test_acc\nCT,"));
}
