//! Loss separability: can a threshold on per-sample loss find wrong labels?

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::trainer::RunRecord;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 50;

/// Per-example plain cross-entropy against the noisy label at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSnapshot {
    pub step: u64,
    pub losses: Vec<f64>,
    pub is_wrong: Vec<bool>,
}

impl LossSnapshot {
    pub fn new(step: u64, losses: Vec<f64>, is_wrong: Vec<bool>) -> Result<Self> {
        if losses.len() != is_wrong.len() {
            return Err(Error::Shape(format!(
                "{} losses but {} wrong-label flags",
                losses.len(),
                is_wrong.len()
            )));
        }
        if let Some(l) = losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Domain(format!("snapshot loss {l} is not finite and >= 0")));
        }
        Ok(LossSnapshot {
            step,
            losses,
            is_wrong,
        })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn wrong_count(&self) -> usize {
        self.is_wrong.iter().filter(|&&w| w).count()
    }
}

/// Losses of `ckpt` on `ds` against its noisy labels, whatever objective the
/// model was trained with.
pub fn snapshot_losses(ckpt: &Checkpoint, ds: &Dataset) -> Result<LossSnapshot> {
    if ds.clean_labels().is_none() {
        return Err(Error::Config(
            "loss separability needs clean labels to know which labels are wrong".into(),
        ));
    }
    let losses = ckpt.params.sample_losses(ds, LabelSet::Noisy)?;
    LossSnapshot::new(ckpt.step, losses, ds.wrong_mask()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges from 0 to the largest loss.
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub wrong: Vec<usize>,
}

impl Histogram {
    /// CSV with header `bin_left,bin_right,count_correct,count_wrong`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "bin_left,bin_right,count_correct,count_wrong")?;
        for b in 0..self.correct.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.correct[b],
                self.wrong[b]
            )?;
        }
        Ok(())
    }
}

/// Equal-width bins over `[0, max loss]`, counted separately for correct and
/// wrong labels. The maximum lands in the last bin.
pub fn histogram(snap: &LossSnapshot, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if snap.is_empty() {
        return Err(Error::Size("histogram of an empty snapshot".into()));
    }
    let max = snap.losses.iter().copied().fold(0.0, f64::max);
    let width = max / bins as f64;
    let edges = (0..=bins)
        .map(|b| if b == bins { max } else { b as f64 * width })
        .collect();
    let mut correct = vec![0; bins];
    let mut wrong = vec![0; bins];
    for (&l, &is_wrong) in snap.losses.iter().zip(&snap.is_wrong) {
        let b = if width > 0.0 {
            ((l / width) as usize).min(bins - 1)
        } else {
            0
        };
        if is_wrong {
            wrong[b] += 1;
        } else {
            correct[b] += 1;
        }
    }
    Ok(Histogram {
        edges,
        correct,
        wrong,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above the threshold are flagged positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// CSV with header `threshold,fpr,tpr`; the first row has threshold `inf`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

/// ROC of "loss predicts a wrong label".
pub fn roc(snap: &LossSnapshot) -> Result<RocCurve> {
    roc_from_scores(&snap.losses, &snap.is_wrong)
}

/// ROC for arbitrary finite scores where higher means positive.
///
/// Thresholds sweep the distinct scores from high to low; tied scores move
/// the curve diagonally, so the trapezoidal area gives ties half credit.
pub fn roc_from_scores(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateClass(format!(
            "need both wrong and correct labels, got {pos} wrong and {neg} correct"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// One line of the cross-strategy separability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityRow {
    pub strategy: String,
    /// `None` when the snapshot has only one kind of label.
    pub auc: Option<f64>,
    pub best_val_acc: f64,
    pub best_test_acc: f64,
    pub final_test_acc: f64,
    pub histogram: Histogram,
}

/// Per-strategy AUC, histogram and accuracies, sorted by strategy name.
pub fn separability_report(runs: &[(String, RunRecord, LossSnapshot)]) -> Result<Vec<SeparabilityRow>> {
    if let Some((_, _, first)) = runs.first() {
        for (name, _, snap) in runs {
            if snap.is_wrong != first.is_wrong {
                return Err(Error::Config(format!(
                    "snapshot of {name} was not taken on the same dataset as the others"
                )));
            }
        }
    }
    let mut rows = runs
        .iter()
        .map(|(name, record, snap)| {
            let auc = match roc(snap) {
                Ok(c) => Some(c.auc),
                Err(Error::DegenerateClass(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SeparabilityRow {
                strategy: name.clone(),
                auc,
                best_val_acc: record.best().val_acc,
                best_test_acc: record.best().test_acc,
                final_test_acc: record.last().test_acc,
                histogram: histogram(snap, DEFAULT_BINS)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.strategy.cmp(&b.strategy));
    Ok(rows)
}

/// CSV with header `strategy,auc,best_val_acc,best_test_acc,final_test_acc`.
/// An undefined AUC is written as an empty field.
pub fn write_report_csv(rows: &[SeparabilityRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "strategy,auc,best_val_acc,best_test_acc,final_test_acc")?;
    for r in rows {
        let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.strategy, auc, r.best_val_acc, r.best_test_acc, r.final_test_acc
        )?;
    }
    Ok(())
}
