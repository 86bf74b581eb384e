//! Histogram and ROC files for one completed run.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use noisylab_core::diagnostics::{histogram, roc, write_report_csv, Histogram};
use noisylab_core::trainer::RunSummary;
use noisylab_core::{Error, RocCurve, SeparabilityRow};

use crate::sweep::{SnapshotFile, SNAPSHOT, SUMMARY};

#[derive(Debug)]
pub enum Outcome {
    Written { histogram: Histogram, roc: RocCurve },
    /// Histogram written, but every label is correct (or every one wrong) so
    /// there is no ROC curve.
    Degenerate { histogram: Histogram, reason: String },
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Write `histogram.csv`, `roc.csv` and `report.csv` into `dir`.
pub fn diagnose(dir: &Path, bins: usize) -> anyhow::Result<Outcome> {
    let snap_path = dir.join(SNAPSHOT);
    if !snap_path.is_file() {
        return Err(Error::Artifact(format!("no loss snapshot at {}", snap_path.display())).into());
    }
    let snap: SnapshotFile = serde_json::from_str(&fs::read_to_string(&snap_path)?)
        .with_context(|| format!("parsing {}", snap_path.display()))?;
    let sum_path = dir.join(SUMMARY);
    let summary: RunSummary = serde_json::from_str(
        &fs::read_to_string(&sum_path).with_context(|| format!("reading {}", sum_path.display()))?,
    )
    .with_context(|| format!("parsing {}", sum_path.display()))?;

    let hist = histogram(&snap.snapshot, bins)?;
    let mut w = create(&dir.join("histogram.csv"))?;
    hist.write_csv(&mut w)?;
    w.flush()?;

    let curve = match roc(&snap.snapshot) {
        Ok(c) => c,
        Err(Error::DegenerateClass(reason)) => {
            return Ok(Outcome::Degenerate {
                histogram: hist,
                reason,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let mut w = create(&dir.join("roc.csv"))?;
    curve.write_csv(&mut w)?;
    w.flush()?;

    let row = SeparabilityRow {
        strategy: summary.strategy,
        auc: Some(curve.auc),
        best_val_acc: summary.best_val_acc,
        best_test_acc: summary.best_test_acc,
        final_test_acc: summary.final_test_acc,
        histogram: hist.clone(),
    };
    let mut w = create(&dir.join("report.csv"))?;
    write_report_csv(&[row], &mut w)?;
    w.flush()?;
    Ok(Outcome::Written {
        histogram: hist,
        roc: curve,
    })
}
