//! Aggregation of completed runs into a mean ± std table.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use noisylab_core::trainer::RunSummary;

use crate::sweep::{INCOMPLETE, SUMMARY};

/// Trial directories below `roots`, sorted. A root may itself be a trial
/// directory.
pub fn find_runs(roots: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
        if dir.join(SUMMARY).is_file() || dir.join(INCOMPLETE).is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for r in roots {
        walk(r, &mut out)?;
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Percentages with two decimals, e.g. `91.00±1.41`.
pub fn format_pct(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub trials: usize,
    /// Clean test accuracy each trial is scored by.
    pub acc_mean: f64,
    pub acc_std: f64,
    pub gap_mean: f64,
    /// Mean over the trials where the AUC is defined.
    pub auc_mean: Option<f64>,
}

#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Runs are grouped by the name of their parent directory (the strategy
/// label). Incomplete runs are skipped with a warning.
pub fn aggregate(runs: &[PathBuf]) -> anyhow::Result<Report> {
    let mut report = Report::default();
    let mut groups: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    for dir in runs {
        if dir.join(INCOMPLETE).exists() {
            report.warnings.push(format!("skipping incomplete run {}", dir.display()));
            continue;
        }
        let path = dir.join(SUMMARY);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let label = dir
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| summary.strategy.clone());
        groups.entry(label).or_default().push(summary);
    }
    if groups.is_empty() {
        bail!("no completed runs to report");
    }
    for (label, runs) in groups {
        if runs.len() == 1 {
            report.warnings.push(format!("{label}: single trial, std reported as 0.00"));
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.reported_test_acc).collect();
        let gaps: Vec<f64> = runs.iter().map(|r| r.memorization_gap).collect();
        let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc).collect();
        let (acc_mean, acc_std) = mean_std(&accs);
        report.rows.push(ReportRow {
            label,
            trials: runs.len(),
            acc_mean,
            acc_std,
            gap_mean: mean_std(&gaps).0,
            auc_mean: (!aucs.is_empty()).then(|| mean_std(&aucs).0),
        });
    }
    Ok(report)
}

/// CSV with header `strategy,trials,test_acc,memorization_gap,auc`.
/// Accuracy and gap are percentages; an undefined AUC is an empty field.
pub fn write_csv(rows: &[ReportRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "strategy,trials,test_acc,memorization_gap,auc")?;
    for r in rows {
        let auc = r.auc_mean.map(|a| format!("{a:.4}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.2},{}",
            r.label,
            r.trials,
            format_pct(r.acc_mean, r.acc_std),
            100.0 * r.gap_mean,
            auc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_mean_std() {
        let (m, s) = mean_std(&[0.90, 0.92]);
        assert_eq!(format_pct(m, s), "91.00±1.41");
    }

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
