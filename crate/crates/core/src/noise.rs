//! Noise transition matrices, label corruption and realised-noise measurement.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Dataset, Label, LabelSet};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic `k x k` matrix with `get(i, j) = p(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::Shape(format!("transition matrix needs k >= 2, got {k}")));
        }
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("row {i} sums to {sum}, not 1")));
            }
            entries.extend(row);
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub fn identity(k: usize) -> Result<Self> {
        uniform_matrix(k, 0.0)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.k)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        assert_eq!(self.k, other.k);
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Parse a headerless CSV of `k` rows with `k` comma-separated decimals.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "[{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

fn check_level(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("noise level must be in [0, 1), got {eps}")));
    }
    Ok(())
}

/// Uniform-flip noise: `1 - eps` on the diagonal, `eps / (k - 1)` elsewhere.
pub fn uniform_matrix(k: usize, eps: f64) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
    }
    check_level(eps)?;
    let off = eps / (k - 1) as f64;
    let rows = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 - eps } else { off }).collect())
        .collect();
    TransitionMatrix::from_rows(rows)
}

/// The default single-flip target map `i -> (i + 1) mod k`.
pub fn cyclic_flip_map(k: usize) -> Vec<Label> {
    (0..k).map(|i| (i + 1) % k).collect()
}

/// Single-flip noise: `1 - eps` on the diagonal and `eps` at `flip_map[i]`.
pub fn single_flip_matrix(k: usize, eps: f64, flip_map: &[Label]) -> Result<TransitionMatrix> {
    if k < 2 {
        return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
    }
    check_level(eps)?;
    if flip_map.len() != k {
        return Err(Error::Shape(format!(
            "flip map has {} entries, expected {k}",
            flip_map.len()
        )));
    }
    for (i, &j) in flip_map.iter().enumerate() {
        if j == i {
            return Err(Error::Domain(format!("flip map sends class {i} to itself")));
        }
        if j >= k {
            return Err(Error::Domain(format!("flip map target {j} is not below k={k}")));
        }
    }
    let rows = (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            row[i] = 1.0 - eps;
            row[flip_map[i]] = eps;
            row
        })
        .collect();
    TransitionMatrix::from_rows(rows)
}

fn check_pair(clean: &[Label], noisy: &[Label]) -> Result<()> {
    if clean.len() != noisy.len() {
        return Err(Error::Shape(format!(
            "clean has {} labels, noisy has {}",
            clean.len(),
            noisy.len()
        )));
    }
    Ok(())
}

/// Empirical transition matrix from aligned clean/noisy labels.
///
/// A class that never occurs among the clean labels gets a one-hot self row.
pub fn matrix_from_pairs(clean: &[Label], noisy: &[Label], k: usize) -> Result<TransitionMatrix> {
    check_pair(clean, noisy)?;
    if clean.is_empty() {
        return Err(Error::Size("cannot estimate a matrix from zero labels".into()));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&c, &n) in clean.iter().zip(noisy) {
        if c >= k || n >= k {
            return Err(Error::Domain(format!("label pair ({c}, {n}) not below k={k}")));
        }
        counts[c][n] += 1;
    }
    let rows = counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                let mut r = vec![0.0; k];
                r[i] = 1.0;
                r
            } else {
                row.into_iter().map(|c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    TransitionMatrix::from_rows(rows)
}

/// Draw a noisy label for every clean label from its row of `t`.
///
/// The draw at position `i` uses its own stream derived from `(seed, i)`, so
/// the output does not depend on evaluation order.
pub fn inject(labels: &[Label], t: &TransitionMatrix, seed: u64) -> Result<Vec<Label>> {
    if let Some(&y) = labels.iter().find(|&&y| y >= t.k()) {
        return Err(Error::Domain(format!("label {y} is not below k={}", t.k())));
    }
    Ok(labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let u: f64 = rng::child(seed, rng::TAG_INJECT, i as u64).gen();
            sample_row(t.row(y), u)
        })
        .collect())
}

fn sample_row(row: &[f64], u: f64) -> Label {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left the cumulative sum a hair below 1.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Ordered keyword rules standing in for gazetteer-style weak supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    /// `(keyword, class)` in priority order; keywords are stored lower-case.
    pub rules: Vec<(String, Label)>,
    /// Examples no rule fires on keep their clean label; otherwise they are dropped.
    pub abstain_to_clean: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    keyword: String,
    class: Label,
}

impl RuleSet {
    pub fn new(rules: Vec<(String, Label)>, abstain_to_clean: bool) -> Result<Self> {
        let rules = rules
            .into_iter()
            .map(|(kw, c)| {
                let tokens = tokenize(&kw);
                match tokens.as_slice() {
                    [one] => Ok((one.clone(), c)),
                    _ => Err(Error::Config(format!(
                        "rule keyword {kw:?} must be exactly one token"
                    ))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(RuleSet {
            rules,
            abstain_to_clean,
        })
    }

    /// Read `{"keyword": str, "class": int}` lines.
    pub fn load_jsonl(path: impl AsRef<Path>, abstain_to_clean: bool) -> Result<Self> {
        let path = path.as_ref();
        let mut rules = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: RuleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            rules.push((r.keyword, r.class));
        }
        Self::new(rules, abstain_to_clean)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (keyword, class) in &self.rules {
            serde_json::to_writer(
                &mut w,
                &RuleRecord {
                    keyword: keyword.clone(),
                    class: *class,
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Class of the first rule whose keyword is a token of `text`.
    pub fn fire(&self, text: &str) -> Option<Label> {
        let tokens = tokenize(text);
        self.rules
            .iter()
            .find(|(kw, _)| tokens.iter().any(|t| t == kw))
            .map(|&(_, c)| c)
    }
}

/// Label `ds` with `rules`; the noisy labels become feature-dependent.
pub fn inject_rules(ds: &Dataset, rules: &RuleSet) -> Result<Dataset> {
    if rules.rules.is_empty() {
        return Err(Error::Config("rule set is empty".into()));
    }
    if let Some((kw, c)) = rules.rules.iter().find(|(_, c)| *c >= ds.k()) {
        return Err(Error::Domain(format!(
            "rule {kw:?} targets class {c}, not below k={}",
            ds.k()
        )));
    }
    let clean = ds.labels(LabelSet::Clean)?;
    let mut keep = Vec::with_capacity(ds.len());
    let mut noisy = Vec::with_capacity(ds.len());
    for (i, ex) in ds.examples().iter().enumerate() {
        match rules.fire(&ex.text) {
            Some(c) => {
                keep.push(i);
                noisy.push(c);
            }
            None if rules.abstain_to_clean => {
                keep.push(i);
                noisy.push(clean[i]);
            }
            None => {}
        }
    }
    ds.subset(&keep).with_noisy_labels(noisy)
}

/// Fraction of positions where the noisy label is wrong (1 - precision).
pub fn fdr(clean: &[Label], noisy: &[Label]) -> Result<f64> {
    check_pair(clean, noisy)?;
    if clean.is_empty() {
        return Err(Error::Size("fdr of zero labels".into()));
    }
    let wrong = clean.iter().zip(noisy).filter(|(c, n)| c != n).count();
    Ok(wrong as f64 / clean.len() as f64)
}

/// Whether every diagonal entry strictly exceeds the off-diagonals of its row.
pub fn diag_dominant(t: &TransitionMatrix) -> bool {
    t.rows().enumerate().all(|(i, row)| {
        row.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .all(|(_, &v)| row[i] > v)
    })
}
