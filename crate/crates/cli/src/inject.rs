//! Corrupting the labels of a JSONL file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail};
use noisylab_core::data::{load_jsonl, write_jsonl};
use noisylab_core::noise::{
    cyclic_flip_map, diag_dominant, fdr, inject, inject_rules, matrix_from_pairs, single_flip_matrix, uniform_matrix,
};
use noisylab_core::{Label, LabelSet, RuleSet, TransitionMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Uniform { level: f64 },
    Sflip { level: f64, flip_map: Option<Vec<Label>> },
    Matrix(PathBuf),
    Rules { path: PathBuf, abstain_to_clean: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectReport {
    pub n: usize,
    pub fdr: f64,
    /// Matrix whose diagonal dominance is reported: the generator for
    /// sampled noise, the one counted from the label pairs for rules.
    pub matrix: TransitionMatrix,
    pub empirical: bool,
    pub diag_dominant: bool,
}

pub fn run(input: &Path, output: &Path, k: usize, source: &NoiseSource, seed: u64) -> anyhow::Result<InjectReport> {
    let ds = load_jsonl(input, k)?;
    if ds.clean_labels().is_none() {
        bail!("{} has no clean_label column to corrupt", input.display());
    }
    let generator = match source {
        NoiseSource::Uniform { level } => Some(uniform_matrix(k, *level)?),
        NoiseSource::Sflip { level, flip_map } => {
            let map = flip_map.clone().unwrap_or_else(|| cyclic_flip_map(k));
            Some(single_flip_matrix(k, *level, &map)?)
        }
        NoiseSource::Matrix(path) => {
            let t = TransitionMatrix::read_csv(path)?;
            if t.k() != k {
                bail!("{} is {}x{}, expected {k} classes", path.display(), t.k(), t.k());
            }
            Some(t)
        }
        NoiseSource::Rules { .. } => None,
    };
    let out = match (source, &generator) {
        (_, Some(t)) => {
            let clean = ds.labels(LabelSet::Clean)?.to_vec();
            let noisy = inject(&clean, t, seed)?;
            ds.with_noisy_labels(noisy)?
        }
        (NoiseSource::Rules { path, abstain_to_clean }, None) => {
            inject_rules(&ds, &RuleSet::load_jsonl(path, *abstain_to_clean)?)?
        }
        _ => return Err(anyhow!("no noise source")),
    };
    write_jsonl(&out, output)?;

    let clean = out.labels(LabelSet::Clean)?;
    let noisy = out.labels(LabelSet::Noisy)?;
    let (matrix, empirical) = match generator {
        Some(t) => (t, false),
        None => (matrix_from_pairs(clean, noisy, k)?, true),
    };
    Ok(InjectReport {
        n: out.len(),
        fdr: if out.is_empty() { 0.0 } else { fdr(clean, noisy)? },
        diag_dominant: diag_dominant(&matrix),
        matrix,
        empirical,
    })
}
