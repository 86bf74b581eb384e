//! Strategy × trial sweeps and their on-disk layout.
//!
//! ```text
//! <out>/config.json
//! <out>/<label>/trial_<t>/record.jsonl
//!                         summary.json
//!                         best.ckpt
//!                         final.ckpt
//!                         snapshot.json
//!                         learned_matrix.json   (NMwR only)
//! ```
//!
//! A trial directory holding an `INCOMPLETE` file is either still running,
//! was interrupted, or failed (the file then holds the error).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use noisylab_core::data::{featurize, keyword_corpus, load_jsonl, split, synth, KeywordCorpusSpec};
use noisylab_core::diagnostics::{roc, snapshot_losses};
use noisylab_core::noise::{
    cyclic_flip_map, fdr, inject, inject_rules, matrix_from_pairs, single_flip_matrix, uniform_matrix,
};
use noisylab_core::trainer::{train, RunSummary};
use noisylab_core::{Dataset, Error, LabelSet, LossSnapshot, RuleSet, Strategy, TrainConfig, TransitionMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSpec, ExperimentConfig, MatrixSource, NoiseSpec, StrategySpec};

pub const INCOMPLETE: &str = "INCOMPLETE";
pub const SUMMARY: &str = "summary.json";
pub const SNAPSHOT: &str = "snapshot.json";

/// Train/val/test sets with noise applied, ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Matrix the noise was sampled from, when there was one.
    pub generator: Option<TransitionMatrix>,
}

/// Snapshot file contents; `set` records which split the losses come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub set: String,
    #[serde(flatten)]
    pub snapshot: LossSnapshot,
}

fn corrupt(ds: Dataset, noise: &NoiseSpec, generator: Option<&TransitionMatrix>, rules: Option<&RuleSet>, seed_offset: u64) -> anyhow::Result<Dataset> {
    if let Some(rules) = rules {
        return Ok(inject_rules(&ds, rules)?);
    }
    match generator {
        Some(t) => {
            let seed = match noise {
                NoiseSpec::Uniform { seed, .. } | NoiseSpec::Sflip { seed, .. } | NoiseSpec::Matrix { seed, .. } => *seed,
                _ => 0,
            };
            let clean = ds
                .clean_labels()
                .ok_or_else(|| anyhow!("noise injection needs clean labels"))?
                .to_vec();
            let noisy = inject(&clean, t, seed.wrapping_add(seed_offset))?;
            Ok(ds.with_noisy_labels(noisy)?)
        }
        None if ds.noisy_labels().is_none() => Ok(ds.with_clean_as_noisy()?),
        None => Ok(ds),
    }
}

/// Load or generate the data, inject noise and split.
///
/// Noise is injected before splitting, so the validation labels carry the
/// same corruption as the training labels. With separate validation and test
/// files, train and validation are corrupted independently and the test file
/// is used as is.
pub fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<Prepared> {
    let mut corpus_rules = None;
    let (pooled, separate) = match &cfg.data {
        DataSpec::Files { k, train, val, test, dims } => {
            let load = |p: &Path| -> anyhow::Result<Dataset> {
                let ds = load_jsonl(p, *k)?;
                Ok(featurize(&ds, *dims)?)
            };
            match (val, test) {
                (None, None) => (load(train)?, None),
                (Some(v), Some(t)) => (load(train)?, Some((load(v)?, load(t)?))),
                _ => bail!("give both `val` and `test` files, or neither"),
            }
        }
        DataSpec::Synth(spec) => (synth(spec)?, None),
        DataSpec::Keywords { k, n, trap_rate, seed, dims } => {
            let corpus = keyword_corpus(&KeywordCorpusSpec::new(*k, *n, *trap_rate, *seed))?;
            corpus_rules = Some(corpus.keywords);
            (featurize(&corpus.dataset, *dims)?, None)
        }
    };
    let k = pooled.k();

    let generator = match &cfg.noise {
        NoiseSpec::None | NoiseSpec::Rules { .. } => None,
        NoiseSpec::Uniform { level, .. } => Some(uniform_matrix(k, *level)?),
        NoiseSpec::Sflip { level, flip_map, .. } => {
            let map = flip_map.clone().unwrap_or_else(|| cyclic_flip_map(k));
            Some(single_flip_matrix(k, *level, &map)?)
        }
        NoiseSpec::Matrix { path, .. } => {
            let t = TransitionMatrix::read_csv(path)?;
            if t.k() != k {
                bail!("{} is {}x{} but the data has {k} classes", path.display(), t.k(), t.k());
            }
            Some(t)
        }
    };
    let rules = match &cfg.noise {
        NoiseSpec::Rules { path: Some(p), abstain_to_clean } => Some(RuleSet::load_jsonl(p, *abstain_to_clean)?),
        NoiseSpec::Rules { path: None, abstain_to_clean } => {
            let kw = corpus_rules.ok_or_else(|| anyhow!("rule noise needs a `path` unless the data source is a keyword corpus"))?;
            Some(RuleSet::new(kw, *abstain_to_clean)?)
        }
        _ => None,
    };

    let g = generator.as_ref();
    let r = rules.as_ref();
    let (train, val, test) = match separate {
        None => {
            let noisy = corrupt(pooled, &cfg.noise, g, r, 0)?;
            split(&noisy, &cfg.split)?
        }
        Some((val, test)) => (corrupt(pooled, &cfg.noise, g, r, 0)?, corrupt(val, &cfg.noise, g, r, 1)?, test),
    };
    Ok(Prepared {
        train,
        val,
        test,
        generator,
    })
}

/// Turn a configured strategy into a core strategy for the prepared data.
pub fn resolve(spec: &StrategySpec, data: &Prepared) -> anyhow::Result<Strategy> {
    let k = data.train.k();
    let need_clean = |what: &str| {
        data.train
            .clean_labels()
            .ok_or_else(|| anyhow!("{what} needs clean training labels"))
    };
    let s = match spec {
        StrategySpec::WN { .. } => Strategy::Vanilla,
        StrategySpec::NV { .. } => Strategy::NoValidation,
        StrategySpec::NMat { matrix, .. } => Strategy::NMat(match matrix {
            MatrixSource::Estimated => {
                let clean = need_clean("estimating the NMat matrix")?;
                matrix_from_pairs(clean, data.train.labels(LabelSet::Noisy)?, k)?
            }
            MatrixSource::Generator => data
                .generator
                .clone()
                .ok_or_else(|| anyhow!("NMat matrix = \"generator\" but the noise was not sampled from a matrix"))?,
            MatrixSource::Path(p) => TransitionMatrix::read_csv(p)?,
        }),
        StrategySpec::NMwR { lambda, .. } => Strategy::NMwR { lambda: *lambda },
        StrategySpec::CT { eps, ramp_epochs, .. } => {
            let eps = match eps {
                Some(e) => *e,
                None => fdr(need_clean("co-teaching without `eps`")?, data.train.labels(LabelSet::Noisy)?)?,
            };
            Strategy::CoTeaching {
                eps,
                ramp_epochs: *ramp_epochs,
            }
        }
        StrategySpec::LS { alpha, .. } => Strategy::LabelSmoothing { alpha: *alpha },
    };
    s.validate(k)?;
    Ok(s)
}

/// One (strategy, trial) cell of a sweep.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub label: String,
    pub strategy: Strategy,
    pub trial: usize,
    pub cfg: TrainConfig,
    pub dir: PathBuf,
}

pub fn plan(cfg: &ExperimentConfig, data: &Prepared, out: &Path) -> anyhow::Result<Vec<RunSpec>> {
    let mut runs = Vec::new();
    for spec in &cfg.strategies {
        let strategy = resolve(spec, data).with_context(|| format!("strategy {}", spec.label()))?;
        for trial in 0..cfg.trials {
            let mut tc = cfg.train.clone();
            tc.seed = cfg.train.seed.wrapping_add(trial as u64);
            runs.push(RunSpec {
                label: spec.label().to_string(),
                strategy: strategy.clone(),
                trial,
                cfg: tc,
                dir: out.join(spec.label()).join(format!("trial_{trial}")),
            });
        }
    }
    Ok(runs)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn execute(run: &RunSpec, data: &Prepared) -> anyhow::Result<RunSummary> {
    let out = train(&data.train, &data.val, &data.test, &run.strategy, &run.cfg)?;
    let dir = &run.dir;
    let mut w = BufWriter::new(fs::File::create(dir.join("record.jsonl"))?);
    out.record.write_jsonl(&mut w)?;
    w.flush()?;
    out.best.save(dir.join("best.ckpt"))?;
    out.last.save(dir.join("final.ckpt"))?;
    if let Some(m) = &out.learned_matrix {
        let rows: Vec<&[f64]> = m.entries().chunks(m.k()).collect();
        write_json(&dir.join("learned_matrix.json"), &rows)?;
    }

    let mut summary = out.record.summary();
    if data.train.clean_labels().is_some() {
        let snapshot = snapshot_losses(&out.best, &data.train)?;
        summary.auc = match roc(&snapshot) {
            Ok(c) => Some(c.auc),
            Err(Error::DegenerateClass(_)) => None,
            Err(e) => return Err(e.into()),
        };
        write_json(
            &dir.join(SNAPSHOT),
            &SnapshotFile {
                set: "train".into(),
                snapshot,
            },
        )?;
    }
    write_json(&dir.join(SUMMARY), &summary)?;
    Ok(summary)
}

/// Run one cell, leaving `INCOMPLETE` behind (with the error) if it fails.
pub fn run_one(run: &RunSpec, data: &Prepared) -> anyhow::Result<RunSummary> {
    fs::create_dir_all(&run.dir).with_context(|| format!("creating {}", run.dir.display()))?;
    let marker = run.dir.join(INCOMPLETE);
    fs::write(&marker, "running\n")?;
    match execute(run, data) {
        Ok(s) => {
            fs::remove_file(&marker)?;
            Ok(s)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("failed: {e:#}\n"));
            Err(e)
        }
    }
}

/// Run every cell of the sweep on at most `jobs` threads. Results come back
/// in plan order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> anyhow::Result<Vec<(RunSpec, anyhow::Result<RunSummary>)>> {
    let data = prepare(cfg)?;
    let runs = plan(cfg, &data, out)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results = pool.install(|| runs.par_iter().map(|r| run_one(r, &data)).collect::<Vec<_>>());
    Ok(runs.into_iter().zip(results).collect())
}
