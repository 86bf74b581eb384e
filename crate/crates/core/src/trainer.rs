//! SGD training loop with early stopping on a validation set.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::model::{Arch, Batch, Checkpoint, CrossEntropy, Params};
use crate::rng;
use crate::strategies::{coteach_select, keep_fraction, stateless_objective, LearnedCorrection, LearnedMatrix, Strategy};

/// Which labels of the validation set drive early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValPolicy {
    #[default]
    Noisy,
    Clean,
}

impl ValPolicy {
    pub fn label_set(self) -> LabelSet {
        match self {
            ValPolicy::Noisy => LabelSet::Noisy,
            ValPolicy::Clean => LabelSet::Clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Steps between evaluations.
    pub eval_every: usize,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub val_policy: ValPolicy,
    /// Epoch-mean train-loss improvement below which the no-validation
    /// baseline counts an epoch as converged.
    pub convergence_tol: f64,
    pub arch: Arch,
    /// Learning rate of the learned noise matrix relative to `lr`.
    pub matrix_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            batch_size: 32,
            max_epochs: 30,
            eval_every: 50,
            patience: 10,
            seed: 0,
            val_policy: ValPolicy::Noisy,
            convergence_tol: 1e-4,
            arch: Arch::Linear,
            matrix_lr_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.matrix_lr_scale >= 0.0 && self.matrix_lr_scale.is_finite()) {
            return Err(Error::Config("matrix_lr_scale must be >= 0".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: u64,
    pub epoch: usize,
    /// Mean training objective over the steps since the previous evaluation.
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub evals: Vec<Evaluation>,
    /// Index into `evals` of the best validation accuracy (earliest on ties).
    pub best_index: usize,
    pub stop_reason: StopReason,
    /// Report the final step rather than the best one (no-validation baseline).
    pub report_final: bool,
}

impl RunRecord {
    pub fn best(&self) -> &Evaluation {
        &self.evals[self.best_index]
    }

    pub fn last(&self) -> &Evaluation {
        self.evals.last().expect("a run records at least one evaluation")
    }

    pub fn best_step(&self) -> u64 {
        self.best().step
    }

    pub fn final_step(&self) -> u64 {
        self.last().step
    }

    /// Clean test accuracy this run is scored by.
    pub fn reported_test_acc(&self) -> f64 {
        if self.report_final {
            self.last().test_acc
        } else {
            self.best().test_acc
        }
    }

    /// Clean test accuracy at the validation peak minus at the end of training.
    pub fn memorization_gap(&self) -> f64 {
        self.best().test_acc - self.last().test_acc
    }

    /// One JSON object per evaluation.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.evals {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            strategy: self.strategy.clone(),
            best_step: self.best_step(),
            final_step: self.final_step(),
            best_val_acc: self.best().val_acc,
            best_test_acc: self.best().test_acc,
            final_test_acc: self.last().test_acc,
            reported_test_acc: self.reported_test_acc(),
            memorization_gap: self.memorization_gap(),
            stop_reason: self.stop_reason,
            auc: None,
        }
    }
}

/// Compact per-run result written next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub best_step: u64,
    pub final_step: u64,
    pub best_val_acc: f64,
    pub best_test_acc: f64,
    pub final_test_acc: f64,
    pub reported_test_acc: f64,
    pub memorization_gap: f64,
    pub stop_reason: StopReason,
    /// Wrong-label detection AUC at the best step, when defined.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Final state of the learned noise matrix (NMwR only).
    pub learned_matrix: Option<LearnedMatrix>,
}

fn feature_dim(ds: &Dataset, name: &str) -> Result<usize> {
    let first = ds
        .examples()
        .first()
        .ok_or_else(|| Error::Size(format!("{name} set is empty")))?;
    let dim = first.features()?.dim;
    for ex in ds.examples() {
        if ex.features()?.dim != dim {
            return Err(Error::Shape(format!("{name} set mixes feature dimensions")));
        }
    }
    Ok(dim)
}

/// Train under `strategy`, tracking the checkpoint with the best validation
/// accuracy. The clean test accuracy is recorded at every evaluation but never
/// consulted by the stopping rule.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    strategy: &Strategy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = train.k();
    strategy.validate(k)?;
    if val.k() != k || test.k() != k {
        return Err(Error::Shape("train, val and test disagree on the class count".into()));
    }
    train.labels(LabelSet::Noisy)?;
    let val_labels = cfg.val_policy.label_set();
    val.labels(val_labels)?;
    test.labels(LabelSet::Clean)?;
    let dims = feature_dim(train, "train")?;
    for (ds, name) in [(val, "val"), (test, "test")] {
        if feature_dim(ds, name)? != dims {
            return Err(Error::Shape(format!("{name} features differ in dimension from train")));
        }
    }

    let mut params = Params::init(cfg.arch, dims, k, cfg.seed)?;
    let mut peer = match strategy {
        Strategy::CoTeaching { .. } => Some(Params::init(
            cfg.arch,
            dims,
            k,
            rng::derive(cfg.seed, rng::TAG_COTEACH_PEER, 0),
        )?),
        _ => None,
    };
    let mut matrix = match strategy {
        Strategy::NMwR { .. } => Some(LearnedMatrix::identity(k)),
        _ => None,
    };
    let fixed_objective = stateless_objective(strategy);
    let no_validation = matches!(strategy, Strategy::NoValidation);

    let mut evals: Vec<Evaluation> = Vec::new();
    let mut best_index = 0;
    let mut best = Checkpoint::new(params.clone(), 0);
    let mut since_best = 0;
    let mut step: u64 = 0;
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;
    let mut prev_epoch_loss: Option<f64> = None;
    let mut converged_streak = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epoch = 0;

    let n = train.len();
    'epochs: while epoch < cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::child(cfg.seed, rng::TAG_SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_dataset(train, chunk, LabelSet::Noisy)?;
            let loss = match strategy {
                Strategy::CoTeaching { eps, ramp_epochs } => {
                    let peer = peer.as_mut().expect("co-teaching peer");
                    let frac = keep_fraction(epoch, *eps, *ramp_epochs);
                    let losses = |p: &Params| -> Result<Vec<f64>> {
                        batch
                            .features()
                            .iter()
                            .zip(batch.labels())
                            .map(|(x, &y)| crate::model::ce_loss(&p.forward(x)?, y))
                            .collect()
                    };
                    let (for_a, for_b) = coteach_select(&losses(&params)?, &losses(peer)?, frac)?;
                    let ga = params.gradients(&batch.select(&for_a)?, &CrossEntropy)?;
                    let gb = peer.gradients(&batch.select(&for_b)?, &CrossEntropy)?;
                    params.apply(&ga, cfg.lr);
                    peer.apply(&gb, cfg.lr);
                    ga.loss
                }
                Strategy::NMwR { lambda } => {
                    let m = matrix.as_mut().expect("learned matrix");
                    let g = params.gradients(
                        &batch,
                        &LearnedCorrection {
                            matrix: m,
                            lambda: *lambda,
                        },
                    )?;
                    params.apply(&g, cfg.lr);
                    m.apply(&g.aux, cfg.lr * cfg.matrix_lr_scale)?;
                    g.loss
                }
                _ => {
                    let obj = fixed_objective.as_deref().expect("stateless objective");
                    let g = params.gradients(&batch, obj)?;
                    params.apply(&g, cfg.lr);
                    g.loss
                }
            };
            step += 1;
            window_loss += loss;
            window_steps += 1;
            epoch_loss += loss;
            epoch_batches += 1;

            if step % cfg.eval_every as u64 == 0 {
                let e = evaluate_point(&params, val, test, val_labels, step, epoch, window_loss / window_steps as f64)?;
                window_loss = 0.0;
                window_steps = 0;
                if evals.is_empty() || e.val_acc > evals[best_index].val_acc {
                    best_index = evals.len();
                    best = Checkpoint::new(params.clone(), step);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                evals.push(e);
                if !no_validation && since_best >= cfg.patience {
                    stop_reason = StopReason::Patience;
                    epoch += 1;
                    break 'epochs;
                }
            }
        }

        let mean = epoch_loss / epoch_batches as f64;
        if no_validation {
            if let Some(prev) = prev_epoch_loss {
                if prev - mean < cfg.convergence_tol {
                    converged_streak += 1;
                } else {
                    converged_streak = 0;
                }
            }
            prev_epoch_loss = Some(mean);
            if converged_streak >= 2 {
                stop_reason = StopReason::Converged;
                epoch += 1;
                break;
            }
        }
        epoch += 1;
    }

    // Make sure the final state is part of the trajectory.
    if evals.last().map(|e| e.step) != Some(step) {
        let loss = if window_steps > 0 { window_loss / window_steps as f64 } else { f64::NAN };
        let e = evaluate_point(&params, val, test, val_labels, step, epoch.saturating_sub(1), loss)?;
        if evals.is_empty() || e.val_acc > evals[best_index].val_acc {
            best_index = evals.len();
            best = Checkpoint::new(params.clone(), step);
        }
        evals.push(e);
    }

    Ok(TrainOutcome {
        record: RunRecord {
            strategy: strategy.to_string(),
            evals,
            best_index,
            stop_reason,
            report_final: no_validation,
        },
        best,
        last: Checkpoint::new(params, step),
        learned_matrix: matrix,
    })
}

fn evaluate_point(
    params: &Params,
    val: &Dataset,
    test: &Dataset,
    val_labels: LabelSet,
    step: u64,
    epoch: usize,
    train_loss: f64,
) -> Result<Evaluation> {
    Ok(Evaluation {
        step,
        epoch,
        train_loss,
        val_acc: params.evaluate(val, val_labels)?,
        test_acc: params.evaluate(test, LabelSet::Clean)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    /// Clean test accuracy when stopping on the noisy validation labels.
    pub noisy_policy_acc: f64,
    /// Clean test accuracy when stopping on the clean validation labels.
    pub clean_policy_acc: f64,
    pub gap: f64,
}

/// Train twice from the same seed, once per validation policy.
pub fn compare_val_policies(
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    strategy: &Strategy,
    cfg: &TrainConfig,
) -> Result<PolicyComparison> {
    val.labels(LabelSet::Clean)?;
    val.labels(LabelSet::Noisy)?;
    let run = |policy| {
        let cfg = TrainConfig {
            val_policy: policy,
            ..cfg.clone()
        };
        train(train_set, val, test, strategy, &cfg).map(|o| o.record.reported_test_acc())
    };
    let noisy_policy_acc = run(ValPolicy::Noisy)?;
    let clean_policy_acc = run(ValPolicy::Clean)?;
    Ok(PolicyComparison {
        noisy_policy_acc,
        clean_policy_acc,
        gap: (clean_policy_acc - noisy_policy_acc).abs(),
    })
}

/// Train every candidate and keep the one with the best validation accuracy
/// (the first on ties). Returns the winner's index and outcome.
pub fn select_on_validation(
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    candidates: &[Strategy],
    cfg: &TrainConfig,
) -> Result<(usize, TrainOutcome)> {
    let mut best: Option<(usize, TrainOutcome)> = None;
    for (i, s) in candidates.iter().enumerate() {
        let out = train(train_set, val, test, s, cfg)?;
        let better = match &best {
            None => true,
            Some((_, b)) => out.record.best().val_acc > b.record.best().val_acc,
        };
        if better {
            best = Some((i, out));
        }
    }
    best.ok_or_else(|| Error::Config("no candidate strategies to select from".into()))
}
