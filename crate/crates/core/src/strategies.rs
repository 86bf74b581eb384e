//! Noise-handling strategies: forward correction with a fixed matrix, a
//! jointly learned noise matrix, co-teaching selection and label smoothing.

use std::fmt;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::model::{ce_loss, softmax_backward, CrossEntropy, LabelSmoothing, Objective, SampleGrad, PROB_FLOOR};
use crate::noise::TransitionMatrix;

/// Default co-teaching ramp length in epochs.
pub const DEFAULT_RAMP_EPOCHS: usize = 5;
/// Default label-smoothing mass.
pub const DEFAULT_LS_ALPHA: f64 = 0.1;
/// Candidate regularisation weights for the learned noise matrix.
pub const DEFAULT_NMWR_LAMBDAS: [f64; 3] = [1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Plain cross-entropy on the noisy labels, early stopping on validation.
    Vanilla,
    /// Plain cross-entropy trained until the training loss converges.
    NoValidation,
    /// Forward correction through a fixed transition matrix.
    NMat(TransitionMatrix),
    /// Learned noise matrix, identity-initialised, with an L2 penalty.
    NMwR { lambda: f64 },
    /// Two networks selecting small-loss samples for each other.
    CoTeaching { eps: f64, ramp_epochs: usize },
    LabelSmoothing { alpha: f64 },
}

impl Strategy {
    /// Short name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Vanilla => "WN",
            Strategy::NoValidation => "NV",
            Strategy::NMat(_) => "NMat",
            Strategy::NMwR { .. } => "NMwR",
            Strategy::CoTeaching { .. } => "CT",
            Strategy::LabelSmoothing { .. } => "LS",
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match *self {
            Strategy::NMat(ref t) if t.k() != k => Err(Error::Shape(format!(
                "noise matrix is {0}x{0} but the data has {k} classes",
                t.k()
            ))),
            Strategy::NMwR { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => Err(
                Error::Config(format!("regularisation weight must be >= 0, got {lambda}")),
            ),
            Strategy::CoTeaching { eps, ramp_epochs } => {
                if !(0.0..1.0).contains(&eps) {
                    Err(Error::Config(format!("co-teaching eps must be in [0, 1), got {eps}")))
                } else if ramp_epochs == 0 {
                    Err(Error::Config("co-teaching ramp_epochs must be positive".into()))
                } else {
                    Ok(())
                }
            }
            Strategy::LabelSmoothing { alpha } if !(0.0..1.0).contains(&alpha) => Err(
                Error::Config(format!("smoothing alpha must be in [0, 1), got {alpha}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::NMwR { lambda } => write!(f, "NMwR(lambda={lambda})"),
            Strategy::CoTeaching { eps, ramp_epochs } => {
                write!(f, "CT(eps={eps}, ramp={ramp_epochs})")
            }
            Strategy::LabelSmoothing { alpha } => write!(f, "LS(alpha={alpha})"),
            s => f.write_str(s.name()),
        }
    }
}

/// Unconstrained `k x k` matrix appended after the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl LearnedMatrix {
    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        LearnedMatrix { k, entries }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("learned matrix must be square".into()));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("learned noise matrix"));
        }
        Ok(LearnedMatrix { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// `M -= lr * grad` with `grad` laid out row-major like the entries.
    pub fn apply(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.entries.len() {
            return Err(Error::Shape("learned matrix gradient has the wrong size".into()));
        }
        for (m, g) in self.entries.iter_mut().zip(grad) {
            *m -= lr * g;
        }
        if self.entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("learned noise matrix"));
        }
        Ok(())
    }
}

fn check_k(probs: &[f64], k: usize, label: Label) -> Result<()> {
    if probs.len() != k {
        return Err(Error::Shape(format!(
            "{} probabilities for a {k}x{k} noise matrix",
            probs.len()
        )));
    }
    if label >= k {
        return Err(Error::Domain(format!("label {label} is not below k={k}")));
    }
    Ok(())
}

/// `q_j = sum_i probs_i * t_ij`.
pub fn corrected_distribution(probs: &[f64], t: &TransitionMatrix) -> Vec<f64> {
    let k = t.k();
    let mut q = vec![0.0; k];
    for (i, p) in probs.iter().enumerate() {
        for (qj, tij) in q.iter_mut().zip(t.row(i)) {
            *qj += p * tij;
        }
    }
    q
}

/// Cross-entropy of the forward-corrected distribution against the noisy label.
pub fn nmat_loss(probs: &[f64], t: &TransitionMatrix, noisy_label: Label) -> Result<f64> {
    check_k(probs, t.k(), noisy_label)?;
    ce_loss(&corrected_distribution(probs, t), noisy_label)
}

/// Forward correction with a fixed transition matrix.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCorrection<'a> {
    pub matrix: &'a TransitionMatrix,
}

impl Objective for ForwardCorrection<'_> {
    fn loss_grad(&self, probs: &[f64], label: Label) -> Result<SampleGrad> {
        let t = self.matrix;
        check_k(probs, t.k(), label)?;
        let q = corrected_distribution(probs, t);
        let loss = ce_loss(&q, label)?;
        let qy = q[label].max(PROB_FLOOR);
        // d loss / d probs_i = -t_iy / q_y
        let d_probs: Vec<f64> = (0..t.k()).map(|i| -t.get(i, label) / qy).collect();
        Ok(SampleGrad {
            loss,
            d_logits: softmax_backward(probs, &d_probs),
            d_aux: Vec::new(),
        })
    }
}

/// Loss and gradients of the learned-matrix objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NmwrGrad {
    pub loss: f64,
    pub d_probs: Vec<f64>,
    /// Row-major, same layout as [`LearnedMatrix::entries`].
    pub d_matrix: Vec<f64>,
}

/// `ce(normalise(max(probs . M, 1e-12)), noisy_label) + lambda * ||M||_F^2`.
pub fn nmwr_loss(probs: &[f64], m: &LearnedMatrix, noisy_label: Label, lambda: f64) -> Result<NmwrGrad> {
    let k = m.k();
    check_k(probs, k, noisy_label)?;
    let mut u = vec![0.0; k];
    for (i, p) in probs.iter().enumerate() {
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += p * m.get(i, j);
        }
    }
    if u.iter().all(|&v| v < PROB_FLOOR) {
        return Err(Error::numeric("learned noise matrix output (all entries below clamp)"));
    }
    let clamped: Vec<f64> = u.iter().map(|v| v.max(PROB_FLOOR)).collect();
    let s: f64 = clamped.iter().sum();
    let qy = clamped[noisy_label] / s;
    let loss = -qy.max(PROB_FLOOR).ln() + lambda * m.frobenius_sq();

    // d(-ln(c_y / s)) / d c_j = 1/s - [j == y] / c_y, zero where the clamp is active.
    let d_u: Vec<f64> = (0..k)
        .map(|j| {
            if u[j] < PROB_FLOOR {
                0.0
            } else {
                let mut d = 1.0 / s;
                if j == noisy_label {
                    d -= 1.0 / clamped[j];
                }
                d
            }
        })
        .collect();
    let d_probs: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| m.get(i, j) * d_u[j]).sum())
        .collect();
    let mut d_matrix = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            d_matrix[i * k + j] = probs[i] * d_u[j] + 2.0 * lambda * m.get(i, j);
        }
    }
    Ok(NmwrGrad {
        loss,
        d_probs,
        d_matrix,
    })
}

/// Learned-matrix objective; the auxiliary gradient is `d loss / d M`.
#[derive(Debug, Clone, Copy)]
pub struct LearnedCorrection<'a> {
    pub matrix: &'a LearnedMatrix,
    pub lambda: f64,
}

impl Objective for LearnedCorrection<'_> {
    fn loss_grad(&self, probs: &[f64], label: Label) -> Result<SampleGrad> {
        let g = nmwr_loss(probs, self.matrix, label, self.lambda)?;
        Ok(SampleGrad {
            loss: g.loss,
            d_logits: softmax_backward(probs, &g.d_probs),
            d_aux: g.d_matrix,
        })
    }

    fn aux_len(&self) -> usize {
        self.matrix.k() * self.matrix.k()
    }
}

/// Objective for strategies that do not carry their own state.
pub(crate) fn stateless_objective(s: &Strategy) -> Option<Box<dyn Objective + '_>> {
    match s {
        Strategy::Vanilla | Strategy::NoValidation | Strategy::CoTeaching { .. } => {
            Some(Box::new(CrossEntropy))
        }
        Strategy::LabelSmoothing { alpha } => Some(Box::new(LabelSmoothing { alpha: *alpha })),
        Strategy::NMat(t) => Some(Box::new(ForwardCorrection { matrix: t })),
        Strategy::NMwR { .. } => None,
    }
}

/// Fraction of each mini-batch kept by co-teaching at `epoch`.
pub fn keep_fraction(epoch: usize, eps: f64, ramp_epochs: usize) -> f64 {
    let ramp = (epoch as f64 / ramp_epochs.max(1) as f64).min(1.0);
    1.0 - eps * ramp
}

/// Cross-selection of small-loss samples.
///
/// Returns `(for_a, for_b)`: network A trains on the `ceil(frac * n)` indices
/// with the smallest `losses_b`, network B on those smallest under
/// `losses_a`. Ties go to the lower index; indices are returned ascending.
pub fn coteach_select(losses_a: &[f64], losses_b: &[f64], frac: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if losses_a.len() != losses_b.len() {
        return Err(Error::Shape(format!(
            "co-teaching losses have lengths {} and {}",
            losses_a.len(),
            losses_b.len()
        )));
    }
    let n = losses_a.len();
    if n == 0 {
        return Err(Error::Size("co-teaching selection on an empty batch".into()));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Domain(format!("keep fraction must be in (0, 1], got {frac}")));
    }
    // The epsilon keeps 0.6 * 10 from rounding up to 7.
    let keep = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let smallest = |losses: &[f64]| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        let mut chosen = idx[..keep].to_vec();
        chosen.sort_unstable();
        chosen
    };
    Ok((smallest(losses_b), smallest(losses_a)))
}
