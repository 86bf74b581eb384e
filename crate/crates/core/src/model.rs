//! Softmax classifier over sparse features with closed-form gradients.
//!
//! Two backbones are available: a linear softmax layer, and a single hidden
//! `tanh` layer followed by a linear softmax layer. Input weights are stored
//! row-major by feature index so a sparse input only touches the rows of its
//! non-zero coordinates, both in the forward pass and in the update.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, LabelSet, SparseVec};
use crate::error::{Error, Result};
use crate::rng;

/// Probabilities are clamped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arch {
    #[default]
    Linear,
    Mlp { hidden: usize },
}

impl Arch {
    fn width(&self, k: usize) -> usize {
        match *self {
            Arch::Linear => k,
            Arch::Mlp { hidden } => hidden,
        }
    }
}

/// Model parameters. `w_out`/`b_out` are empty for the linear backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    arch: Arch,
    dims: usize,
    k: usize,
    w_in: Vec<f64>,
    b_in: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: Arch, dims: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
        }
        if dims == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let width = arch.width(k);
        if width == 0 {
            return Err(Error::Config("hidden layer must be non-empty".into()));
        }
        let (w_out, b_out) = match arch {
            Arch::Linear => (Vec::new(), Vec::new()),
            Arch::Mlp { hidden } => (vec![0.0; hidden * k], vec![0.0; k]),
        };
        Ok(Params {
            arch,
            dims,
            k,
            w_in: vec![0.0; dims * width],
            b_in: vec![0.0; width],
            w_out,
            b_out,
        })
    }

    /// Weights uniform in `[-INIT_SCALE, INIT_SCALE]`, biases zero.
    pub fn init(arch: Arch, dims: usize, k: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch, dims, k)?;
        let mut r = rng::child(seed, rng::TAG_INIT, 0);
        for w in p.w_in.iter_mut().chain(p.w_out.iter_mut()) {
            *w = r.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        Ok(p)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn width(&self) -> usize {
        self.arch.width(self.k)
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w_in.len() + self.b_in.len() + self.w_out.len() + self.b_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view used by finite-difference checks: `w_in, b_in, w_out, b_out`.
    pub fn get_flat(&self, idx: usize) -> f64 {
        let (block, i) = self.locate(idx);
        self.block(block)[i]
    }

    pub fn set_flat(&mut self, idx: usize, v: f64) {
        let (block, i) = self.locate(idx);
        self.block_mut(block)[i] = v;
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for b in 0..4 {
            let n = self.block(b).len();
            if idx < n {
                return (b, idx);
            }
            idx -= n;
        }
        panic!("flat parameter index out of range");
    }

    fn block(&self, b: usize) -> &[f64] {
        match b {
            0 => &self.w_in,
            1 => &self.b_in,
            2 => &self.w_out,
            _ => &self.b_out,
        }
    }

    fn block_mut(&mut self, b: usize) -> &mut Vec<f64> {
        match b {
            0 => &mut self.w_in,
            1 => &mut self.b_in,
            2 => &mut self.w_out,
            _ => &mut self.b_out,
        }
    }

    /// Simultaneously permute the class axis of the output layer:
    /// new class `c` takes the weights of old class `perm[c]`.
    pub fn permute_classes(&self, perm: &[Label]) -> Params {
        let k = self.k;
        let mut out = self.clone();
        let (w, b) = match self.arch {
            Arch::Linear => (&mut out.w_in, &mut out.b_in),
            Arch::Mlp { .. } => (&mut out.w_out, &mut out.b_out),
        };
        let (src_w, src_b) = match self.arch {
            Arch::Linear => (&self.w_in, &self.b_in),
            Arch::Mlp { .. } => (&self.w_out, &self.b_out),
        };
        for row in 0..src_w.len() / k {
            for c in 0..k {
                w[row * k + c] = src_w[row * k + perm[c]];
            }
        }
        for c in 0..k {
            b[c] = src_b[perm[c]];
        }
        out
    }

    /// Hidden activations (MLP only) and logits.
    fn activations(&self, x: &SparseVec) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.dim != self.dims {
            return Err(Error::Shape(format!(
                "input has dimension {}, model expects {}",
                x.dim, self.dims
            )));
        }
        let width = self.width();
        let mut a = self.b_in.clone();
        for (i, v) in x.iter() {
            let row = &self.w_in[i * width..(i + 1) * width];
            for (acc, w) in a.iter_mut().zip(row) {
                *acc += v * w;
            }
        }
        let (hidden, logits) = match self.arch {
            Arch::Linear => (Vec::new(), a),
            Arch::Mlp { .. } => {
                let h: Vec<f64> = a.into_iter().map(f64::tanh).collect();
                let mut z = self.b_out.clone();
                for (j, hj) in h.iter().enumerate() {
                    let row = &self.w_out[j * self.k..(j + 1) * self.k];
                    for (acc, w) in z.iter_mut().zip(row) {
                        *acc += hj * w;
                    }
                }
                (h, z)
            }
        };
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric("logits"));
        }
        Ok((hidden, logits))
    }

    pub fn logits(&self, x: &SparseVec) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.1)
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &SparseVec) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Lowest-index argmax of the logits.
    pub fn predict(&self, x: &SparseVec) -> Result<Label> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Mean objective value and its gradient over `batch`.
    pub fn gradients(&self, batch: &Batch<'_>, obj: &dyn Objective) -> Result<Gradients> {
        let width = self.width();
        let k = self.k;
        let mut g = Gradients {
            loss: 0.0,
            w_in: BTreeMap::new(),
            b_in: vec![0.0; width],
            w_out: vec![0.0; self.w_out.len()],
            b_out: vec![0.0; self.b_out.len()],
            aux: vec![0.0; obj.aux_len()],
        };
        let scale = 1.0 / batch.len() as f64;
        for (x, &y) in batch.features.iter().zip(&batch.labels) {
            if y >= k {
                return Err(Error::Domain(format!("label {y} is not below k={k}")));
            }
            let (hidden, logits) = self.activations(x)?;
            let probs = softmax(&logits);
            let sg = obj.loss_grad(&probs, y)?;
            g.loss += sg.loss * scale;
            for (acc, d) in g.aux.iter_mut().zip(&sg.d_aux) {
                *acc += d * scale;
            }
            // Gradient with respect to the input layer's pre-activation.
            let d_pre: Vec<f64> = match self.arch {
                Arch::Linear => sg.d_logits.iter().map(|d| d * scale).collect(),
                Arch::Mlp { .. } => {
                    let dz: Vec<f64> = sg.d_logits.iter().map(|d| d * scale).collect();
                    for (acc, d) in g.b_out.iter_mut().zip(&dz) {
                        *acc += d;
                    }
                    let mut d_pre = vec![0.0; width];
                    for (j, hj) in hidden.iter().enumerate() {
                        let w_row = &self.w_out[j * k..(j + 1) * k];
                        let g_row = &mut g.w_out[j * k..(j + 1) * k];
                        let mut dh = 0.0;
                        for c in 0..k {
                            g_row[c] += hj * dz[c];
                            dh += w_row[c] * dz[c];
                        }
                        d_pre[j] = dh * (1.0 - hj * hj);
                    }
                    d_pre
                }
            };
            for (acc, d) in g.b_in.iter_mut().zip(&d_pre) {
                *acc += d;
            }
            for (i, v) in x.iter() {
                let row = g.w_in.entry(i as u32).or_insert_with(|| vec![0.0; width]);
                for (acc, d) in row.iter_mut().zip(&d_pre) {
                    *acc += v * d;
                }
            }
        }
        g.check_finite()?;
        Ok(g)
    }

    /// In-place SGD update `theta -= lr * grad`.
    pub fn apply(&mut self, g: &Gradients, lr: f64) {
        let width = self.width();
        for (&i, row) in &g.w_in {
            let i = i as usize;
            for (w, d) in self.w_in[i * width..(i + 1) * width].iter_mut().zip(row) {
                *w -= lr * d;
            }
        }
        for (dst, src) in [
            (&mut self.b_in, &g.b_in),
            (&mut self.w_out, &g.w_out),
            (&mut self.b_out, &g.b_out),
        ] {
            for (w, d) in dst.iter_mut().zip(src) {
                *w -= lr * d;
            }
        }
    }

    /// Fraction of examples whose prediction equals the selected label.
    pub fn evaluate(&self, ds: &Dataset, which: LabelSet) -> Result<f64> {
        let labels = ds.labels(which)?;
        if ds.is_empty() {
            return Err(Error::Size("cannot evaluate on an empty dataset".into()));
        }
        let hits = ds
            .examples()
            .par_iter()
            .zip(labels)
            .map(|(ex, &y)| -> Result<usize> { Ok(usize::from(self.predict(ex.features()?)? == y)) })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(hits as f64 / ds.len() as f64)
    }

    /// Plain cross-entropy of every example against the selected label.
    pub fn sample_losses(&self, ds: &Dataset, which: LabelSet) -> Result<Vec<f64>> {
        let labels = ds.labels(which)?;
        ds.examples()
            .par_iter()
            .zip(labels)
            .map(|(ex, &y)| ce_loss(&self.forward(ex.features()?)?, y))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>, step: u64) -> Result<()> {
        fs::write(path, Checkpoint::encode(self, step))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::decode(&fs::read(path)?)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_label(probs: &[f64], label: Label) -> Result<()> {
    if label >= probs.len() {
        return Err(Error::Domain(format!(
            "label {label} is not below k={}",
            probs.len()
        )));
    }
    Ok(())
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn ce_loss(probs: &[f64], label: Label) -> Result<f64> {
    check_label(probs, label)?;
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Cross-entropy against `(1 - alpha) * onehot(label) + alpha / k`.
pub fn ls_loss(probs: &[f64], label: Label, alpha: f64) -> Result<f64> {
    check_label(probs, label)?;
    let target = smoothed_target(probs.len(), label, alpha)?;
    Ok(target
        .iter()
        .zip(probs)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * p.max(PROB_FLOOR).ln())
        .sum())
}

fn smoothed_target(k: usize, label: Label, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "smoothing alpha must be in [0, 1), got {alpha}"
        )));
    }
    let base = alpha / k as f64;
    Ok((0..k)
        .map(|j| if j == label { 1.0 - alpha + base } else { base })
        .collect())
}

/// Per-sample loss value and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub loss: f64,
    /// Gradient with respect to the logits.
    pub d_logits: Vec<f64>,
    /// Gradient with respect to the objective's own parameters, if any.
    pub d_aux: Vec<f64>,
}

/// A per-sample training loss, differentiable in the logits.
pub trait Objective: Sync {
    fn loss_grad(&self, probs: &[f64], label: Label) -> Result<SampleGrad>;

    /// Number of objective-owned parameters receiving gradients.
    fn aux_len(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropy;

impl Objective for CrossEntropy {
    fn loss_grad(&self, probs: &[f64], label: Label) -> Result<SampleGrad> {
        let loss = ce_loss(probs, label)?;
        let mut d = probs.to_vec();
        d[label] -= 1.0;
        Ok(SampleGrad {
            loss,
            d_logits: d,
            d_aux: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LabelSmoothing {
    pub alpha: f64,
}

impl Objective for LabelSmoothing {
    fn loss_grad(&self, probs: &[f64], label: Label) -> Result<SampleGrad> {
        let loss = ls_loss(probs, label, self.alpha)?;
        let target = smoothed_target(probs.len(), label, self.alpha)?;
        Ok(SampleGrad {
            loss,
            d_logits: probs.iter().zip(&target).map(|(p, t)| p - t).collect(),
            d_aux: Vec::new(),
        })
    }
}

/// Back-propagate `d loss / d probs` through the softmax.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(d_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(d_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// A non-empty mini-batch of borrowed feature vectors and labels.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    features: Vec<&'a SparseVec>,
    labels: Vec<Label>,
}

impl<'a> Batch<'a> {
    pub fn new(features: Vec<&'a SparseVec>, labels: Vec<Label>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "batch has {} inputs and {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::Size("empty batch".into()));
        }
        Ok(Batch { features, labels })
    }

    /// Batch of the examples at `positions` with the chosen labels.
    pub fn from_dataset(ds: &'a Dataset, positions: &[usize], which: LabelSet) -> Result<Self> {
        let labels = ds.labels(which)?;
        let features = positions
            .iter()
            .map(|&p| ds.examples()[p].features())
            .collect::<Result<_>>()?;
        Self::new(features, positions.iter().map(|&p| labels[p]).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[&'a SparseVec] {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn select(&self, idx: &[usize]) -> Result<Batch<'a>> {
        Batch::new(
            idx.iter().map(|&i| self.features[i]).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Mean-batch gradient. Input-layer rows are stored sparsely by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub w_in: BTreeMap<u32, Vec<f64>>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub aux: Vec<f64>,
}

impl Gradients {
    fn check_finite(&self) -> Result<()> {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
        if !self.loss.is_finite() {
            return Err(Error::numeric("loss"));
        }
        if let Some((i, _)) = self.w_in.iter().find(|(_, r)| bad(r)) {
            return Err(Error::numeric(format!("input weights (feature row {i})")));
        }
        for (name, v) in [
            ("input bias", &self.b_in),
            ("output weights", &self.w_out),
            ("output bias", &self.b_out),
            ("objective parameters", &self.aux),
        ] {
            if bad(v) {
                return Err(Error::numeric(name));
            }
        }
        Ok(())
    }

    /// Dense value for a flat parameter index (see [`Params::get_flat`]).
    pub fn get_flat(&self, p: &Params, idx: usize) -> f64 {
        let (block, i) = p.locate(idx);
        match block {
            0 => {
                let width = p.width();
                self.w_in
                    .get(&((i / width) as u32))
                    .map_or(0.0, |row| row[i % width])
            }
            1 => self.b_in[i],
            2 => self.w_out[i],
            _ => self.b_out[i],
        }
    }
}

/// One SGD step on the mean batch objective, returning new parameters.
pub fn grad_step(p: &Params, batch: &Batch<'_>, lr: f64, obj: &dyn Objective) -> Result<Params> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    let g = p.gradients(batch, obj)?;
    let mut next = p.clone();
    next.apply(&g, lr);
    Ok(next)
}

/// Parameters together with the training step they were captured at.
///
/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// magic      8 bytes  "NLABCKPT"
/// version    u32      1
/// arch       u8       0 = linear, 1 = mlp
/// hidden     u64      0 for linear
/// dims       u64
/// k          u64
/// step       u64
/// 4 arrays   w_in, b_in, w_out, b_out; each a u64 length then f64 values
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Params,
}

const MAGIC: &[u8; 8] = b"NLABCKPT";
const VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(params: Params, step: u64) -> Self {
        Checkpoint { step, params }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path, self.step)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Params::load(path)
    }

    pub fn encode(p: &Params, step: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * p.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let (tag, hidden) = match p.arch {
            Arch::Linear => (0u8, 0u64),
            Arch::Mlp { hidden } => (1u8, hidden as u64),
        };
        out.push(tag);
        for v in [hidden, p.dims as u64, p.k as u64, step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for arr in [&p.w_in, &p.b_in, &p.w_out, &p.b_out] {
            out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Artifact("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Artifact(format!("unsupported checkpoint version {version}")));
        }
        let tag = r.take(1)?[0];
        let hidden = r.u64()? as usize;
        let arch = match tag {
            0 => Arch::Linear,
            1 => Arch::Mlp { hidden },
            t => return Err(Error::Artifact(format!("unknown architecture tag {t}"))),
        };
        let dims = r.u64()? as usize;
        let k = r.u64()? as usize;
        let step = r.u64()?;
        let mut params = Params {
            arch,
            dims,
            k,
            w_in: Vec::new(),
            b_in: Vec::new(),
            w_out: Vec::new(),
            b_out: Vec::new(),
        };
        let expected = Params::zeros(arch, dims, k)?;
        for b in 0..4 {
            let n = r.u64()? as usize;
            if n != expected.block(b).len() {
                return Err(Error::Artifact(format!(
                    "parameter block {b} has {n} values, expected {}",
                    expected.block(b).len()
                )));
            }
            let raw = r.take(n * 8)?;
            *params.block_mut(b) = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
        }
        if r.pos != bytes.len() {
            return Err(Error::Artifact("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { step, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Artifact("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
