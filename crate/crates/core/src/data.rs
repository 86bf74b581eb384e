//! Datasets, JSONL ingestion, splitting, featurisation and synthetic fixtures.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Class index in `[0, k)`.
pub type Label = usize;

/// Default feature dimension for hashed n-gram features.
pub const DEFAULT_DIMS: usize = 1 << 18;

/// Which label sequence of a [`Dataset`] to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    Clean,
    Noisy,
}

impl std::fmt::Display for LabelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelSet::Clean => "clean",
            LabelSet::Noisy => "noisy",
        })
    }
}

/// Sparse non-negative feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    /// Build from unordered `(index, value)` pairs; duplicate indices are summed.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i as usize >= dim {
                return Err(Error::Shape(format!(
                    "feature index {i} out of range for dimension {dim}"
                )));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(SparseVec {
            dim,
            indices,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit L2 norm; the zero vector is left untouched.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    /// Populated by [`featurize`] or by the synthetic generators.
    pub features: Option<SparseVec>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            features: None,
        }
    }

    pub fn features(&self) -> Result<&SparseVec> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::Config(format!("example {:?} has not been featurized", self.id)))
    }
}

/// Examples with optional clean and noisy label sequences aligned by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    k: usize,
    clean: Option<Vec<Label>>,
    noisy: Option<Vec<Label>>,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        k: usize,
        clean: Option<Vec<Label>>,
        noisy: Option<Vec<Label>>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
        }
        if clean.is_none() && noisy.is_none() {
            return Err(Error::Config(
                "dataset needs at least one label sequence".into(),
            ));
        }
        for (name, labels) in [("clean", &clean), ("noisy", &noisy)] {
            let Some(labels) = labels else { continue };
            if labels.len() != examples.len() {
                return Err(Error::Shape(format!(
                    "{name} labels have length {} but there are {} examples",
                    labels.len(),
                    examples.len()
                )));
            }
            if let Some(pos) = labels.iter().position(|&y| y >= k) {
                return Err(Error::Domain(format!(
                    "{name} label {} of example {:?} is not below k={k}",
                    labels[pos], examples[pos].id
                )));
            }
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Domain(format!("duplicate example id {:?}", ex.id)));
            }
        }
        Ok(Dataset {
            examples,
            k,
            clean,
            noisy,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn clean_labels(&self) -> Option<&[Label]> {
        self.clean.as_deref()
    }

    pub fn noisy_labels(&self) -> Option<&[Label]> {
        self.noisy.as_deref()
    }

    pub fn labels(&self, which: LabelSet) -> Result<&[Label]> {
        match which {
            LabelSet::Clean => self.clean_labels(),
            LabelSet::Noisy => self.noisy_labels(),
        }
        .ok_or_else(|| Error::Config(format!("dataset has no {which} labels")))
    }

    /// Replace (or add) the noisy label sequence.
    pub fn with_noisy_labels(self, noisy: Vec<Label>) -> Result<Self> {
        Dataset::new(self.examples, self.k, self.clean, Some(noisy))
    }

    /// Noisy labels become equal to the clean ones.
    pub fn with_clean_as_noisy(self) -> Result<Self> {
        let clean = self.labels(LabelSet::Clean)?.to_vec();
        self.with_noisy_labels(clean)
    }

    /// Examples at `positions`, in that order, with their labels.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let pick = |labels: &Option<Vec<Label>>| {
            labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect())
        };
        Dataset {
            examples: positions.iter().map(|&p| self.examples[p].clone()).collect(),
            k: self.k,
            clean: pick(&self.clean),
            noisy: pick(&self.noisy),
        }
    }

    /// Positions where the noisy label differs from the clean one.
    pub fn wrong_mask(&self) -> Result<Vec<bool>> {
        let clean = self.labels(LabelSet::Clean)?;
        let noisy = self.labels(LabelSet::Noisy)?;
        Ok(clean.iter().zip(noisy).map(|(c, n)| c != n).collect())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }
}

// ---------------------------------------------------------------------------
// JSONL

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clean_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noisy_label: Option<Label>,
}

/// Read a dataset from JSONL records `{"id", "text", "clean_label"?, "noisy_label"?}`.
///
/// A label field must be present on every record or on none of them. Blank
/// lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>, k: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    read_jsonl(reader, path, k)
}

pub fn read_jsonl(reader: impl BufRead, path: &Path, k: usize) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut has_clean = None;
    let mut has_noisy = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.clean_label.is_none() && rec.noisy_label.is_none() {
            return Err(parse_err(
                lineno,
                format!("record {:?} has neither clean_label nor noisy_label", rec.id),
            ));
        }
        for (name, value, present, out) in [
            ("clean_label", rec.clean_label, &mut has_clean, &mut clean),
            ("noisy_label", rec.noisy_label, &mut has_noisy, &mut noisy),
        ] {
            match (*present, value) {
                (None, v) => *present = Some(v.is_some()),
                (Some(p), v) if p != v.is_some() => {
                    return Err(parse_err(
                        lineno,
                        format!("{name} must be present on all records or on none"),
                    ))
                }
                _ => {}
            }
            if let Some(y) = value {
                if y >= k {
                    return Err(Error::Domain(format!(
                        "{name} {y} of record {:?} is not below k={k}",
                        rec.id
                    )));
                }
                out.push(y);
            }
        }
        examples.push(Example::new(rec.id, rec.text));
    }
    if examples.is_empty() {
        return Err(Error::Size(format!("{} contains no records", path.display())));
    }
    let clean = has_clean.unwrap_or(false).then_some(clean);
    let noisy = has_noisy.unwrap_or(false).then_some(noisy);
    Dataset::new(examples, k, clean, noisy)
}

pub fn write_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    to_jsonl(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn to_jsonl(ds: &Dataset, mut w: impl Write) -> Result<()> {
    for (i, ex) in ds.examples.iter().enumerate() {
        let rec = Record {
            id: ex.id.clone(),
            text: ex.text.clone(),
            clean_label: ds.clean.as_ref().map(|l| l[i]),
            noisy_label: ds.noisy.as_ref().map(|l| l[i]),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train,
            val,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain(format!(
                "split fractions must be non-negative, got {f:?}"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "split fractions must sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

/// Shuffle by seed and cut into (train, val, test).
///
/// Val and test sizes are `floor(n * fraction)`; train receives the remainder.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let n = ds.len();
    if n == 0 {
        return Err(Error::Size("cannot split an empty dataset".into()));
    }
    // The epsilon keeps e.g. 100 * 0.29 from flooring to 28.
    let cut = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_val = cut(spec.val);
    let n_test = cut(spec.test);
    let n_train = n - n_val - n_test;
    for (name, frac, size) in [
        ("train", spec.train, n_train),
        ("val", spec.val, n_val),
        ("test", spec.test, n_test),
    ] {
        if frac > 0.0 && size == 0 {
            return Err(Error::Size(format!(
                "{name} fraction {frac} of {n} examples yields an empty split"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::child(spec.seed, rng::TAG_SPLIT, 0));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((ds.subset(train), ds.subset(val), ds.subset(test)))
}

// ---------------------------------------------------------------------------
// Featurisation

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes()
        .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Lower-cased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed unigram + bigram counts, L2-normalised.
///
/// A unigram `t` hashes as `fnv1a64(t)`, a bigram `(a, b)` as
/// `fnv1a64("a b")`; the bucket is the hash masked to `dims - 1`.
pub fn hash_features(text: &str, dims: usize) -> Result<SparseVec> {
    if !dims.is_power_of_two() {
        return Err(Error::Config(format!(
            "feature dimension must be a power of two, got {dims}"
        )));
    }
    let mask = (dims - 1) as u64;
    let tokens = tokenize(text);
    let bucket = |s: &str| (fnv1a64(s) & mask) as u32;
    let mut pairs: Vec<(u32, f64)> = tokens.iter().map(|t| (bucket(t), 1.0)).collect();
    pairs.extend(
        tokens
            .windows(2)
            .map(|w| (bucket(&format!("{} {}", w[0], w[1])), 1.0)),
    );
    let mut v = SparseVec::from_pairs(dims, pairs)?;
    v.normalize();
    Ok(v)
}

pub fn featurize(ds: &Dataset, dims: usize) -> Result<Dataset> {
    if !dims.is_power_of_two() {
        return Err(Error::Config(format!(
            "feature dimension must be a power of two, got {dims}"
        )));
    }
    if let Some(ex) = ds.examples.iter().find(|e| tokenize(&e.text).is_empty()) {
        return Err(Error::Domain(format!("example {:?} has empty text", ex.id)));
    }
    let examples = ds
        .examples
        .par_iter()
        .map(|ex| {
            Ok(Example {
                id: ex.id.clone(),
                text: ex.text.clone(),
                features: Some(hash_features(&ex.text, dims)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        examples,
        ..ds.clone()
    })
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

/// Prototype-plus-perturbation feature data.
///
/// Each class owns a sparse positive prototype. An example is
/// `margin * prototype + (1 - margin) * perturbation`, L2-normalised, where
/// the perturbation is a sparse positive vector on random coordinates; the
/// perturbation plays the role of rare words that let a model memorise
/// individual examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub k: usize,
    pub n: usize,
    pub margin: f64,
    pub seed: u64,
    #[serde(default = "SynthSpec::default_dims")]
    pub dims: usize,
    /// Non-zeros per class prototype.
    #[serde(default = "SynthSpec::default_proto_nnz")]
    pub proto_nnz: usize,
    /// Non-zeros per example perturbation.
    #[serde(default = "SynthSpec::default_noise_nnz")]
    pub noise_nnz: usize,
}

impl SynthSpec {
    pub fn new(k: usize, n: usize, margin: f64, seed: u64) -> Self {
        SynthSpec {
            k,
            n,
            margin,
            seed,
            dims: Self::default_dims(),
            proto_nnz: Self::default_proto_nnz(),
            noise_nnz: Self::default_noise_nnz(),
        }
    }

    fn default_dims() -> usize {
        4096
    }

    fn default_proto_nnz() -> usize {
        16
    }

    fn default_noise_nnz() -> usize {
        16
    }
}

pub fn synth_dataset(k: usize, n: usize, margin: f64, seed: u64) -> Result<Dataset> {
    synth(&SynthSpec::new(k, n, margin, seed))
}

pub fn synth(spec: &SynthSpec) -> Result<Dataset> {
    let SynthSpec {
        k,
        n,
        margin,
        seed,
        dims,
        proto_nnz,
        noise_nnz,
    } = *spec;
    if k < 2 {
        return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Size(format!("need n >= k, got n={n}, k={k}")));
    }
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::Domain(format!("margin must be in (0, 1], got {margin}")));
    }
    if proto_nnz == 0 || proto_nnz > dims || noise_nnz > dims {
        return Err(Error::Config(format!(
            "invalid synthetic sparsity: proto_nnz={proto_nnz}, noise_nnz={noise_nnz}, dims={dims}"
        )));
    }

    // Prototypes live on disjoint coordinate blocks so margin = 1 is separable.
    let mut r = rng::child(seed, rng::TAG_SYNTH, u64::MAX);
    let mut coords: Vec<u32> = (0..dims as u32).collect();
    coords.shuffle(&mut r);
    let proto_nnz = proto_nnz.min(dims / k).max(1);
    let prototypes: Vec<SparseVec> = (0..k)
        .map(|c| {
            let pairs = coords[c * proto_nnz..(c + 1) * proto_nnz]
                .iter()
                .map(|&i| (i, r.gen_range(0.5..1.5)))
                .collect();
            let mut p = SparseVec::from_pairs(dims, pairs)?;
            p.normalize();
            Ok(p)
        })
        .collect::<Result<_>>()?;

    let mut examples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        let mut r = rng::child(seed, rng::TAG_SYNTH, i as u64);
        let mut pairs: Vec<(u32, f64)> = prototypes[y].iter().map(|(j, v)| (j as u32, margin * v)).collect();
        if margin < 1.0 && noise_nnz > 0 {
            let mut pert: Vec<(u32, f64)> = (0..noise_nnz)
                .map(|_| (r.gen_range(0..dims as u32), r.gen_range(0.0..1.0)))
                .collect();
            let norm = pert.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                pert.iter_mut().for_each(|(_, v)| *v *= (1.0 - margin) / norm);
            }
            pairs.extend(pert);
        }
        let mut x = SparseVec::from_pairs(dims, pairs)?;
        x.normalize();
        examples.push(Example {
            id: format!("synth-{i:06}"),
            text: format!("synthetic example {i}"),
            features: Some(x),
        });
        labels.push(y);
    }
    Dataset::new(examples, k, Some(labels), None)
}

/// Keyword corpus with planted misleading keywords.
///
/// Every document is built from words of its own topic vocabulary, shared
/// filler words and a few document-unique tokens. A fraction `trap_rate` of the
/// documents of class `c` additionally contains the keyword `trap<c>`, which
/// the returned rule list maps to class `(c + 1) % k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordCorpusSpec {
    pub k: usize,
    pub n: usize,
    pub trap_rate: f64,
    pub seed: u64,
    #[serde(default = "KeywordCorpusSpec::default_topic_words")]
    pub topic_words: usize,
    #[serde(default = "KeywordCorpusSpec::default_filler_words")]
    pub filler_words: usize,
    /// Topic tokens per document.
    #[serde(default = "KeywordCorpusSpec::default_topic_tokens")]
    pub topic_tokens: usize,
    /// Filler tokens per document.
    #[serde(default = "KeywordCorpusSpec::default_filler_tokens")]
    pub filler_tokens: usize,
    /// Document-unique tokens per document.
    #[serde(default = "KeywordCorpusSpec::default_unique_tokens")]
    pub unique_tokens: usize,
}

impl KeywordCorpusSpec {
    pub fn new(k: usize, n: usize, trap_rate: f64, seed: u64) -> Self {
        KeywordCorpusSpec {
            k,
            n,
            trap_rate,
            seed,
            topic_words: Self::default_topic_words(),
            filler_words: Self::default_filler_words(),
            topic_tokens: Self::default_topic_tokens(),
            filler_tokens: Self::default_filler_tokens(),
            unique_tokens: Self::default_unique_tokens(),
        }
    }

    fn default_topic_words() -> usize {
        40
    }
    fn default_filler_words() -> usize {
        400
    }
    fn default_topic_tokens() -> usize {
        4
    }
    fn default_filler_tokens() -> usize {
        8
    }
    fn default_unique_tokens() -> usize {
        3
    }

    pub fn trap_keyword(class: Label) -> String {
        format!("trap{class}")
    }
}

#[derive(Debug, Clone)]
pub struct KeywordCorpus {
    /// Texts with clean labels; not featurised.
    pub dataset: Dataset,
    /// `(keyword, class)` pairs mapping each trap keyword to its wrong class.
    pub keywords: Vec<(String, Label)>,
}

pub fn keyword_corpus(spec: &KeywordCorpusSpec) -> Result<KeywordCorpus> {
    let k = spec.k;
    if k < 2 {
        return Err(Error::Domain(format!("class count must be >= 2, got {k}")));
    }
    if spec.n < k {
        return Err(Error::Size(format!("need n >= k, got n={}, k={k}", spec.n)));
    }
    if !(0.0..=1.0).contains(&spec.trap_rate) {
        return Err(Error::Domain(format!(
            "trap_rate must be in [0, 1], got {}",
            spec.trap_rate
        )));
    }
    if spec.topic_words == 0 || spec.filler_words == 0 {
        return Err(Error::Config("vocabulary sizes must be positive".into()));
    }
    let mut examples = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = i % k;
        let mut r = rng::child(spec.seed, rng::TAG_SYNTH, i as u64);
        let mut words: Vec<String> = Vec::new();
        for _ in 0..spec.topic_tokens {
            words.push(format!("t{y}w{}", r.gen_range(0..spec.topic_words)));
        }
        for _ in 0..spec.filler_tokens {
            words.push(format!("f{}", r.gen_range(0..spec.filler_words)));
        }
        for j in 0..spec.unique_tokens {
            words.push(format!("u{i}x{j}"));
        }
        if r.gen_bool(spec.trap_rate) {
            words.push(KeywordCorpusSpec::trap_keyword(y));
        }
        words.shuffle(&mut r);
        examples.push(Example::new(format!("doc-{i:06}"), words.join(" ")));
        labels.push(y);
    }
    let keywords = (0..k)
        .map(|c| (KeywordCorpusSpec::trap_keyword(c), (c + 1) % k))
        .collect();
    Ok(KeywordCorpus {
        dataset: Dataset::new(examples, k, Some(labels), None)?,
        keywords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| Example::new(format!("e{i}"), format!("text number {i}")))
            .collect();
        let clean = (0..n).map(|i| i % 3).collect();
        let noisy = (0..n).map(|i| (i + 1) % 3).collect();
        Dataset::new(examples, 3, Some(clean), Some(noisy)).unwrap()
    }

    #[test]
    fn load_clean_only() {
        let src = r#"{"id":"a","text":"x y","clean_label":0}
{"id":"b","text":"y z","clean_label":1}
{"id":"c","text":"z","clean_label":2}
"#;
        let ds = read_jsonl(src.as_bytes(), Path::new("mem"), 3).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.clean_labels(), Some(&[0, 1, 2][..]));
        assert!(ds.noisy_labels().is_none());
    }

    #[test]
    fn load_label_out_of_range_names_id() {
        let src = r#"{"id":"ok","text":"x","clean_label":1}
{"id":"bad-one","text":"x","clean_label":7}
"#;
        let err = read_jsonl(src.as_bytes(), Path::new("mem"), 5).unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("bad-one")), "{err}");
    }

    #[test]
    fn load_malformed_reports_line() {
        let src = "{\"id\":\"a\",\"text\":\"x\",\"clean_label\":0}\n{not json}\n";
        match read_jsonl(src.as_bytes(), Path::new("mem"), 2).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn load_rejects_partial_label_columns() {
        let src = r#"{"id":"a","text":"x","clean_label":0}
{"id":"b","text":"x","noisy_label":0}
"#;
        assert!(matches!(
            read_jsonl(src.as_bytes(), Path::new("mem"), 2),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_writer_key_order() {
        let mut buf = Vec::new();
        to_jsonl(&toy(1), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"id\":\"e0\",\"text\":\"text number 0\",\"clean_label\":0,\"noisy_label\":1}\n"
        );
    }

    #[test]
    fn jsonl_round_trip_file() {
        let ds = toy(10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&ds, &p).unwrap();
        let back = load_jsonl(&p, 3).unwrap();
        assert_eq!(back, ds);
        for (i, ex) in back.examples().iter().enumerate() {
            assert_eq!(ex.id, format!("e{i}"));
            assert_eq!(back.clean_labels().unwrap()[i], i % 3);
            assert_eq!(back.noisy_labels().unwrap()[i], (i + 1) % 3);
        }
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let ex = vec![Example::new("a", "x"), Example::new("a", "y")];
        assert!(matches!(
            Dataset::new(ex, 2, Some(vec![0, 1]), None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split(&toy(10), &SplitSpec::new(0.8, 0.1, 0.1, 1).unwrap()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a, b, c) = split(&toy(100), &SplitSpec::new(0.9, 0.1, 0.0, 1).unwrap()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (90, 10, 0));
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 1).unwrap();
        assert_eq!(split(&toy(10), &spec).unwrap(), split(&toy(10), &spec).unwrap());
    }

    #[test]
    fn split_too_small() {
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 1).unwrap();
        assert!(matches!(split(&toy(5), &spec), Err(Error::Size(_))));
    }

    #[test]
    fn split_spec_must_sum_to_one() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.1, -0.1, 0.0, 0).is_err());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Lagos, ABUJA!  kano"), vec!["lagos", "abuja", "kano"]);
    }

    #[test]
    fn featurize_rejects_non_power_of_two() {
        assert!(matches!(featurize(&toy(2), 1000), Err(Error::Config(_))));
    }

    #[test]
    fn featurize_unit_norm_and_deterministic() {
        let a = featurize(&toy(5), 1 << 10).unwrap();
        let b = featurize(&toy(5), 1 << 10).unwrap();
        assert_eq!(a, b);
        for ex in a.examples() {
            assert!((ex.features().unwrap().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn featurize_bigram_order_matters() {
        // Independent recomputation with the same FNV parameters.
        fn h(s: &str) -> u64 {
            let mut x: u64 = 14695981039346656037;
            for b in s.as_bytes() {
                x ^= *b as u64;
                x = x.wrapping_mul(1099511628211);
            }
            x
        }
        let dims = 1usize << 16;
        let m = (dims - 1) as u64;
        let ab = hash_features("a b", dims).unwrap();
        let ba = hash_features("b a", dims).unwrap();
        let mut expect_ab = vec![h("a") & m, h("b") & m, h("a b") & m];
        let mut expect_ba = vec![h("a") & m, h("b") & m, h("b a") & m];
        expect_ab.sort();
        expect_ba.sort();
        let got_ab: Vec<u64> = ab.indices.iter().map(|&i| i as u64).collect();
        let got_ba: Vec<u64> = ba.indices.iter().map(|&i| i as u64).collect();
        assert_eq!(got_ab, expect_ab);
        assert_eq!(got_ba, expect_ba);
        assert_ne!(ab, ba);
        let w = 1.0 / 3f64.sqrt();
        assert!(ab.values.iter().all(|v| (v - w).abs() < 1e-15));
    }

    #[test]
    fn synth_deterministic_and_balanced() {
        let a = synth_dataset(3, 30, 0.8, 5).unwrap();
        assert_eq!(a, synth_dataset(3, 30, 0.8, 5).unwrap());
        assert_ne!(a, synth_dataset(3, 30, 0.8, 6).unwrap());
        let counts = a.clean_labels().unwrap().iter().fold([0; 3], |mut c, &y| {
            c[y] += 1;
            c
        });
        assert_eq!(counts, [10, 10, 10]);
    }

    #[test]
    fn synth_margin_one_is_prototype() {
        let ds = synth_dataset(2, 10, 1.0, 1).unwrap();
        let f = |i: usize| ds.examples()[i].features().unwrap().clone();
        assert_eq!(f(0), f(2));
        assert_ne!(f(0), f(1));
    }

    #[test]
    fn synth_rejects_bad_inputs() {
        assert!(synth_dataset(4, 3, 0.5, 0).is_err());
        assert!(synth_dataset(2, 10, 0.0, 0).is_err());
        assert!(synth_dataset(2, 10, 1.5, 0).is_err());
    }

    #[test]
    fn keyword_corpus_plants_traps() {
        let c = keyword_corpus(&KeywordCorpusSpec::new(4, 4000, 0.3, 3)).unwrap();
        let with_trap = c
            .dataset
            .examples()
            .iter()
            .filter(|e| tokenize(&e.text).iter().any(|t| t.starts_with("trap")))
            .count();
        let rate = with_trap as f64 / 4000.0;
        assert!((rate - 0.3).abs() < 0.03, "{rate}");
        assert_eq!(c.keywords[3], ("trap3".to_string(), 0));
    }
}
