//! Experiment configuration files (TOML).
//!
//! ```toml
//! trials = 5
//! output_dir = "runs/synth40"
//!
//! [data]
//! source = "synth"
//! k = 4
//! n = 4000
//! margin = 0.3
//! seed = 11
//!
//! [noise]
//! type = "uniform"
//! level = 0.4
//! seed = 12
//!
//! [split]
//! train = 0.8
//! val = 0.1
//! test = 0.1
//! seed = 13
//!
//! [train]
//! lr = 0.5
//! seed = 100   # trial t trains with seed 100 + t
//!
//! [[strategies]]
//! name = "WN"
//!
//! [[strategies]]
//! name = "NMwR"
//! lambda = 0.001
//! ```
//!
//! Unknown keys anywhere in the file are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use noisylab_core::data::{SynthSpec, DEFAULT_DIMS};
use noisylab_core::strategies::{DEFAULT_LS_ALPHA, DEFAULT_RAMP_EPOCHS};
use noisylab_core::{Label, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default root for sweep outputs.
pub const OUTPUT_ROOT_ENV: &str = "NOISYLAB_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub strategies: Vec<StrategySpec>,
}

fn default_split() -> SplitSpec {
    SplitSpec {
        train: 0.8,
        val: 0.1,
        test: 0.1,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    /// JSONL files. Without `val` and `test`, `train` is split by `[split]`.
    Files {
        k: usize,
        train: PathBuf,
        #[serde(default)]
        val: Option<PathBuf>,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_dims")]
        dims: usize,
    },
    Synth(SynthSpec),
    /// Generated corpus with class-flipping trap keywords.
    Keywords {
        k: usize,
        n: usize,
        trap_rate: f64,
        seed: u64,
        #[serde(default = "default_dims")]
        dims: usize,
    },
}

fn default_dims() -> usize {
    DEFAULT_DIMS
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Keep the noisy labels of the input, or train on clean labels if there are none.
    #[default]
    None,
    Uniform {
        level: f64,
        #[serde(default)]
        seed: u64,
    },
    Sflip {
        level: f64,
        /// Defaults to the cyclic map i -> i+1 mod k.
        #[serde(default)]
        flip_map: Option<Vec<Label>>,
        #[serde(default)]
        seed: u64,
    },
    Matrix {
        path: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    Rules {
        /// JSONL of `{"keyword": str, "class": int}`; omit for a keyword
        /// corpus to use its own trap keywords.
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "yes")]
        abstain_to_clean: bool,
    },
}

fn yes() -> bool {
    true
}

/// Where NMat takes its transition matrix from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixSource {
    /// Counted from the clean and noisy training labels.
    #[default]
    Estimated,
    /// The matrix used to inject the noise.
    Generator,
    /// A CSV file.
    #[serde(untagged)]
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum StrategySpec {
    WN {
        #[serde(default)]
        label: Option<String>,
    },
    NV {
        #[serde(default)]
        label: Option<String>,
    },
    NMat {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        matrix: MatrixSource,
    },
    NMwR {
        #[serde(default)]
        label: Option<String>,
        lambda: f64,
    },
    CT {
        #[serde(default)]
        label: Option<String>,
        /// Defaults to the realised noise rate of the training labels.
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default = "default_ramp")]
        ramp_epochs: usize,
    },
    LS {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn default_ramp() -> usize {
    DEFAULT_RAMP_EPOCHS
}

fn default_alpha() -> f64 {
    DEFAULT_LS_ALPHA
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::WN { .. } => "WN",
            StrategySpec::NV { .. } => "NV",
            StrategySpec::NMat { .. } => "NMat",
            StrategySpec::NMwR { .. } => "NMwR",
            StrategySpec::CT { .. } => "CT",
            StrategySpec::LS { .. } => "LS",
        }
    }

    /// Name of the run directory: the explicit label, else the strategy name.
    pub fn label(&self) -> &str {
        let label = match self {
            StrategySpec::WN { label }
            | StrategySpec::NV { label }
            | StrategySpec::NMat { label, .. }
            | StrategySpec::NMwR { label, .. }
            | StrategySpec::CT { label, .. }
            | StrategySpec::LS { label, .. } => label,
        };
        label.as_deref().unwrap_or(self.name())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg.relative_to(path.parent().unwrap_or(Path::new(""))))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.strategies.is_empty() {
            bail!("no strategies configured");
        }
        let mut labels: Vec<&str> = self.strategies.iter().map(|s| s.label()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            bail!("strategy label {:?} is used twice; give one of them a `label`", w[0]);
        }
        for l in &labels {
            if l.is_empty() || l.contains(['/', '\\']) || *l == "." || *l == ".." {
                bail!("strategy label {l:?} is not usable as a directory name");
            }
        }
        self.split.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Resolve relative file paths against `base` (the config file's directory).
    fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSpec::Files { train, val, test, .. } = &mut self.data {
            fix(train);
            val.as_mut().map(fix);
            test.as_mut().map(fix);
        }
        match &mut self.noise {
            NoiseSpec::Matrix { path, .. } => fix(path),
            NoiseSpec::Rules { path: Some(p), .. } => fix(p),
            _ => {}
        }
        for s in &mut self.strategies {
            if let StrategySpec::NMat {
                matrix: MatrixSource::Path(p),
                ..
            } = s
            {
                fix(p);
            }
        }
        self
    }

    /// Output directory: explicit override, then `output_dir`, then the
    /// config's file stem under `$NOISYLAB_OUTPUT_ROOT` (default `runs`).
    pub fn output_dir(&self, config_path: &Path, over: Option<&Path>) -> PathBuf {
        if let Some(p) = over {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        let stem = config_path.file_stem().unwrap_or_default();
        root.join(stem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
trials = 2
[data]
source = "synth"
k = 3
n = 90
margin = 0.5
seed = 1
[[strategies]]
name = "WN"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.noise, NoiseSpec::None);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.strategies[0].label(), "WN");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["typo = 1\n", "[train]\nlearning_rate = 0.1\n"] {
            let text = format!("{extra}{MINIMAL}");
            assert!(toml::from_str::<ExperimentConfig>(&text).is_err(), "{extra}");
        }
        let text = MINIMAL.replace("seed = 1", "seed = 1\nmargn = 0.2");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        let text = format!("{MINIMAL}[[strategies]]\nname = \"LS\"\nalpah = 0.2\n");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = format!("{MINIMAL}[[strategies]]\nname = \"WN\"\n");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
        let text = format!("{MINIMAL}[[strategies]]\nname = \"WN\"\nlabel = \"WN-b\"\n");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn nmat_matrix_sources() {
        for (v, want) in [
            ("\"estimated\"", MatrixSource::Estimated),
            ("\"generator\"", MatrixSource::Generator),
            ("\"t.csv\"", MatrixSource::Path("t.csv".into())),
        ] {
            let text = format!("{MINIMAL}[[strategies]]\nname = \"NMat\"\nmatrix = {v}\n");
            let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
            match &cfg.strategies[1] {
                StrategySpec::NMat { matrix, .. } => assert_eq!(matrix, &want),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        let cfg: ExperimentConfig = toml::from_str(&MINIMAL.replace("trials = 2", "trials = 0")).unwrap();
        assert!(cfg.validate().is_err());
    }
}
