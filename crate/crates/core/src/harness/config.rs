//! Declarative sweep configuration (TOML).
//!
//! ```toml
//! name = "gmm-reference"
//! methods = ["pillar"]
//! backend = "rdp-dpsgd"
//! k = [2, 50]
//! epsilon = [0.1, inf]
//! seeds = [0, 1, 2]
//!
//! [data]
//! type = "gmm"
//! d = 50
//! scale_c = 5.0
//! n = 2778
//!
//! [optimizer]
//! learning_rates = [0.1]
//! steps = [3000]
//! batch_sizes = [128]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PrivacyMode;
use crate::error::{Error, Result};
use crate::mechanisms::FormulaVariant;
use crate::optim::{BatchSampling, BudgetSplit, DEFAULT_CLIP_NORM, DEFAULT_DELTA};
use crate::pipeline::LossKind;
use crate::synth::{GmmSpec, Normalization};

use super::features::FeatureFormat;
use super::results::ResultFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Public-data PCA projection followed by private training.
    Pillar,
    /// Private training in the full input dimension.
    DpsgdFull,
    /// Gaussian random projection followed by private training.
    JlDpsgd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pillar => "pillar",
            Method::DpsgdFull => "dpsgd-full",
            Method::JlDpsgd => "jl-dpsgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Gmm {
        d: usize,
        /// Either `theta` and `sigma2`, or `scale_c` for `θ = σ² = 1/(2c sqrt(d))`.
        theta: Option<f64>,
        sigma2: Option<f64>,
        scale_c: Option<f64>,
        /// Points drawn per seed, before the test/public/private splits.
        n: usize,
        #[serde(default)]
        normalization: Normalization,
        /// Draw `μ, w̃` at random from this seed instead of `e₁, e₂`.
        direction_seed: Option<u64>,
    },
    Features {
        path: PathBuf,
        format: Option<FeatureFormat>,
        /// Two classes for a one-vs-one task on a multiclass file.
        classes: Option<[i64; 2]>,
    },
}

impl DataSource {
    pub fn gmm_spec(&self) -> Result<Option<GmmSpec>> {
        let DataSource::Gmm {
            d,
            theta,
            sigma2,
            scale_c,
            direction_seed,
            ..
        } = self
        else {
            return Ok(None);
        };
        let (theta, sigma2) = match (theta, sigma2, scale_c) {
            (Some(t), Some(s), None) => (*t, *s),
            (None, None, Some(c)) => {
                let v = 1.0 / (2.0 * c * (*d as f64).sqrt());
                (v, v)
            }
            _ => {
                return Err(Error::Config(
                    "gmm data needs either theta and sigma2, or scale_c".into(),
                ))
            }
        };
        let spec = match direction_seed {
            Some(s) => GmmSpec::random_directions(*d, theta, sigma2, &mut crate::rng::Rng::new(*s)),
            None => GmmSpec::new(*d, theta, sigma2),
        }
        .map_err(|e| Error::Config(format!("gmm spec: {e}")))?;
        Ok(Some(spec))
    }

    pub fn id(&self) -> String {
        match self {
            DataSource::Gmm { d, .. } => format!("gmm-d{d}"),
            DataSource::Features { path, classes, .. } => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
                match classes {
                    Some([a, b]) => format!("{stem}-{a}v{b}"),
                    None => stem.to_string(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSetting {
    Fraction(f64),
    Named(NamedSplit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedSplit {
    PaperLiteral,
}

impl SplitSetting {
    pub fn to_split(self) -> BudgetSplit {
        match self {
            SplitSetting::Fraction(f) => BudgetSplit::Fraction(f),
            SplitSetting::Named(NamedSplit::PaperLiteral) => BudgetSplit::PaperLiteral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerGrid {
    pub learning_rates: Vec<f64>,
    pub steps: Vec<u64>,
    pub batch_sizes: Vec<usize>,
    pub clip_norm: f64,
    pub loss: LossKind,
    pub sampling: BatchSampling,
    pub formula_variant: FormulaVariant,
    pub budget_split: SplitSetting,
    /// Upper limit on noisy-SGD steps.
    pub step_cap: u64,
    /// Full-batch gradient descent, used when ε is infinite.
    pub gd_steps: u64,
    pub gd_learning_rate: f64,
}

impl Default for OptimizerGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1],
            steps: vec![3000],
            batch_sizes: vec![128],
            clip_norm: DEFAULT_CLIP_NORM,
            loss: LossKind::ScaledHinge,
            sampling: BatchSampling::Poisson,
            formula_variant: FormulaVariant::PaperLiteral,
            budget_split: SplitSetting::Fraction(0.5),
            step_cap: crate::optim::DEFAULT_STEP_CAP,
            gd_steps: 1000,
            gd_learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    pub format: Option<ResultFormat>,
}

fn inf_or_positive<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Eps {
        Num(f64),
        Text(String),
    }
    let raw: Vec<Eps> = Vec::deserialize(d)?;
    raw.into_iter()
        .map(|e| match e {
            Eps::Num(v) => Ok(v),
            Eps::Text(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            Eps::Text(s) => Err(serde::de::Error::custom(format!("bad epsilon {s:?}"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub data: DataSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Private optimizer used for finite ε.
    #[serde(default = "default_backend")]
    pub backend: PrivacyMode,
    pub k: Vec<usize>,
    /// Privacy levels; `inf` means non-private training.
    #[serde(deserialize_with = "inf_or_positive")]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Fractions of the private part that keep their labels.
    #[serde(default = "default_labeled_fractions")]
    pub labeled_fractions: Vec<f64>,
    #[serde(default = "default_public_fraction")]
    pub public_fraction: f64,
    /// Held-out share of the labelled data, split per class.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default)]
    pub xi0: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub optimizer: OptimizerGrid,
    /// Softmax training on all classes of a feature file.
    #[serde(default)]
    pub multiclass: bool,
    /// Record wall-clock time per cell; off keeps outputs byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Pillar]
}
fn default_backend() -> PrivacyMode {
    PrivacyMode::RdpDpsgd
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_labeled_fractions() -> Vec<f64> {
    vec![1.0]
}
fn default_public_fraction() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_gamma0() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.1
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn dataset_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.data.id())
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() || self.k.is_empty() || self.epsilon.is_empty() || self.seeds.is_empty() {
            return bad("methods, k, epsilon and seeds must be non-empty".into());
        }
        if self.labeled_fractions.is_empty() {
            return bad("labeled_fractions must be non-empty".into());
        }
        let o = &self.optimizer;
        if o.learning_rates.is_empty() || o.steps.is_empty() || o.batch_sizes.is_empty() {
            return bad("optimizer grids must be non-empty".into());
        }
        if self.k.contains(&0) {
            return bad("k values must be >= 1".into());
        }
        if let Some(d) = self.declared_dim() {
            if let Some(k) = self.k.iter().find(|k| **k > d) {
                return bad(format!("k = {k} exceeds the data dimension {d}"));
            }
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(**e > 0.0)) {
            return bad(format!("epsilon {e} must be positive or inf"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} not in (0, 1)", self.delta));
        }
        if let Some(f) = self.labeled_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("labeled fraction {f} not in (0, 1]"));
        }
        if !(self.public_fraction > 0.0 && self.public_fraction < 1.0) {
            return bad(format!("public fraction {} not in (0, 1)", self.public_fraction));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test fraction {} not in (0, 1)", self.test_fraction));
        }
        if self.backend == PrivacyMode::NonPrivate {
            return bad("backend must be a private optimizer; use epsilon = inf for non-private runs".into());
        }
        if !(o.clip_norm > 0.0) || o.learning_rates.iter().any(|v| !(*v > 0.0)) {
            return bad("clip norm and learning rates must be positive".into());
        }
        if o.steps.contains(&0) || o.batch_sizes.contains(&0) || o.gd_steps == 0 {
            return bad("step counts and batch sizes must be >= 1".into());
        }
        if self.multiclass && !matches!(self.data, DataSource::Features { classes: None, .. }) {
            return bad("multiclass runs need a feature file without a class pair".into());
        }
        self.data.gmm_spec()?;
        Ok(())
    }

    fn declared_dim(&self) -> Option<usize> {
        match self.data {
            DataSource::Gmm { d, .. } => Some(d),
            DataSource::Features { .. } => None,
        }
    }
}
