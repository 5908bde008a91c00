//! Experiment configuration schema. Configs are strict JSON: unknown keys
//! are rejected before any compute starts.

use lora_dyn_core::adapters::{InitKind, InitSpec};
use lora_dyn_core::optim::{OptimKind, OptimSpec};
use lora_dyn_core::synth::{DataDist, ModelKind, PreWeight, ProblemConfig, Spectrum, TeacherSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimSection>,
    /// Multi-method runs (one CSV per method per seed); when present the
    /// top-level init/optim are optional defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<MethodSection>>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub outputs: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Verification metadata: what the bound check is expected to report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Holds,
    Violation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub model: ModelField,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub r_star: usize,
    pub spectrum: SpectrumField,
    #[serde(default)]
    pub data_dist: DataDistField,
    #[serde(default)]
    pub pre_weight: PreWeightField,
    #[serde(default)]
    pub population_covariance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_signal_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelField {
    Linear,
    Relu,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumField {
    Values(Vec<f64>),
    Geometric { kappa: f64, lambda_min: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataDistField {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreWeightField {
    Zero,
    Gaussian,
    Sphere { radius: f64 },
}

impl Default for PreWeightField {
    fn default() -> Self {
        PreWeightField::Gaussian
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub kind: InitKindField,
    pub rank: usize,
    /// Random-init standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Spectral scale (theory convention).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Normalize the singular values by the top one before scaling.
    #[serde(default)]
    pub normalize_top: bool,
    /// Shipped-algorithm scale parameter; gamma = 1 / scale_s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_s: Option<f64>,
    /// Rows of the data used for the init gradient (full batch when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_batch: Option<usize>,
    /// Offset-baseline stability constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_c: Option<f64>,
    /// Offset-baseline alpha; the effective multiplier is alpha / sqrt(r).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora_alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKindField {
    LoraRandom,
    Spectral,
    LoraGa,
    LoraSb,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub kind: OptimKindField,
    pub eta: f64,
    pub steps: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub use_pinv: bool,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_risk: Option<f64>,
}

fn default_true() -> bool {
    true
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-8
}
fn default_divergence() -> f64 {
    1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKindField {
    Gd,
    PrecGd,
    PrecGdSmoothed,
    Adamw,
    PrecAdamw,
    FullFtGd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    pub init: InitSection,
    pub optim: OptimSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Axis path (e.g. "init.alpha", "optim.eta", "problem.kappa") to the
    /// list of values the cross-product ranges over.
    pub axes: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            serde_json::from_slice(bytes).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError("at least one seed is required".into()));
        }
        if self.methods.is_none() && (self.init.is_none() || self.optim.is_none()) {
            return Err(ConfigError("either methods or both init and optim must be given".into()));
        }
        if let Some(ms) = &self.methods {
            if ms.is_empty() {
                return Err(ConfigError("methods must be non-empty when present".into()));
            }
            for m in ms {
                m.init.to_core().map_err(|e| ConfigError(format!("method {}: {e}", m.name)))?;
            }
        }
        if let Some(init) = &self.init {
            init.to_core()?;
        }
        self.problem.to_core(0).map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    /// The runs this config describes: (label, init, optim) triples.
    pub fn method_list(&self) -> Result<Vec<(String, InitSpec<f64>, OptimSpec<f64>)>, ConfigError> {
        if let Some(ms) = &self.methods {
            ms.iter()
                .map(|m| Ok((m.name.clone(), m.init.to_core()?, m.optim.to_core())))
                .collect()
        } else {
            let init = self.init.as_ref().expect("validated").to_core()?;
            let optim = self.optim.as_ref().expect("validated").to_core();
            Ok(vec![(String::new(), init, optim)])
        }
    }
}

impl ProblemSection {
    /// Core problem config; geometric spectra need the count = r_star.
    pub fn to_core(&self, _seed: u64) -> Result<ProblemConfig<f64>, ConfigError> {
        let spectrum = match &self.spectrum {
            SpectrumField::Values(v) => {
                Spectrum::new(v.clone()).map_err(|e| ConfigError(e.to_string()))?
            }
            SpectrumField::Geometric { kappa, lambda_min } => {
                Spectrum::geometric(*kappa, *lambda_min, self.r_star)
                    .map_err(|e| ConfigError(e.to_string()))?
            }
        };
        Ok(ProblemConfig {
            model_kind: match self.model {
                ModelField::Linear => ModelKind::Linear,
                ModelField::Relu => ModelKind::Relu,
            },
            d: self.d,
            k: self.k,
            n: self.n,
            r_star: self.r_star,
            spectrum,
            data_dist: match self.data_dist {
                DataDistField::Gaussian => DataDist::Gaussian,
                DataDistField::Rademacher => DataDist::Rademacher,
            },
            pre_weight: match self.pre_weight {
                PreWeightField::Zero => PreWeight::Zero,
                PreWeightField::Gaussian => PreWeight::Gaussian,
                PreWeightField::Sphere { radius } => PreWeight::SphereColumns { radius },
            },
            population_covariance: self.population_covariance,
            teacher: self.teacher_signal_ratio.map(|signal_ratio| TeacherSpec { signal_ratio }),
            covariance_gap: self.covariance_gap,
        })
    }
}

impl InitSection {
    pub fn to_core(&self) -> Result<InitSpec<f64>, ConfigError> {
        let kind = match self.kind {
            InitKindField::LoraRandom => {
                let alpha =
                    self.alpha.ok_or_else(|| ConfigError("lora_random needs alpha".into()))?;
                InitKind::LoraRandom { alpha }
            }
            InitKindField::Spectral => {
                let gamma = match (self.gamma, self.scale_s) {
                    (Some(g), None) => g,
                    (None, Some(s)) => {
                        if s <= 0.0 {
                            return Err(ConfigError("scale_s must be positive".into()));
                        }
                        1.0 / s
                    }
                    (Some(_), Some(_)) => {
                        return Err(ConfigError("give either gamma or scale_s, not both".into()))
                    }
                    (None, None) => return Err(ConfigError("spectral init needs gamma or scale_s".into())),
                };
                InitKind::Spectral { gamma, normalize_top: self.normalize_top, grad_batch: self.grad_batch }
            }
            InitKindField::LoraGa => {
                let stable_c =
                    self.stable_c.ok_or_else(|| ConfigError("lora_ga needs stable_c".into()))?;
                let lora_alpha = self.lora_alpha.unwrap_or((self.rank as f64).sqrt());
                InitKind::LoraGa { stable_c, lora_alpha, grad_batch: self.grad_batch }
            }
            InitKindField::LoraSb => InitKind::LoraSb { grad_batch: self.grad_batch },
        };
        Ok(InitSpec { rank: self.rank, kind })
    }
}

impl OptimSection {
    pub fn to_core(&self) -> OptimSpec<f64> {
        let kind = match self.kind {
            OptimKindField::Gd => OptimKind::Gd,
            OptimKindField::PrecGd => OptimKind::PrecGd,
            OptimKindField::PrecGdSmoothed => OptimKind::PrecGdSmoothed,
            OptimKindField::Adamw => OptimKind::AdamW,
            OptimKindField::PrecAdamw => OptimKind::PrecAdamW,
            OptimKindField::FullFtGd => OptimKind::FullFtGd,
        };
        let mut spec = OptimSpec::new(kind, self.eta, self.steps);
        spec.lambda = self.lambda;
        spec.use_pinv = self.use_pinv;
        spec.beta1 = self.beta1;
        spec.beta2 = self.beta2;
        spec.eps_adam = self.eps_adam;
        spec.weight_decay = self.weight_decay;
        spec.divergence_threshold = self.divergence_threshold;
        spec.stop_risk = self.stop_risk;
        spec
    }
}

/// FNV-1a over the canonical serialized config; the summary JSON carries it
/// so re-runs can be matched to their inputs.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
