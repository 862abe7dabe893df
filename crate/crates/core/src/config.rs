//! Run configuration: one TOML document describing a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::ModelConfig;
use crate::error::{Error, Result};
use crate::eval;
use crate::mla::{SamplerConfig, Schedule};
use crate::rfm::{ObjectiveConfig, TrainConfig};
use crate::rng;
use crate::state::{self, generate_toy_dataset, MixedState, PriorSpec, ToyDataset};
use crate::steer::ShapePotential;
use crate::tempering::{Ladder, LadderConfig};

/// Stream id for dataset generation, kept apart from the training streams.
const DATASET_STREAM: u64 = 0xda7a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Isotropic,
    PcaMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Only used by the isotropic prior.
    pub sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kind: PriorKind::PcaMatched,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub templates: Vec<String>,
    pub jitter: f64,
    pub count: usize,
    pub n_types: usize,
    /// XYZ file to load instead of generating from templates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub prior: PriorConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            templates: vec!["dumbbell".into()],
            jitter: 0.05,
            count: 256,
            n_types: 2,
            path: None,
            prior: PriorConfig::default(),
        }
    }
}

/// Single-chain samplers (FWDE, ALD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainsConfig {
    pub steps: usize,
    pub schedule: Schedule,
}

impl Default for ChainsConfig {
    fn default() -> Self {
        ChainsConfig {
            steps: 1000,
            schedule: Schedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Pt,
    Fwde,
    Ald,
}

impl std::str::FromStr for SampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pt" => Ok(SampleMethod::Pt),
            "fwde" => Ok(SampleMethod::Fwde),
            "ald" => Ok(SampleMethod::Ald),
            _ => Err(Error::config("sample.method", format!("unknown sampler `{s}` (pt, fwde, ald)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub count: usize,
    pub method: SampleMethod,
    /// Sample from the raw parameters instead of the EMA copy.
    pub raw: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            count: 100,
            method: SampleMethod::Pt,
            raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    pub attempts: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig { attempts: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub relax_steps: usize,
    pub relax_eta: f64,
    pub t_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub n_molecules: usize,
    pub noise_draws: usize,
    /// Pairwise-distance band for the W2 metric.
    pub band: [f64; 2],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            relax_steps: eval::RELAX_TEST_STEPS,
            relax_eta: eval::RELAX_TEST_ETA,
            t_grid: eval::default_t_grid(),
            sigma_grid: eval::default_sigma_grid(),
            n_molecules: 64,
            noise_draws: 8,
            band: [0.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub training: TrainConfig,
    pub sampler: SamplerConfig,
    pub ladder: LadderConfig,
    pub chains: ChainsConfig,
    pub sample: SampleConfig,
    pub dataset: DatasetConfig,
    pub steering: ShapePotential,
    pub inpaint: InpaintConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parse and validate. Errors carry the dotted path of the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." || path.is_empty() { "config".to_string() } else { path };
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_toml(&text)
    }

    /// The fully resolved document; parsing it back yields `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.model.n_types;
        self.model.validate()?;
        if self.dataset.n_types != k {
            return Err(Error::config(
                "dataset.n_types",
                format!("K = {} disagrees with model.n_types = {k}", self.dataset.n_types),
            ));
        }
        self.objective.validate()?;
        self.training.validate()?;
        self.sampler.validate(k)?;
        self.ladder.validate()?;
        self.chains.schedule.validate()?;
        self.steering.validate()?;
        let d = &self.dataset;
        if d.path.is_none() {
            if d.count == 0 {
                return Err(Error::config("dataset.count", "must be >= 1"));
            }
            ToyDataset::from_names(&d.templates, d.jitter, k)?;
        }
        if !(d.prior.sigma >= 0.0) || !d.prior.sigma.is_finite() {
            return Err(Error::config("dataset.prior.sigma", "must be finite and >= 0"));
        }
        if self.sample.count == 0 {
            return Err(Error::config("sample.count", "must be >= 1"));
        }
        if self.inpaint.attempts == 0 {
            return Err(Error::config("inpaint.attempts", "must be >= 1"));
        }
        let e = &self.eval;
        if e.n_molecules == 0 || e.noise_draws == 0 {
            return Err(Error::config("eval.n_molecules", "n_molecules and noise_draws must be >= 1"));
        }
        if e.t_grid.len() < 3 || e.t_grid.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return Err(Error::config("eval.t_grid", "need at least 3 points in [-1, 1]"));
        }
        if e.sigma_grid.is_empty() || e.sigma_grid.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("eval.sigma_grid", "need nonnegative noise levels"));
        }
        if !(e.band[0] <= e.band[1]) {
            return Err(Error::config("eval.band", "need lo <= hi"));
        }
        Ok(())
    }

    /// The training molecules: loaded from `dataset.path` or generated from
    /// the templates with a seed-derived stream.
    pub fn load_dataset(&self) -> Result<Vec<MixedState>> {
        let d = &self.dataset;
        if let Some(p) = &d.path {
            if !p.is_file() {
                return Err(Error::config("dataset.path", format!("no such file: {}", p.display())));
            }
            let data = state::load_xyz(p, d.n_types)?;
            if data.is_empty() {
                return Err(Error::config("dataset.path", "file holds no molecules"));
            }
            return Ok(data.iter().map(state::center).collect());
        }
        let ds = ToyDataset::from_names(&d.templates, d.jitter, d.n_types)?;
        generate_toy_dataset(&ds, d.count, &mut rng::stream(self.seed, DATASET_STREAM))
    }

    pub fn prior(&self, data: &[MixedState]) -> Result<PriorSpec> {
        match self.dataset.prior.kind {
            PriorKind::Isotropic => Ok(PriorSpec::isotropic(self.dataset.prior.sigma, self.dataset.n_types)),
            PriorKind::PcaMatched => PriorSpec::pca_matched(data, self.dataset.n_types),
        }
    }

    pub fn ladder(&self) -> Result<Ladder> {
        Ladder::from_config(&self.ladder)
    }
}
