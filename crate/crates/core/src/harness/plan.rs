use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::images::{procedural_image, ImageSetSpec};
use crate::error::{Error, Result};
use crate::immunize::{Method, TdaeConfig, TpaSettings};
use crate::models::{build_model, ModelFamilySpec, Surrogate};
use crate::ndtensor::Tensor;

/// Version of every report layout the harness writes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const EMBED_STREAM: u64 = 7;

/// Neighbourhood sampled by the flatness probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessSpec {
    /// `L_inf` radius around the final perturbation.
    pub radius: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for FlatnessSpec {
    fn default() -> Self {
        Self {
            radius: 0.01,
            draws: 64,
            seed: 7,
        }
    }
}

/// Everything needed to regenerate an experiment.
///
/// Trial `i` uses the trial seed `seed + i`. Model seeds in `source` and
/// `targets` are offsets: trial seed `t` instantiates each family with seed
/// `spec.seed + t`, so every trial sees fresh but reproducible models. The
/// image set is shared by all trials unless `fresh_images` is set, in which
/// case trial `i` uses scenes `i * count .. (i + 1) * count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub source: ModelFamilySpec,
    #[serde(default)]
    pub targets: Vec<ModelFamilySpec>,
    #[serde(default)]
    pub images: ImageSetSpec,
    #[serde(default)]
    pub fresh_images: bool,
    #[serde(default)]
    pub config: TdaeConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_baseline")]
    pub baseline: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Embedding entries are uniform in `[-scale, scale]`.
    #[serde(default = "default_embedding_scale")]
    pub embedding_scale: f64,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    /// Method whose `lambda / h` the sweep varies.
    #[serde(default = "default_sweep_method")]
    pub sweep_method: Method,
    #[serde(default)]
    pub flatness: FlatnessSpec,
    #[serde(default)]
    pub tpa: TpaSettings,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Pgd, Method::Tdae]
}

fn default_baseline() -> Method {
    Method::Pgd
}

fn default_trials() -> usize {
    1
}

fn default_embedding_scale() -> f64 {
    1.0
}

/// Default `lambda / h` grid of the sweep.
pub fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
}

fn default_sweep_method() -> Method {
    Method::Fdm
}

impl ExperimentPlan {
    pub fn new(source: ModelFamilySpec) -> Self {
        Self {
            source,
            targets: Vec::new(),
            images: ImageSetSpec::default(),
            fresh_images: false,
            config: TdaeConfig::default(),
            methods: default_methods(),
            baseline: default_baseline(),
            seed: 0,
            trials: default_trials(),
            embedding_scale: default_embedding_scale(),
            ratios: default_ratios(),
            sweep_method: default_sweep_method(),
            flatness: FlatnessSpec::default(),
            tpa: TpaSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::Plan("at least one trial is required".into()));
        }
        if self.images.count == 0 || self.images.height == 0 || self.images.width == 0 {
            return Err(Error::Plan("the image set is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Plan("no methods selected".into()));
        }
        if !(self.embedding_scale.is_finite() && self.embedding_scale >= 0.0) {
            return Err(Error::Plan("embedding_scale must be finite and non-negative".into()));
        }
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Plan("ratios must be finite and non-negative".into()));
        }
        if !(self.flatness.radius.is_finite() && self.flatness.radius >= 0.0) || self.flatness.draws == 0 {
            return Err(Error::Plan("flatness probe needs radius >= 0 and draws >= 1".into()));
        }
        for t in &self.targets {
            if t.family == self.source.family && t.seed == self.source.seed {
                return Err(Error::Plan(format!(
                    "cross-model target {} is the source model",
                    t.label()
                )));
            }
            if t.channels != self.source.channels || t.embed_dim != self.source.embed_dim {
                return Err(Error::Plan(format!(
                    "target {} does not share the source's channels and embedding size",
                    t.label()
                )));
            }
        }
        build_model(&self.source)?;
        for t in &self.targets {
            build_model(t)?;
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    /// Seed of one immunization run: unique per trial and image.
    pub fn run_seed(&self, trial: usize, image: usize) -> u64 {
        self.trial_seed(trial).wrapping_mul(1 << 16).wrapping_add(image as u64)
    }

    pub fn source_for(&self, trial: usize) -> ModelFamilySpec {
        offset(&self.source, self.trial_seed(trial))
    }

    pub fn targets_for(&self, trial: usize) -> Vec<ModelFamilySpec> {
        self.targets.iter().map(|t| offset(t, self.trial_seed(trial))).collect()
    }

    /// Clean image `index` of a trial.
    pub fn image(&self, trial: usize, index: usize) -> Tensor {
        let s = &self.images;
        let scene = if self.fresh_images { trial * s.count + index } else { index };
        procedural_image(scene, s.height, s.width, s.seed)
    }

    /// The clean embedding `c` of one cell.
    pub fn embedding(&self, trial: usize, image: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.run_seed(trial, image));
        rng.set_stream(EMBED_STREAM);
        let k = self.embedding_scale;
        Tensor::from_fn(&[self.source.embed_dim], |_| {
            if k == 0.0 {
                0.0
            } else {
                rng.gen_range(-k..=k)
            }
        })
    }

    /// Method config for one cell, seeded per cell.
    pub fn run_config(&self, trial: usize, image: usize) -> TdaeConfig {
        TdaeConfig {
            seed: self.run_seed(trial, image),
            ..self.config.clone()
        }
    }

    pub(crate) fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.trials)
            .flat_map(|t| (0..self.images.count).map(move |i| (t, i)))
            .collect()
    }
}

fn offset(spec: &ModelFamilySpec, seed: u64) -> ModelFamilySpec {
    ModelFamilySpec {
        seed: spec.seed.wrapping_add(seed),
        ..spec.clone()
    }
}

/// Models of one trial.
pub(crate) struct TrialModels {
    pub source: Surrogate,
    pub source_label: String,
    pub targets: Vec<(String, Surrogate)>,
}

impl TrialModels {
    pub fn build(plan: &ExperimentPlan, trial: usize) -> Result<Self> {
        let src = plan.source_for(trial);
        let targets = plan
            .targets_for(trial)
            .into_iter()
            .map(|t| Ok((t.label(), build_model(&t)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source: build_model(&src)?,
            source_label: src.label(),
            targets,
        })
    }
}
