//! The run configuration file.
//!
//! TOML with a required `schema_version`. Every section is optional and every
//! key has a default, so the canonical form printed by `tdae config` is the
//! fully expanded file. Unknown keys are rejected by name.

use serde::{Deserialize, Serialize};
use tdae_core::harness::{default_ratios, ExperimentPlan, FlatnessSpec, ImageSetSpec};
use tdae_core::immunize::{AttackTarget, TpaSettings};
use tdae_core::{Family, Method, ModelFamilySpec, TdaeConfig};

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Root of every random stream; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tdae: TdaeSection,
    /// Experiment for `evaluate`, `ablate` and `bench`. Absent means no plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(default)]
    pub immunize: ImmunizeSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub bench: BenchSection,
}

/// Immunization hyperparameters. `eps_v` counts 8-bit levels, so the budget
/// is `eps_v / 255` and exported images meet it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdaeSection {
    pub eps_v: u32,
    pub alpha: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub h: f64,
    pub dpd_period: usize,
    pub eps_p: f64,
    pub eta: f64,
    pub dpd_iterations: usize,
    pub attack_target: AttackTarget,
    pub random_start: bool,
}

impl Default for TdaeSection {
    fn default() -> Self {
        let d = TdaeConfig::default();
        Self {
            eps_v: (d.eps_v * 255.0).round() as u32,
            alpha: d.alpha,
            iterations: d.iterations,
            lambda: d.lambda,
            h: d.h,
            dpd_period: d.dpd_period,
            eps_p: d.eps_p,
            eta: d.eta,
            dpd_iterations: d.dpd_iterations,
            attack_target: d.attack_target,
            random_start: d.random_start,
        }
    }
}

impl TdaeSection {
    pub fn to_config(&self, seed: u64) -> TdaeConfig {
        TdaeConfig {
            eps_v: f64::from(self.eps_v) / 255.0,
            alpha: self.alpha,
            iterations: self.iterations,
            lambda: self.lambda,
            h: self.h,
            dpd_period: self.dpd_period,
            eps_p: self.eps_p,
            eta: self.eta,
            dpd_iterations: self.dpd_iterations,
            seed,
            attack_target: self.attack_target,
            random_start: self.random_start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub source: ModelFamilySpec,
    #[serde(default)]
    pub targets: Vec<ModelFamilySpec>,
    #[serde(default)]
    pub images: ImageSetSpec,
    #[serde(default)]
    pub fresh_images: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_baseline")]
    pub baseline: Method,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_embedding_scale")]
    pub embedding_scale: f64,
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImmunizeSection {
    pub method: Method,
    /// Surrogate used by `tdae immunize`; its `channels` must be 3.
    pub model: ModelFamilySpec,
    /// Embedding entries are uniform in `[-scale, scale]`, drawn from the seed.
    pub embedding_scale: f64,
}

impl Default for ImmunizeSection {
    fn default() -> Self {
        Self {
            method: Method::Tdae,
            model: ModelFamilySpec::new(Family::CondConv, 0),
            embedding_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTask {
    Intra,
    Cross,
    Imperceptibility,
    Flatness,
}

impl EvalTask {
    pub fn name(self) -> &'static str {
        match self {
            EvalTask::Intra => "intra",
            EvalTask::Cross => "cross",
            EvalTask::Imperceptibility => "imperceptibility",
            EvalTask::Flatness => "flatness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub tasks: Vec<EvalTask>,
    /// Significance level of the `--assert` sign tests.
    pub level: f64,
    /// Largest mean-PSNR gap to the baseline that `--assert` accepts, in dB.
    pub max_psnr_gap: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            tasks: vec![EvalTask::Intra, EvalTask::Cross, EvalTask::Imperceptibility],
            level: 0.05,
            max_psnr_gap: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub ratios: Vec<f64>,
    pub method: Method,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            ratios: default_ratios(),
            method: Method::Fdm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Samples of the sampling reference.
    pub samples: usize,
    /// `--assert` bound on the median-iteration wall-time ratio.
    pub min_wall_ratio: f64,
    /// `--assert` bound on the relative final-loss gap.
    pub max_loss_gap: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            samples: 5,
            min_wall_ratio: 3.0,
            max_loss_gap: 0.1,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            tdae: TdaeSection::default(),
            plan: None,
            immunize: ImmunizeSection::default(),
            evaluate: EvaluateSection::default(),
            ablate: AblateSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        // seeds pass through TOML integers, which are signed 64-bit
        if i64::try_from(self.seed).is_err() {
            return Err(CliError::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.tdae.to_config(self.seed).validate()?;
        if !(self.immunize.embedding_scale.is_finite() && self.immunize.embedding_scale >= 0.0) {
            return Err(CliError::Config("immunize.embedding_scale must be finite and non-negative".into()));
        }
        if self.evaluate.tasks.is_empty() {
            return Err(CliError::Config("evaluate.tasks is empty".into()));
        }
        if !(self.evaluate.level > 0.0 && self.evaluate.level < 1.0) {
            return Err(CliError::Config("evaluate.level must lie in (0, 1)".into()));
        }
        if self.bench.samples == 0 {
            return Err(CliError::Config("bench.samples must be >= 1".into()));
        }
        if let Some(plan) = &self.plan {
            if plan.trials == 0 || plan.images.count == 0 {
                return Err(CliError::Config("the plan has no trials or no images".into()));
            }
        }
        Ok(())
    }

    /// Canonical TOML: every key present, sections in declaration order.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("serializing config: {e}")))
    }

    pub fn tdae_config(&self) -> TdaeConfig {
        self.tdae.to_config(self.seed)
    }

    /// The harness plan, or a config error when the file has none.
    pub fn experiment_plan(&self) -> Result<ExperimentPlan> {
        let p = self
            .plan
            .as_ref()
            .ok_or_else(|| CliError::Config("the config has no [plan] section; nothing to run".into()))?;
        let plan = ExperimentPlan {
            source: p.source.clone(),
            targets: p.targets.clone(),
            images: p.images.clone(),
            fresh_images: p.fresh_images,
            config: self.tdae_config(),
            methods: p.methods.clone(),
            baseline: p.baseline,
            seed: self.seed,
            trials: p.trials,
            embedding_scale: p.embedding_scale,
            ratios: self.ablate.ratios.clone(),
            sweep_method: self.ablate.method,
            flatness: p.flatness.clone(),
            tpa: TpaSettings {
                samples: self.bench.samples,
                ..p.tpa
            },
        };
        plan.validate()?;
        Ok(plan)
    }
}
