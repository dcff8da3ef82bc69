use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the image perturbation attacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackTarget {
    /// Deviation of the full edit `f(x0 + delta_v, e)` from `y0`.
    FullModel,
    /// Deviation of the encoder latent from the clean latent; the embedding is unused.
    EncoderOnly,
}

/// Hyperparameters of one immunization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdaeConfig {
    /// Image L-inf budget, pixel units in `[0, 1]`.
    pub eps_v: f64,
    /// Image step size.
    pub alpha: f64,
    /// Total iterations.
    pub iterations: usize,
    /// Flat-gradient coefficient.
    pub lambda: f64,
    /// Finite-difference step along the normalised gradient. The default of 0.5
    /// is a sizeable fraction of the L2 radius of the default budget on
    /// 32x32x3 images (`sqrt(3072) * 8/255 ~ 1.7`), large enough to see past
    /// the local curvature and small enough to stay close to the sampled
    /// gradient-norm penalty.
    pub h: f64,
    /// Embedding refinement fires on iterations divisible by this period.
    pub dpd_period: usize,
    /// Embedding L-inf budget.
    pub eps_p: f64,
    /// Embedding step size.
    pub eta: f64,
    /// Sign-descent steps per embedding refinement.
    pub dpd_iterations: usize,
    pub seed: u64,
    pub attack_target: AttackTarget,
    /// Draw `delta_v ~ U[-eps_v, eps_v]` at the start of the first iteration.
    pub random_start: bool,
}

impl Default for TdaeConfig {
    fn default() -> Self {
        Self {
            eps_v: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iterations: 100,
            lambda: 0.15,
            h: 0.5,
            dpd_period: 20,
            eps_p: 0.1,
            eta: 0.01,
            dpd_iterations: 10,
            seed: 0,
            attack_target: AttackTarget::FullModel,
            random_start: true,
        }
    }
}

impl TdaeConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("eps_v", self.eps_v),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("h", self.h),
            ("eps_p", self.eps_p),
            ("eta", self.eta),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.eps_v < 0.0 {
            return Err(Error::Config("eps_v must be >= 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if self.h <= 0.0 {
            return Err(Error::Config("h must be > 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.dpd_period == 0 {
            return Err(Error::Config("dpd_period must be >= 1".into()));
        }
        if self.eps_p < 0.0 || self.eta < 0.0 {
            return Err(Error::Config("eps_p and eta must be >= 0".into()));
        }
        Ok(())
    }

    /// `lambda / h`, the quantity swept in the ratio ablation.
    pub fn ratio(&self) -> f64 {
        self.lambda / self.h
    }

    /// Sets `lambda` so that `lambda / h == ratio`, keeping `h`.
    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.lambda = ratio * self.h;
        self
    }

    pub fn dpd_enabled(&self) -> bool {
        self.attack_target == AttackTarget::FullModel && self.dpd_iterations > 0
    }
}
