use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AttackTarget, TdaeConfig};
use super::objective::{compute_benign_target, project_linf, sign_step, ImageObjective, Objective};
use super::steps::{dpd_refine, fdm_step, pgd_step, tpa_gradient, FdmDiagnostics};
use crate::error::{Error, Result};
use crate::models::{EditModel, Instrumented};
use crate::ndtensor::Tensor;

const START_STREAM: u64 = 0;
const TPA_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `L(delta_v)` under the embedding used for the image update.
    pub loss: f64,
    /// `||g1||_2` and `z` of the flat-gradient update; absent for other updates.
    pub g1_norm: Option<f64>,
    pub z: Option<f64>,
    pub dpd_fired: bool,
    /// `||delta_v||_inf` after the projection of this iteration.
    pub delta_v_linf: f64,
    /// `||delta_p||_inf` after this iteration.
    pub delta_p_linf: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImmunizationResult {
    pub x_adv: Tensor,
    pub delta_v: Tensor,
    pub delta_p: Tensor,
    pub records: Vec<IterationRecord>,
    pub grad_calls: u64,
    /// Wall time of each iteration in seconds. Not part of run equality.
    pub iteration_secs: Vec<f64>,
    pub wall_secs: f64,
}

impl ImmunizationResult {
    /// Bitwise equality of everything except timing.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.x_adv.bit_eq(&other.x_adv)
            && self.delta_v.bit_eq(&other.delta_v)
            && self.delta_p.bit_eq(&other.delta_p)
            && self.grad_calls == other.grad_calls
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.g1_norm.map(f64::to_bits) == b.g1_norm.map(f64::to_bits)
                    && a.z.map(f64::to_bits) == b.z.map(f64::to_bits)
                    && a.dpd_fired == b.dpd_fired
                    && a.delta_v_linf.to_bits() == b.delta_v_linf.to_bits()
                    && a.delta_p_linf.to_bits() == b.delta_p_linf.to_bits()
            })
    }

    /// Bitwise equality of the perturbation path: final tensors plus per-iteration
    /// loss, norms and refinement flags. Ignores call counts and update
    /// diagnostics, which differ between update rules that trace the same path.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.x_adv.bit_eq(&other.x_adv)
            && self.delta_v.bit_eq(&other.delta_v)
            && self.delta_p.bit_eq(&other.delta_p)
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.dpd_fired == b.dpd_fired
                    && a.delta_v_linf.to_bits() == b.delta_v_linf.to_bits()
                    && a.delta_p_linf.to_bits() == b.delta_p_linf.to_bits()
            })
    }

    /// Gradient evaluations per iteration.
    pub fn calls_per_iteration(&self) -> f64 {
        self.grad_calls as f64 / self.records.len().max(1) as f64
    }

    /// Median iteration time, excluding the first (warm-up) iteration.
    pub fn median_iteration_secs(&self) -> f64 {
        let mut t: Vec<f64> = self.iteration_secs.iter().skip(1).copied().collect();
        if t.is_empty() {
            t = self.iteration_secs.clone();
        }
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        }
    }
}

fn check_inputs(model: &dyn EditModel, x0: &Tensor, c: &Tensor, cfg: &TdaeConfig) -> Result<()> {
    cfg.validate()?;
    let d = model.descriptor();
    if x0.shape().len() != 3 || x0.shape()[2] != d.channels {
        return Err(Error::shape("image", x0.shape(), &[0, 0, d.channels]));
    }
    if c.shape() != [d.embed_dim] {
        return Err(Error::shape("embedding", c.shape(), &[d.embed_dim]));
    }
    if x0.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config("x0 must lie in [0, 1]".into()));
    }
    Ok(())
}

fn random_start(shape: &[usize], cfg: &TdaeConfig) -> Tensor {
    if !cfg.random_start || cfg.eps_v == 0.0 {
        return Tensor::zeros(shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(START_STREAM);
    let eps = cfg.eps_v;
    Tensor::from_fn(shape, |_| rng.gen_range(-eps..=eps))
}

struct Run<'m> {
    session: Instrumented<'m>,
    started: Instant,
    records: Vec<IterationRecord>,
    iteration_secs: Vec<f64>,
}

impl<'m> Run<'m> {
    fn new(model: &'m dyn EditModel) -> Self {
        Self {
            session: Instrumented::new(model),
            started: Instant::now(),
            records: Vec::new(),
            iteration_secs: Vec::new(),
        }
    }

    fn finish(self, x0: &Tensor, delta_v: Tensor, delta_p: Tensor) -> Result<ImmunizationResult> {
        Ok(ImmunizationResult {
            x_adv: x0.add(&delta_v)?,
            delta_v,
            delta_p,
            records: self.records,
            grad_calls: self.session.grad_calls(),
            iteration_secs: self.iteration_secs,
            wall_secs: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// The alternating image/embedding immunization loop.
///
/// Each iteration `n` uses `e = c + delta_p`; when `n` is a multiple of the
/// period the embedding perturbation is reset and re-refined against the
/// current immunized image, then the image perturbation takes one
/// flat-gradient sign step under the (possibly refreshed) embedding. `y0` is
/// computed once from the clean image and the original embedding.
pub fn tdae_immunize(model: &dyn EditModel, x0: &Tensor, c: &Tensor, cfg: &TdaeConfig) -> Result<ImmunizationResult> {
    check_inputs(model, x0, c, cfg)?;
    let mut run = Run::new(model);
    let y0 = compute_benign_target(&run.session, x0, c)?;
    let encoder = match cfg.attack_target {
        AttackTarget::EncoderOnly => Some(ImageObjective::encoder(&run.session, x0)?),
        AttackTarget::FullModel => None,
    };

    let mut delta_v = Tensor::zeros(x0.shape());
    let mut delta_p = Tensor::zeros(c.shape());
    for n in 1..=cfg.iterations {
        let t0 = Instant::now();
        if n == 1 {
            delta_v = random_start(x0.shape(), cfg);
        }
        let mut e = c.add(&delta_p)?;
        let mut fired = false;
        if cfg.dpd_enabled() && n % cfg.dpd_period == 0 {
            let x_imu = x0.add(&delta_v)?;
            delta_p = dpd_refine(&run.session, &x_imu, c, &y0, cfg.eps_p, cfg.eta, cfg.dpd_iterations)?;
            e = c.add(&delta_p)?;
            fired = true;
        }
        let (next, diag) = match &encoder {
            Some(obj) => fdm_step(obj, &delta_v, cfg)?,
            None => fdm_step(&ImageObjective::full(&run.session, x0, &e, &y0), &delta_v, cfg)?,
        };
        delta_v = next;
        run.records.push(record(n, diag.loss, Some(diag), fired, &delta_v, &delta_p));
        run.iteration_secs.push(t0.elapsed().as_secs_f64());
    }
    drop(encoder);
    run.finish(x0, delta_v, delta_p)
}

/// Plain sign-gradient PGD under the original embedding (or the encoder
/// target), with the same random start as [`tdae_immunize`].
pub fn pgd_immunize(model: &dyn EditModel, x0: &Tensor, c: &Tensor, cfg: &TdaeConfig) -> Result<ImmunizationResult> {
    check_inputs(model, x0, c, cfg)?;
    let mut run = Run::new(model);
    let y0 = compute_benign_target(&run.session, x0, c)?;
    let obj = match cfg.attack_target {
        AttackTarget::EncoderOnly => ImageObjective::encoder(&run.session, x0)?,
        AttackTarget::FullModel => ImageObjective::full(&run.session, x0, c, &y0),
    };
    let delta_p = Tensor::zeros(c.shape());
    let mut delta_v = Tensor::zeros(x0.shape());
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut secs = Vec::with_capacity(cfg.iterations);
    for n in 1..=cfg.iterations {
        let t0 = Instant::now();
        if n == 1 {
            delta_v = random_start(x0.shape(), cfg);
        }
        let (next, l) = pgd_step(&obj, &delta_v, cfg.alpha, cfg.eps_v)?;
        delta_v = next;
        records.push(record(n, l, None, false, &delta_v, &delta_p));
        secs.push(t0.elapsed().as_secs_f64());
    }
    drop(obj);
    run.records = records;
    run.iteration_secs = secs;
    run.finish(x0, delta_v, delta_p)
}

/// Settings of the sampling-based reference regulariser.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpaSettings {
    pub samples: usize,
    pub sigma: f64,
}

impl Default for TpaSettings {
    fn default() -> Self {
        Self {
            samples: 5,
            sigma: 4.0 / 255.0,
        }
    }
}

/// PGD driven by the sampling-based regulariser instead of the flat gradient.
/// No embedding refinement.
pub fn tpa_immunize(
    model: &dyn EditModel,
    x0: &Tensor,
    c: &Tensor,
    cfg: &TdaeConfig,
    tpa: TpaSettings,
) -> Result<ImmunizationResult> {
    check_inputs(model, x0, c, cfg)?;
    if tpa.samples == 0 || tpa.sigma < 0.0 {
        return Err(Error::Config("TPA needs samples >= 1 and sigma >= 0".into()));
    }
    let mut run = Run::new(model);
    let y0 = compute_benign_target(&run.session, x0, c)?;
    let obj = match cfg.attack_target {
        AttackTarget::EncoderOnly => ImageObjective::encoder(&run.session, x0)?,
        AttackTarget::FullModel => ImageObjective::full(&run.session, x0, c, &y0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TPA_STREAM);
    let delta_p = Tensor::zeros(c.shape());
    let mut delta_v = Tensor::zeros(x0.shape());
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut secs = Vec::with_capacity(cfg.iterations);
    for n in 1..=cfg.iterations {
        let t0 = Instant::now();
        if n == 1 {
            delta_v = random_start(x0.shape(), cfg);
        }
        let loss = obj.value(&delta_v)?;
        let g = tpa_gradient(&obj, &delta_v, cfg.lambda, tpa.samples, tpa.sigma, cfg.h, &mut rng)?;
        delta_v = project_linf(&sign_step(&delta_v, &g.scale(-1.0), cfg.alpha), cfg.eps_v);
        records.push(record(n, loss, None, false, &delta_v, &delta_p));
        secs.push(t0.elapsed().as_secs_f64());
    }
    drop(obj);
    run.records = records;
    run.iteration_secs = secs;
    run.finish(x0, delta_v, delta_p)
}

fn record(
    n: usize,
    loss: f64,
    diag: Option<FdmDiagnostics>,
    fired: bool,
    delta_v: &Tensor,
    delta_p: &Tensor,
) -> IterationRecord {
    IterationRecord {
        iteration: n,
        loss,
        g1_norm: diag.map(|d| d.g1_norm),
        z: diag.map(|d| d.z),
        dpd_fired: fired,
        delta_v_linf: delta_v.linf_norm(),
        delta_p_linf: delta_p.linf_norm(),
    }
}

/// Immunization variants compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Sign-gradient PGD on the full edit.
    #[serde(rename = "pgd")]
    Pgd,
    /// PGD with the flat-gradient update, fixed embedding.
    #[serde(rename = "fdm")]
    Fdm,
    /// PGD with periodic embedding refinement, no flatness term.
    #[serde(rename = "dpd")]
    Dpd,
    /// Flat-gradient update plus embedding refinement.
    #[serde(rename = "tdae")]
    Tdae,
    /// PGD on the encoder latent.
    #[serde(rename = "pge")]
    Pge,
    /// Flat-gradient update on the encoder latent.
    #[serde(rename = "pge+fdm")]
    PgeFdm,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Pgd, Method::Fdm, Method::Dpd, Method::Tdae, Method::Pge, Method::PgeFdm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pgd => "pgd",
            Method::Fdm => "fdm",
            Method::Dpd => "dpd",
            Method::Tdae => "tdae",
            Method::Pge => "pge",
            Method::PgeFdm => "pge+fdm",
        }
    }

    /// The run configuration this method uses, derived from a base config.
    pub fn configure(self, base: &TdaeConfig) -> TdaeConfig {
        let mut cfg = base.clone();
        match self {
            Method::Pgd | Method::Pge | Method::Dpd => cfg.lambda = 0.0,
            Method::Fdm | Method::Tdae | Method::PgeFdm => {}
        }
        match self {
            Method::Pgd | Method::Fdm | Method::Pge | Method::PgeFdm => cfg.dpd_iterations = 0,
            Method::Dpd | Method::Tdae => {}
        }
        cfg.attack_target = match self {
            Method::Pge | Method::PgeFdm => AttackTarget::EncoderOnly,
            _ => AttackTarget::FullModel,
        };
        cfg
    }

    pub fn run(self, model: &dyn EditModel, x0: &Tensor, c: &Tensor, base: &TdaeConfig) -> Result<ImmunizationResult> {
        let cfg = self.configure(base);
        match self {
            Method::Pgd | Method::Pge => pgd_immunize(model, x0, c, &cfg),
            _ => tdae_immunize(model, x0, c, &cfg),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}
