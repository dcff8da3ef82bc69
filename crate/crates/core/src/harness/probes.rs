use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, FlatnessSpec, TrialModels, REPORT_SCHEMA_VERSION};
use super::stats::{mean, median, SignTest};
use crate::error::{Error, Result};
use crate::immunize::{loss, tpa_immunize, ImageObjective, Method, Objective, TdaeConfig};
use crate::models::{EditModel, Instrumented};
use crate::ndtensor::Tensor;

/// Gradient-norm statistics over a sampled neighbourhood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessStats {
    pub max_grad_norm: f64,
    pub mean_grad_norm: f64,
    pub draws: usize,
}

/// Samples `spec.draws` points uniformly in the `L_inf` ball of radius
/// `spec.radius` around `delta_v` and records `||grad L||_2` of the clean-embedding
/// editing loss at each.
pub fn run_flatness_probe(
    model: &dyn EditModel,
    x0: &Tensor,
    c: &Tensor,
    delta_v: &Tensor,
    spec: &FlatnessSpec,
) -> Result<FlatnessStats> {
    if spec.draws == 0 || spec.radius.is_nan() || spec.radius < 0.0 {
        return Err(Error::Config("flatness probe needs radius >= 0 and draws >= 1".into()));
    }
    let session = Instrumented::new(model);
    let y0 = session.forward(x0, c)?;
    let obj = ImageObjective::full(&session, x0, c, &y0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut norms = Vec::with_capacity(spec.draws);
    for _ in 0..spec.draws {
        let probe = Tensor::from_fn(delta_v.shape(), |i| {
            delta_v.data()[i] + spec.radius * (2.0 * rng.gen::<f64>() - 1.0)
        });
        norms.push(obj.value_and_grad(&probe)?.1.l2_norm());
    }
    Ok(FlatnessStats {
        max_grad_norm: norms.iter().copied().fold(0.0, f64::max),
        mean_grad_norm: mean(&norms),
        draws: spec.draws,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessRow {
    pub method: Method,
    pub trial: usize,
    pub run_seed: u64,
    pub image: usize,
    pub stats: FlatnessStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    pub rows: Vec<FlatnessRow>,
    /// Per-trial mean of the max gradient norm; a win is a lower value than the baseline.
    pub comparisons: Vec<(Method, SignTest)>,
}

/// Probes the neighbourhood of every method's final perturbation on the source model.
pub fn run_flatness(plan: &ExperimentPlan) -> Result<FlatnessReport> {
    plan.validate()?;
    let mut methods = plan.methods.clone();
    if !methods.contains(&plan.baseline) {
        methods.insert(0, plan.baseline);
    }
    let rows: Vec<FlatnessRow> = plan
        .cells()
        .into_par_iter()
        .map(|(trial, image)| {
            let models = TrialModels::build(plan, trial)?;
            let x0 = plan.image(trial, image);
            let c = plan.embedding(trial, image);
            let cfg = plan.run_config(trial, image);
            methods
                .iter()
                .map(|&method| {
                    let r = method.run(&models.source, &x0, &c, &cfg)?;
                    Ok(FlatnessRow {
                        method,
                        trial,
                        run_seed: cfg.seed,
                        image,
                        stats: run_flatness_probe(&models.source, &x0, &c, &r.delta_v, &plan.flatness)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let per_trial = |m: Method| -> Vec<f64> {
        let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.method == m) {
            by.entry(r.trial).or_default().push(r.stats.max_grad_norm);
        }
        by.values().map(|v| mean(v)).collect()
    };
    let base = per_trial(plan.baseline);
    let comparisons = methods
        .iter()
        .filter(|&&m| m != plan.baseline)
        .map(|&m| {
            let pairs: Vec<(f64, f64)> = per_trial(m).into_iter().zip(base.iter().copied()).collect();
            (m, SignTest::less(&pairs))
        })
        .collect();
    Ok(FlatnessReport {
        schema_version: REPORT_SCHEMA_VERSION,
        plan: plan.clone(),
        rows,
        comparisons,
    })
}

/// Deviations of one cell at one ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ratio: f64,
    pub trial: usize,
    pub image: usize,
    pub intra_deviation: f64,
    /// Mean over the plan's targets; `None` without targets.
    pub cross_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub lambda: f64,
    pub h: f64,
    pub mean_intra_deviation: f64,
    pub mean_cross_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSeries {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    pub method: Method,
    pub points: Vec<SweepPoint>,
    pub cells: Vec<SweepCell>,
    /// Whether the ratio-0 runs reproduce the baseline runs bitwise, when ratio 0 is swept.
    pub ratio_zero_matches_baseline: Option<bool>,
    /// Trials where the given interior ratio's cross deviation is at least the
    /// smaller endpoint's, out of `trials`.
    pub interior_not_dominated: Option<InteriorCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorCheck {
    pub ratio: f64,
    pub trials_not_dominated: usize,
    pub trials: usize,
}

/// Interior ratio checked against the sweep endpoints.
pub const ADOPTED_RATIO: f64 = 0.3;

/// Sweeps `lambda / h` at fixed `h` for the plan's sweep method.
pub fn run_ablation_lambda_h(plan: &ExperimentPlan, ratios: &[f64]) -> Result<AblationSeries> {
    plan.validate()?;
    if ratios.is_empty() {
        return Err(Error::Plan("the ratio list is empty".into()));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Plan("ratios must be finite and non-negative".into()));
    }
    let method = plan.sweep_method;
    let check_zero = ratios.contains(&0.0);
    let cells_out: Vec<(Vec<SweepCell>, bool)> = plan
        .cells()
        .into_par_iter()
        .map(|(trial, image)| {
            let models = TrialModels::build(plan, trial)?;
            let x0 = plan.image(trial, image);
            let c = plan.embedding(trial, image);
            let y0 = models.source.forward(&x0, &c)?;
            let targets_y0 = models
                .targets
                .iter()
                .map(|(_, m)| m.forward(&x0, &c))
                .collect::<Result<Vec<_>>>()?;
            let cfg = plan.run_config(trial, image);
            let mut out = Vec::with_capacity(ratios.len());
            let mut zero_ok = true;
            let baseline = if check_zero { Some(plan.baseline.run(&models.source, &x0, &c, &cfg)?) } else { None };
            for &ratio in ratios {
                let r = method.run(&models.source, &x0, &c, &cfg.clone().with_ratio(ratio))?;
                if ratio == 0.0 {
                    if let Some(b) = &baseline {
                        zero_ok &= r.same_trajectory(b);
                    }
                }
                let intra = loss(&models.source.forward(&r.x_adv, &c)?, &y0)?;
                let cross = if models.targets.is_empty() {
                    None
                } else {
                    let mut acc = 0.0;
                    for ((_, m), ty0) in models.targets.iter().zip(&targets_y0) {
                        acc += loss(&m.forward(&r.x_adv, &c)?, ty0)?;
                    }
                    Some(acc / models.targets.len() as f64)
                };
                out.push(SweepCell {
                    ratio,
                    trial,
                    image,
                    intra_deviation: intra,
                    cross_deviation: cross,
                });
            }
            Ok((out, zero_ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_ok = cells_out.iter().all(|(_, ok)| *ok);
    let cells: Vec<SweepCell> = cells_out.into_iter().flat_map(|(c, _)| c).collect();
    let points = ratios
        .iter()
        .map(|&ratio| {
            let at: Vec<&SweepCell> = cells.iter().filter(|c| c.ratio == ratio).collect();
            let cross: Vec<f64> = at.iter().filter_map(|c| c.cross_deviation).collect();
            SweepPoint {
                ratio,
                lambda: ratio * plan.config.h,
                h: plan.config.h,
                mean_intra_deviation: mean(&at.iter().map(|c| c.intra_deviation).collect::<Vec<_>>()),
                mean_cross_deviation: (!cross.is_empty()).then(|| mean(&cross)),
            }
        })
        .collect();
    let interior = interior_check(plan, ratios, &cells);
    Ok(AblationSeries {
        schema_version: REPORT_SCHEMA_VERSION,
        plan: plan.clone(),
        method,
        points,
        cells,
        ratio_zero_matches_baseline: check_zero.then_some(zero_ok),
        interior_not_dominated: interior,
    })
}

fn interior_check(plan: &ExperimentPlan, ratios: &[f64], cells: &[SweepCell]) -> Option<InteriorCheck> {
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !ratios.contains(&ADOPTED_RATIO) || !(lo < ADOPTED_RATIO && ADOPTED_RATIO < hi) || plan.targets.is_empty() {
        return None;
    }
    let trial_mean = |trial: usize, ratio: f64| {
        mean(
            &cells
                .iter()
                .filter(|c| c.trial == trial && c.ratio == ratio)
                .filter_map(|c| c.cross_deviation)
                .collect::<Vec<_>>(),
        )
    };
    let not_dominated = (0..plan.trials)
        .filter(|&t| {
            let mid = trial_mean(t, ADOPTED_RATIO);
            mid >= trial_mean(t, lo).min(trial_mean(t, hi))
        })
        .count();
    Some(InteriorCheck {
        ratio: ADOPTED_RATIO,
        trials_not_dominated: not_dominated,
        trials: plan.trials,
    })
}

/// Per-trial call and timing accounting for the flat-gradient update and the
/// sampling reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub trial: usize,
    pub run_seed: u64,
    pub fdm_calls_per_iteration: f64,
    pub tpa_calls_per_iteration: f64,
    pub fdm_median_iteration_secs: f64,
    pub tpa_median_iteration_secs: f64,
    pub fdm_final_loss: f64,
    pub tpa_final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    pub samples: usize,
    pub rows: Vec<EfficiencyRow>,
    /// Total TPA calls over total FDM calls.
    pub call_ratio: f64,
    pub expected_call_ratio: f64,
    /// Median TPA iteration time over median FDM iteration time.
    pub wall_ratio: f64,
    pub mean_fdm_final_loss: f64,
    pub mean_tpa_final_loss: f64,
    /// `|tpa - fdm| / max(tpa, fdm)` on the mean final losses.
    pub loss_relative_gap: f64,
}

/// Runs the flat-gradient update and the `samples`-point sampling reference
/// with the same budget on the first image of every trial. Sequential so the
/// timings do not compete for cores.
pub fn run_efficiency_comparison(plan: &ExperimentPlan, samples: usize) -> Result<EfficiencyReport> {
    plan.validate()?;
    if samples == 0 {
        return Err(Error::Plan("the sampling reference needs at least one sample".into()));
    }
    let tpa = crate::immunize::TpaSettings {
        samples,
        ..plan.tpa
    };
    let mut rows = Vec::with_capacity(plan.trials);
    let (mut fdm_calls, mut tpa_calls) = (0u64, 0u64);
    let (mut fdm_secs, mut tpa_secs) = (Vec::new(), Vec::new());
    for trial in 0..plan.trials {
        let models = TrialModels::build(plan, trial)?;
        let x0 = plan.image(trial, 0);
        let c = plan.embedding(trial, 0);
        let cfg: TdaeConfig = Method::Fdm.configure(&plan.run_config(trial, 0));
        let f = Method::Fdm.run(&models.source, &x0, &c, &cfg)?;
        let t = tpa_immunize(&models.source, &x0, &c, &cfg, tpa)?;
        let y0 = models.source.forward(&x0, &c)?;
        fdm_calls += f.grad_calls;
        tpa_calls += t.grad_calls;
        fdm_secs.extend(f.iteration_secs.iter().skip(1));
        tpa_secs.extend(t.iteration_secs.iter().skip(1));
        rows.push(EfficiencyRow {
            trial,
            run_seed: cfg.seed,
            fdm_calls_per_iteration: f.calls_per_iteration(),
            tpa_calls_per_iteration: t.calls_per_iteration(),
            fdm_median_iteration_secs: f.median_iteration_secs(),
            tpa_median_iteration_secs: t.median_iteration_secs(),
            fdm_final_loss: loss(&models.source.forward(&f.x_adv, &c)?, &y0)?,
            tpa_final_loss: loss(&models.source.forward(&t.x_adv, &c)?, &y0)?,
        });
    }
    let mf = mean(&rows.iter().map(|r| r.fdm_final_loss).collect::<Vec<_>>());
    let mt = mean(&rows.iter().map(|r| r.tpa_final_loss).collect::<Vec<_>>());
    let gap = if mf.max(mt) > 0.0 { (mt - mf).abs() / mf.max(mt) } else { 0.0 };
    Ok(EfficiencyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        plan: plan.clone(),
        samples,
        call_ratio: tpa_calls as f64 / fdm_calls.max(1) as f64,
        expected_call_ratio: (2 * samples + 1) as f64 / 2.0,
        wall_ratio: median(&tpa_secs) / median(&fdm_secs),
        mean_fdm_final_loss: mf,
        mean_tpa_final_loss: mt,
        loss_relative_gap: gap,
        rows,
    })
}
