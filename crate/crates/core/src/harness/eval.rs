use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, TrialModels, REPORT_SCHEMA_VERSION};
use super::stats::{mean, median, SignTest};
use crate::error::{Error, Result};
use crate::immunize::{loss, ImmunizationResult, Method};
use crate::metrics::{psnr, MetricReport};
use crate::models::EditModel;
use crate::ndtensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    Intra,
    Cross,
}

/// One scored cell: a method, a trial, an image and the model that edits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub source: String,
    pub target: String,
    /// Position of the target in the plan; 0 for intra rows.
    pub target_index: usize,
    pub trial: usize,
    pub run_seed: u64,
    pub image: usize,
    /// `MSE(f(x_adv, c), y0)` on the editing model.
    pub deviation: f64,
    /// Final surrogate loss of the immunization run.
    pub final_loss: f64,
    pub metrics: MetricReport,
    pub grad_calls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub target_index: usize,
    pub cells: usize,
    pub mean_deviation: f64,
    pub median_deviation: f64,
    /// Mean over cells with a finite PSNR.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    pub mean_vifp: Option<f64>,
    pub mean_fsim: Option<f64>,
}

/// Sign test on per-trial mean deviation of `method` against `baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: Method,
    pub baseline: Method,
    pub target_index: usize,
    pub test: SignTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub schema_version: u32,
    pub kind: EvalKind,
    pub plan: ExperimentPlan,
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

impl TransferReport {
    pub fn comparison(&self, method: Method, target_index: usize) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.method == method && c.target_index == target_index)
    }

    pub fn summary(&self, method: Method, target_index: usize) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.target_index == target_index)
    }
}

/// Methods to run: the plan's list with the baseline added if missing.
fn methods_with_baseline(plan: &ExperimentPlan) -> Vec<Method> {
    let mut ms = plan.methods.clone();
    if !ms.contains(&plan.baseline) {
        ms.insert(0, plan.baseline);
    }
    ms
}

struct CellRun {
    trial: usize,
    image: usize,
    method: Method,
    result: ImmunizationResult,
}

/// Runs every method on every cell with the trial's source model. Parallel
/// over cells; the output order is fixed by `(trial, image, method)`.
fn immunize_cells(plan: &ExperimentPlan, methods: &[Method]) -> Result<Vec<CellRun>> {
    let runs: Vec<Result<Vec<CellRun>>> = plan
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
                    Ok(CellRun {
                        trial,
                        image,
                        method,
                        result: method.run(&models.source, &x0, &c, &cfg)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}

fn score(model: &dyn EditModel, x0: &Tensor, x_adv: &Tensor, c: &Tensor) -> Result<(f64, MetricReport)> {
    let y0 = model.forward(x0, c)?;
    let y = model.forward(x_adv, c)?;
    Ok((loss(&y, &y0)?, MetricReport::compute(&y0, &y)?))
}

/// Immunize on the source of each trial and score the edit on the source.
pub fn run_intra_eval(plan: &ExperimentPlan) -> Result<TransferReport> {
    plan.validate()?;
    let methods = methods_with_baseline(plan);
    let runs = immunize_cells(plan, &methods)?;
    let rows = runs
        .par_iter()
        .map(|run| {
            let models = TrialModels::build(plan, run.trial)?;
            let x0 = plan.image(run.trial, run.image);
            let c = plan.embedding(run.trial, run.image);
            let (deviation, metrics) = score(&models.source, &x0, &run.result.x_adv, &c)?;
            Ok(row(plan, run, &models.source_label, &models.source_label, 0, deviation, metrics))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(plan, EvalKind::Intra, rows, &methods, 1))
}

/// Immunize on the source and score the edit on every unseen target.
pub fn run_cross_eval(plan: &ExperimentPlan) -> Result<TransferReport> {
    plan.validate()?;
    if plan.targets.is_empty() {
        return Err(Error::Plan("cross-model evaluation needs at least one target".into()));
    }
    let methods = methods_with_baseline(plan);
    let runs = immunize_cells(plan, &methods)?;
    let nested = runs
        .par_iter()
        .map(|run| {
            let models = TrialModels::build(plan, run.trial)?;
            let x0 = plan.image(run.trial, run.image);
            let c = plan.embedding(run.trial, run.image);
            models
                .targets
                .iter()
                .enumerate()
                .map(|(ti, (label, model))| {
                    let (deviation, metrics) = score(model, &x0, &run.result.x_adv, &c)?;
                    Ok(row(plan, run, &models.source_label, label, ti, deviation, metrics))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = nested.into_iter().flatten().collect();
    Ok(assemble(plan, EvalKind::Cross, rows, &methods, plan.targets.len()))
}

fn row(
    plan: &ExperimentPlan,
    run: &CellRun,
    source: &str,
    target: &str,
    target_index: usize,
    deviation: f64,
    metrics: MetricReport,
) -> ReportRow {
    ReportRow {
        method: run.method,
        source: source.to_string(),
        target: target.to_string(),
        target_index,
        trial: run.trial,
        run_seed: plan.run_seed(run.trial, run.image),
        image: run.image,
        deviation,
        final_loss: run.result.records.last().map_or(0.0, |r| r.loss),
        metrics,
        grad_calls: run.result.grad_calls,
    }
}

/// Per-trial mean of `value` over the rows of one method and target, in trial order.
fn per_trial(rows: &[ReportRow], method: Method, target_index: usize, value: impl Fn(&ReportRow) -> f64) -> Vec<f64> {
    let mut by_trial: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method && r.target_index == target_index) {
        by_trial.entry(r.trial).or_default().push(value(r));
    }
    by_trial.values().map(|v| mean(v)).collect()
}

fn optional_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn assemble(
    plan: &ExperimentPlan,
    kind: EvalKind,
    rows: Vec<ReportRow>,
    methods: &[Method],
    targets: usize,
) -> TransferReport {
    let mut summaries = Vec::new();
    let mut comparisons = Vec::new();
    for ti in 0..targets {
        for &m in methods {
            let cell: Vec<&ReportRow> = rows.iter().filter(|r| r.method == m && r.target_index == ti).collect();
            let devs: Vec<f64> = cell.iter().map(|r| r.deviation).collect();
            summaries.push(MethodSummary {
                method: m,
                target_index: ti,
                cells: cell.len(),
                mean_deviation: mean(&devs),
                median_deviation: median(&devs),
                mean_psnr: optional_mean(cell.iter().map(|r| Some(r.metrics.psnr))),
                mean_ssim: mean(&cell.iter().map(|r| r.metrics.ssim).collect::<Vec<_>>()),
                mean_vifp: optional_mean(cell.iter().map(|r| r.metrics.vifp)),
                mean_fsim: optional_mean(cell.iter().map(|r| r.metrics.fsim)),
            });
            if m != plan.baseline {
                let a = per_trial(&rows, m, ti, |r| r.deviation);
                let b = per_trial(&rows, plan.baseline, ti, |r| r.deviation);
                let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
                comparisons.push(Comparison {
                    method: m,
                    baseline: plan.baseline,
                    target_index: ti,
                    test: SignTest::greater(&pairs),
                });
            }
        }
    }
    TransferReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind,
        plan: plan.clone(),
        rows,
        summaries,
        comparisons,
    }
}

/// Similarity of one immunized image to its clean original.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImperceptibilityRow {
    pub method: Method,
    pub trial: usize,
    pub run_seed: u64,
    pub image: usize,
    pub linf: f64,
    pub within_budget: bool,
    /// `PSNR(x_adv, x0) >= -20 log10(eps_v)`.
    pub meets_psnr_bound: bool,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImperceptibilitySummary {
    pub method: Method,
    pub cells: usize,
    pub mean_psnr: Option<f64>,
    pub min_psnr: f64,
    pub mean_ssim: f64,
    pub mean_vifp: Option<f64>,
    pub mean_fsim: Option<f64>,
    pub budget_violations: usize,
    pub bound_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImperceptibilityReport {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    /// Analytic PSNR floor implied by the budget, in dB.
    pub psnr_bound: f64,
    pub rows: Vec<ImperceptibilityRow>,
    pub summaries: Vec<ImperceptibilitySummary>,
}

impl ImperceptibilityReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.within_budget || !r.meets_psnr_bound).count()
    }

    pub fn summary(&self, method: Method) -> Option<&ImperceptibilitySummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// PSNR lower bound for an `L_inf` budget at unit peak: every pixel at the budget.
/// Allowance for the rounding of `x0 + delta`: the projection bounds `delta`
/// exactly, but the realised image difference can be off by an ulp.
pub const ROUNDING_SLACK: f64 = 1e-12;

pub fn psnr_bound(eps_v: f64) -> f64 {
    -20.0 * eps_v.log10()
}

/// Scores every immunized image against its clean original.
pub fn run_imperceptibility(plan: &ExperimentPlan) -> Result<ImperceptibilityReport> {
    plan.validate()?;
    let methods = methods_with_baseline(plan);
    let runs = immunize_cells(plan, &methods)?;
    let bound = psnr_bound(plan.config.eps_v + ROUNDING_SLACK);
    let rows = runs
        .par_iter()
        .map(|run| {
            let x0 = plan.image(run.trial, run.image);
            let metrics = MetricReport::compute(&x0, &run.result.x_adv)?;
            let linf = run.result.x_adv.sub(&x0)?.linf_norm();
            Ok(ImperceptibilityRow {
                method: run.method,
                trial: run.trial,
                run_seed: plan.run_seed(run.trial, run.image),
                image: run.image,
                linf,
                within_budget: linf <= plan.config.eps_v + ROUNDING_SLACK,
                meets_psnr_bound: psnr(&x0, &run.result.x_adv, 1.0)? >= bound,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = methods
        .iter()
        .map(|&m| {
            let cell: Vec<&ImperceptibilityRow> = rows.iter().filter(|r| r.method == m).collect();
            ImperceptibilitySummary {
                method: m,
                cells: cell.len(),
                mean_psnr: optional_mean(cell.iter().map(|r| Some(r.metrics.psnr))),
                min_psnr: cell.iter().map(|r| r.metrics.psnr).fold(f64::INFINITY, f64::min),
                mean_ssim: mean(&cell.iter().map(|r| r.metrics.ssim).collect::<Vec<_>>()),
                mean_vifp: optional_mean(cell.iter().map(|r| r.metrics.vifp)),
                mean_fsim: optional_mean(cell.iter().map(|r| r.metrics.fsim)),
                budget_violations: cell.iter().filter(|r| !r.within_budget).count(),
                bound_violations: cell.iter().filter(|r| !r.meets_psnr_bound).count(),
            }
        })
        .collect();
    Ok(ImperceptibilityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        plan: plan.clone(),
        psnr_bound: psnr_bound(plan.config.eps_v),
        rows,
        summaries,
    })
}
