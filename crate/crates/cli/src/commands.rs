use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tdae_core::harness::{
    ablation_csv, efficiency_csv, flatness_csv, imperceptibility_csv, run_ablation_lambda_h, run_cross_eval,
    run_efficiency_comparison, run_flatness, run_imperceptibility, run_intra_eval, transfer_csv, SignTest,
};
use tdae_core::immunize::{loss, IterationRecord};
use tdae_core::{build_model, EditModel, Method, TdaeConfig, Tensor, REPORT_SCHEMA_VERSION};

use crate::config::{EvalTask, RunConfig};
use crate::error::{CliError, Result};
use crate::image_io::{read_image, write_image, RgbImage};

const EMBED_STREAM: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// One `--assert` outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Where reports go and in which form.
#[derive(Clone, Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub format: ReportFormat,
}

impl Output {
    fn write(&self, stem: &str, json: &impl Serialize, csv: impl FnOnce() -> String) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let (path, text) = match self.format {
            ReportFormat::Json => (self.dir.join(format!("{stem}.json")), to_json(json)?),
            ReportFormat::Csv => (self.dir.join(format!("{stem}.csv")), csv()),
        };
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(format!("serializing report: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Side-car record written next to an immunized image.
#[derive(Clone, Debug, Serialize)]
pub struct ImmunizeRecord {
    pub schema_version: u32,
    pub method: Method,
    pub model: String,
    pub config: TdaeConfig,
    pub width: usize,
    pub height: usize,
    pub grad_calls: u64,
    /// Surrogate loss of the exported (snapped) image.
    pub final_loss: f64,
    /// `||x_out - x_in||_inf` of the written file, in 8-bit levels and in `[0, 1]` units.
    pub final_linf_levels: u8,
    pub final_linf: f64,
    pub records: Vec<IterationRecord>,
    /// Wall time; the only field that differs between identical runs.
    pub wall_secs: f64,
}

/// The embedding used by `tdae immunize`, drawn from the config seed.
pub fn immunize_embedding(seed: u64, dim: usize, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EMBED_STREAM);
    Tensor::from_fn(&[dim], |_| if scale == 0.0 { 0.0 } else { rng.gen_range(-scale..=scale) })
}

/// Rounds `delta` to the 8-bit grid within `levels` and applies it to `img`.
pub fn snap(img: &RgbImage, delta: &Tensor, levels: u32) -> RgbImage {
    let k = i64::from(levels);
    let data = img
        .data
        .iter()
        .zip(delta.data())
        .map(|(&p, &d)| {
            let q = ((d * 255.0).round() as i64).clamp(-k, k);
            (i64::from(p) + q).clamp(0, 255) as u8
        })
        .collect();
    RgbImage::new(img.width, img.height, data)
}

pub fn immunize(cfg: &RunConfig, input: &Path, output: &Path) -> Result<ImmunizeRecord> {
    let img = read_image(input)?;
    let spec = &cfg.immunize.model;
    if spec.channels != 3 {
        return Err(CliError::Config("immunize.model.channels must be 3 for RGB images".into()));
    }
    let model = build_model(spec)?;
    let x0 = img.to_tensor();
    let c = immunize_embedding(cfg.seed, model.descriptor().embed_dim, cfg.immunize.embedding_scale);
    let tcfg = cfg.tdae_config();
    let method = cfg.immunize.method;
    let result = method.run(&model, &x0, &c, &tcfg)?;

    let out = snap(&img, &result.delta_v, cfg.tdae.eps_v);
    let linf = img.max_level_diff(&out);
    if u32::from(linf) > cfg.tdae.eps_v {
        return Err(CliError::Internal(format!(
            "exported image exceeds the budget: {linf} > {} levels",
            cfg.tdae.eps_v
        )));
    }
    write_image(output, &out)?;

    let y0 = model.forward(&x0, &c)?;
    let record = ImmunizeRecord {
        schema_version: REPORT_SCHEMA_VERSION,
        method,
        model: spec.label(),
        config: tcfg.clone(),
        width: img.width,
        height: img.height,
        grad_calls: result.grad_calls,
        final_loss: loss(&model.forward(&out.to_tensor(), &c)?, &y0)?,
        final_linf_levels: linf,
        final_linf: f64::from(linf) / 255.0,
        records: result.records,
        wall_secs: result.wall_secs,
    };
    let sidecar = sidecar_path(output);
    std::fs::write(&sidecar, to_json(&record)?).map_err(|e| CliError::io(&sidecar, e))?;
    Ok(record)
}

/// `out.png` -> `out.png.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn sign_check(name: String, t: &SignTest, level: f64) -> Check {
    Check::new(
        name,
        t.significant(level),
        format!(
            "wins {}/{} (ties {}), p = {:.4}, means {:.6e} vs {:.6e}",
            t.wins, t.n, t.ties, t.p_value, t.mean_candidate, t.mean_baseline
        ),
    )
}

/// Runs the configured evaluation tasks, writes one report per task and
/// returns the assertion checks.
pub fn evaluate(cfg: &RunConfig, out: &Output) -> Result<(Vec<PathBuf>, Vec<Check>)> {
    let plan = cfg.experiment_plan()?;
    let level = cfg.evaluate.level;
    let mut written = Vec::new();
    let mut checks = Vec::new();
    for &task in &cfg.evaluate.tasks {
        match task {
            EvalTask::Intra | EvalTask::Cross => {
                let report = if task == EvalTask::Intra {
                    run_intra_eval(&plan)?
                } else {
                    run_cross_eval(&plan)?
                };
                written.push(out.write(task.name(), &report, || transfer_csv(&report))?);
                // the intra comparison is informational: the flatness term
                // trades surrogate loss for transfer by design
                if task == EvalTask::Cross {
                    for c in report.comparisons.iter().filter(|c| c.method == Method::Tdae) {
                        let name = format!("cross[{}]: tdae > {} deviation", c.target_index, c.baseline);
                        checks.push(sign_check(name, &c.test, level));
                    }
                }
            }
            EvalTask::Imperceptibility => {
                let report = run_imperceptibility(&plan)?;
                written.push(out.write(task.name(), &report, || imperceptibility_csv(&report))?);
                checks.push(Check::new(
                    "imperceptibility: budget and PSNR bound",
                    report.violations() == 0,
                    format!(
                        "{} violations over {} images, bound {:.2} dB",
                        report.violations(),
                        report.rows.len(),
                        report.psnr_bound
                    ),
                ));
                let base = report.summary(plan.baseline).and_then(|s| s.mean_psnr);
                for s in report.summaries.iter().filter(|s| s.method != plan.baseline) {
                    if let (Some(a), Some(b)) = (s.mean_psnr, base) {
                        checks.push(Check::new(
                            format!("imperceptibility: {} psnr gap to {}", s.method, plan.baseline),
                            (a - b).abs() < cfg.evaluate.max_psnr_gap,
                            format!("{a:.2} vs {b:.2} dB"),
                        ));
                    }
                }
            }
            EvalTask::Flatness => {
                let report = run_flatness(&plan)?;
                written.push(out.write(task.name(), &report, || flatness_csv(&report))?);
                for (m, t) in &report.comparisons {
                    let name = format!("flatness: {m} flatter than {}", plan.baseline);
                    checks.push(sign_check(name, t, level));
                }
            }
        }
    }
    Ok((written, checks))
}

pub fn ablate(cfg: &RunConfig, out: &Output) -> Result<(Vec<PathBuf>, Vec<Check>)> {
    let plan = cfg.experiment_plan()?;
    let series = run_ablation_lambda_h(&plan, &cfg.ablate.ratios)?;
    let path = out.write("ablation", &series, || ablation_csv(&series))?;
    let mut checks = Vec::new();
    if let Some(ok) = series.ratio_zero_matches_baseline {
        checks.push(Check::new(
            format!("ablate: ratio 0 reproduces {}", plan.baseline),
            ok,
            if ok { "bitwise-identical trajectories" } else { "trajectories differ" },
        ));
    }
    if let Some(i) = &series.interior_not_dominated {
        checks.push(Check::new(
            format!("ablate: ratio {} not dominated by both endpoints", i.ratio),
            2 * i.trials_not_dominated > i.trials,
            format!("{}/{} trials", i.trials_not_dominated, i.trials),
        ));
    }
    Ok((vec![path], checks))
}

pub fn bench(cfg: &RunConfig, out: &Output) -> Result<(Vec<PathBuf>, Vec<Check>)> {
    let plan = cfg.experiment_plan()?;
    let report = run_efficiency_comparison(&plan, cfg.bench.samples)?;
    let path = out.write("efficiency", &report, || efficiency_csv(&report))?;
    let checks = vec![
        Check::new(
            "bench: gradient-call ratio",
            report.call_ratio == report.expected_call_ratio,
            format!("{} (expected {})", report.call_ratio, report.expected_call_ratio),
        ),
        Check::new(
            "bench: wall-time ratio",
            report.wall_ratio >= cfg.bench.min_wall_ratio,
            format!("{:.2} (need >= {})", report.wall_ratio, cfg.bench.min_wall_ratio),
        ),
        Check::new(
            "bench: final-loss gap",
            report.loss_relative_gap <= cfg.bench.max_loss_gap,
            format!("{:.4} (need <= {})", report.loss_relative_gap, cfg.bench.max_loss_gap),
        ),
    ];
    Ok((vec![path], checks))
}
