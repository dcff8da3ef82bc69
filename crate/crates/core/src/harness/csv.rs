use std::fmt::Write;

use super::eval::{EvalKind, ImperceptibilityReport, TransferReport};
use super::probes::{AblationSeries, EfficiencyReport, FlatnessReport};

pub const CSV_TRANSFER_HEADER: &str = "schema_version,kind,method,source,target,target_index,trial,run_seed,image,deviation,final_loss,psnr,ssim,vifp,vifp_scales,fsim,grad_calls";
pub const CSV_SWEEP_HEADER: &str = "schema_version,method,ratio,lambda,h,mean_intra_deviation,mean_cross_deviation";
pub const CSV_IMPERCEPTIBILITY_HEADER: &str =
    "schema_version,method,trial,run_seed,image,linf,within_budget,meets_psnr_bound,psnr,ssim,vifp,vifp_scales,fsim";
pub const CSV_FLATNESS_HEADER: &str = "schema_version,method,trial,run_seed,image,max_grad_norm,mean_grad_norm,draws";
pub const CSV_EFFICIENCY_HEADER: &str = "schema_version,trial,run_seed,fdm_calls_per_iteration,tpa_calls_per_iteration,fdm_median_iteration_secs,tpa_median_iteration_secs,fdm_final_loss,tpa_final_loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per scored cell. Floats use the shortest round-trip form; absent
/// metrics are empty fields.
pub fn transfer_csv(report: &TransferReport) -> String {
    let kind = match report.kind {
        EvalKind::Intra => "intra",
        EvalKind::Cross => "cross",
    };
    let mut out = String::from(CSV_TRANSFER_HEADER);
    out.push('\n');
    for r in &report.rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{kind},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            report.schema_version,
            r.method,
            r.source,
            r.target,
            r.target_index,
            r.trial,
            r.run_seed,
            r.image,
            r.deviation,
            r.final_loss,
            m.psnr,
            m.ssim,
            opt(m.vifp),
            m.vifp_scales,
            opt(m.fsim),
            r.grad_calls
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// One line per swept ratio.
pub fn ablation_csv(series: &AblationSeries) -> String {
    let mut out = String::from(CSV_SWEEP_HEADER);
    out.push('\n');
    for p in &series.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            series.schema_version,
            series.method,
            p.ratio,
            p.lambda,
            p.h,
            p.mean_intra_deviation,
            opt(p.mean_cross_deviation)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn imperceptibility_csv(report: &ImperceptibilityReport) -> String {
    let mut out = String::from(CSV_IMPERCEPTIBILITY_HEADER);
    out.push('\n');
    for r in &report.rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            report.schema_version,
            r.method,
            r.trial,
            r.run_seed,
            r.image,
            r.linf,
            r.within_budget,
            r.meets_psnr_bound,
            m.psnr,
            m.ssim,
            opt(m.vifp),
            m.vifp_scales,
            opt(m.fsim)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn flatness_csv(report: &FlatnessReport) -> String {
    let mut out = String::from(CSV_FLATNESS_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            report.schema_version,
            r.method,
            r.trial,
            r.run_seed,
            r.image,
            r.stats.max_grad_norm,
            r.stats.mean_grad_norm,
            r.stats.draws
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// One line per trial. The two `_secs` columns are wall time and vary between runs.
pub fn efficiency_csv(report: &EfficiencyReport) -> String {
    let mut out = String::from(CSV_EFFICIENCY_HEADER);
    out.push('\n');
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            report.schema_version,
            r.trial,
            r.run_seed,
            r.fdm_calls_per_iteration,
            r.tpa_calls_per_iteration,
            r.fdm_median_iteration_secs,
            r.tpa_median_iteration_secs,
            r.fdm_final_loss,
            r.tpa_final_loss
        )
        .expect("writing to a String cannot fail");
    }
    out
}
