//! Seeded desk-scale experiments: intra- and cross-model evaluation,
//! imperceptibility, flatness probes, the `lambda / h` sweep and the
//! flat-gradient vs sampling-reference cost comparison.
//!
//! Every number is a function of the [`ExperimentPlan`] alone. Cells run in
//! parallel but results are assembled in `(trial, image, method)` order, so
//! reports are bitwise reproducible apart from wall-time fields.

mod csv;
mod eval;
mod images;
mod plan;
mod probes;
mod stats;

pub use csv::{
    ablation_csv, efficiency_csv, flatness_csv, imperceptibility_csv, transfer_csv, CSV_EFFICIENCY_HEADER,
    CSV_FLATNESS_HEADER, CSV_IMPERCEPTIBILITY_HEADER, CSV_SWEEP_HEADER, CSV_TRANSFER_HEADER,
};
pub use eval::{
    psnr_bound, run_cross_eval, ROUNDING_SLACK, run_imperceptibility, run_intra_eval, Comparison, EvalKind,
    ImperceptibilityReport, ImperceptibilityRow, ImperceptibilitySummary, MethodSummary, ReportRow, TransferReport,
};
pub use images::{procedural_image, ImageSetSpec, SCENE_KINDS};
pub use plan::{default_ratios, ExperimentPlan, FlatnessSpec, REPORT_SCHEMA_VERSION};
pub use probes::{
    run_ablation_lambda_h, run_efficiency_comparison, run_flatness, run_flatness_probe, AblationSeries,
    EfficiencyReport, EfficiencyRow, FlatnessReport, FlatnessRow, FlatnessStats, InteriorCheck, SweepCell,
    SweepPoint, ADOPTED_RATIO,
};
pub use stats::{mean, median, sign_test_p, SignTest};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::immunize::Method;
    use crate::models::{build_model, EditModel, Family, ModelFamilySpec};

    fn small_plan() -> ExperimentPlan {
        let mut p = ExperimentPlan::new(ModelFamilySpec::new(Family::CondConv, 3));
        p.targets.push(ModelFamilySpec::new(Family::CondMlp, 4));
        p.images = ImageSetSpec {
            count: 2,
            height: 16,
            width: 16,
            seed: 0,
        };
        p.trials = 2;
        p.config.iterations = 6;
        p.config.dpd_period = 3;
        p.config.dpd_iterations = 2;
        p
    }

    #[test]
    fn zero_budget_leaves_the_edit_unchanged() {
        let mut p = small_plan();
        p.config.eps_v = 0.0;
        let r = run_intra_eval(&p).unwrap();
        for row in &r.rows {
            assert_eq!(row.deviation, 0.0);
            assert_eq!(row.metrics.psnr, f64::INFINITY);
            assert_eq!(row.metrics.ssim, 1.0);
        }
        let imp = run_imperceptibility(&p).unwrap();
        assert_eq!(imp.violations(), 0);
        let csv = imperceptibility_csv(&imp);
        assert_eq!(csv.lines().count(), imp.rows.len() + 1);
        assert!(csv.lines().skip(1).all(|l| l.contains(",true,true,inf,1,")));
        assert!(imp.rows.iter().all(|r| r.linf == 0.0));
    }

    #[test]
    fn report_has_one_row_per_cell_method_and_target() {
        let mut p = small_plan();
        p.methods = vec![Method::Fdm, Method::Tdae];
        let intra = run_intra_eval(&p).unwrap();
        // the baseline is added to the two requested methods
        assert_eq!(intra.rows.len(), 2 * 2 * 3);
        assert_eq!(intra.comparisons.len(), 2);
        assert_eq!(intra.comparison(Method::Tdae, 0).unwrap().test.n, 2);
        p.targets.push(ModelFamilySpec::new(Family::CondConv, 9));
        let cross = run_cross_eval(&p).unwrap();
        assert_eq!(cross.rows.len(), 2 * 2 * 3 * 2);
        assert_eq!(cross.summary(Method::Pgd, 1).unwrap().cells, 4);
        assert!(cross.rows.iter().all(|r| r.source != r.target));
    }

    #[test]
    fn cross_eval_without_targets_is_a_plan_error() {
        let mut p = small_plan();
        p.targets.clear();
        assert!(matches!(run_cross_eval(&p), Err(crate::error::Error::Plan(_))));
    }

    #[test]
    fn reports_are_reproducible() {
        let p = small_plan();
        let a = run_cross_eval(&p).unwrap();
        let b = run_cross_eval(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(transfer_csv(&a), transfer_csv(&b));
        let csv = transfer_csv(&a);
        assert_eq!(csv.lines().next(), Some(CSV_TRANSFER_HEADER));
        assert_eq!(csv.lines().count(), a.rows.len() + 1);
        let cols = CSV_TRANSFER_HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn flatness_probe_at_radius_zero_is_the_gradient_norm_at_the_point() {
        let m = build_model(&ModelFamilySpec::new(Family::CondConv, 1)).unwrap();
        let x0 = procedural_image(0, 16, 16, 0);
        let c = crate::ndtensor::Tensor::full(&[m.descriptor().embed_dim], 0.2);
        let delta = crate::ndtensor::Tensor::full(x0.shape(), 0.01);
        let spec = FlatnessSpec {
            radius: 0.0,
            draws: 3,
            seed: 1,
        };
        let s = run_flatness_probe(&m, &x0, &c, &delta, &spec).unwrap();
        let one = run_flatness_probe(&m, &x0, &c, &delta, &FlatnessSpec { draws: 1, ..spec.clone() }).unwrap();
        assert_eq!(s.max_grad_norm, one.max_grad_norm);
        assert!((s.mean_grad_norm - one.max_grad_norm).abs() <= 1e-12 * one.max_grad_norm);
        assert!(s.max_grad_norm > 0.0);
        let wide = FlatnessSpec { radius: 0.02, ..spec };
        let a = run_flatness_probe(&m, &x0, &c, &delta, &wide).unwrap();
        assert_eq!(a, run_flatness_probe(&m, &x0, &c, &delta, &wide).unwrap());
        assert!(a.max_grad_norm >= a.mean_grad_norm);
    }

    #[test]
    fn flatness_report_compares_against_the_baseline() {
        let mut p = small_plan();
        p.flatness.draws = 4;
        let r = run_flatness(&p).unwrap();
        assert_eq!(r.rows.len(), 2 * 2 * 2);
        assert_eq!(flatness_csv(&r).lines().count(), r.rows.len() + 1);
        assert_eq!(r.comparisons.len(), 1);
        assert_eq!(r.comparisons[0].0, Method::Tdae);
        assert_eq!(r.comparisons[0].1.n, 2);
    }

    #[test]
    fn sweep_covers_every_ratio_and_ratio_zero_is_pgd() {
        let p = small_plan();
        let ratios = default_ratios();
        let s = run_ablation_lambda_h(&p, &ratios).unwrap();
        assert_eq!(s.points.len(), ratios.len());
        assert_eq!(s.cells.len(), ratios.len() * 4);
        assert_eq!(s.ratio_zero_matches_baseline, Some(true));
        assert_eq!(s.interior_not_dominated.as_ref().unwrap().trials, 2);
        for (pt, r) in s.points.iter().zip(&ratios) {
            assert_eq!(pt.ratio, *r);
            assert_eq!(pt.lambda, r * p.config.h);
            assert!(pt.mean_cross_deviation.is_some());
        }
        let csv = ablation_csv(&s);
        assert_eq!(csv.lines().count(), ratios.len() + 1);
        assert!(run_ablation_lambda_h(&p, &[]).is_err());
        let without_zero = run_ablation_lambda_h(&p, &[0.2]).unwrap();
        assert_eq!(without_zero.ratio_zero_matches_baseline, None);
        assert!(without_zero.interior_not_dominated.is_none());
    }

    #[test]
    fn sampling_reference_costs_two_k_plus_one_over_two() {
        let mut p = small_plan();
        p.trials = 1;
        let r = run_efficiency_comparison(&p, 5).unwrap();
        assert_eq!(r.expected_call_ratio, 5.5);
        assert_eq!(r.call_ratio, 5.5);
        assert_eq!(r.rows[0].fdm_calls_per_iteration, 2.0);
        assert_eq!(r.rows[0].tpa_calls_per_iteration, 11.0);
        assert!(run_efficiency_comparison(&p, 0).is_err());
        let cols = CSV_EFFICIENCY_HEADER.split(',').count();
        assert!(efficiency_csv(&r).lines().all(|l| l.split(',').count() == cols));
    }
}
