//! Image immunization: projections, the editing-deviation loss, PGD, the
//! flat-gradient update, embedding refinement and the alternating loop.

mod config;
mod objective;
mod run;
mod steps;

pub use config::{AttackTarget, TdaeConfig};
pub use objective::{compute_benign_target, loss, mse_on, project_linf, ImageObjective, Objective};
pub use run::{
    pgd_immunize, tdae_immunize, tpa_immunize, ImmunizationResult, IterationRecord, Method, TpaSettings,
};
pub use steps::{dpd_refine, fdm_gradient, fdm_step, pgd_step, tpa_gradient, FdmDiagnostics, DIRECTION_EPS};
