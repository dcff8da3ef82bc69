//! Transferable image immunization against differentiable editors.
//!
//! The crate is organised bottom-up:
//!
//! * [`ndtensor`]: dense tensors and reverse-mode differentiation.
//! * [`models`]: surrogate editing models `f(x, c) -> y`.
//! * [`immunize`]: PGD, the flat-gradient update, prompt-embedding refinement
//!   and the full alternating immunization loop.
//! * [`metrics`]: PSNR, SSIM, VIFP and FSIM.
//! * [`harness`]: seeded experiments and reports.

pub mod error;
pub mod harness;
pub mod immunize;
pub mod metrics;
pub mod models;
pub mod ndtensor;

pub use error::{Error, Result};
pub use models::{build_model, EditModel, Family, Instrumented, ModelFamilySpec, Surrogate};
pub use ndtensor::{Graph, Tensor, Var};
pub use harness::{ExperimentPlan, REPORT_SCHEMA_VERSION};
pub use immunize::{ImmunizationResult, Method, TdaeConfig};
pub use metrics::MetricReport;
