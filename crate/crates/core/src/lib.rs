//! Composite quantile sufficient dimension reduction.
//!
//! Estimates the central subspace of a regression of `Y` on `X` by combining
//! local polynomial quantile fits across a grid of quantile levels. Two
//! estimators are provided: an adaptively weighted outer product of
//! gradients ([`qopg_fit`]) and a composite quantile minimum average variance
//! estimator ([`qmave_fit`]). Sliced inverse regression ([`sir_fit`]) serves as
//! a baseline, and [`sim`] holds the Monte Carlo harness.

pub mod error;
pub mod linalg;
pub mod opg;
pub mod qmave;
pub mod quantile;
pub mod selection;
pub mod sim;
pub mod sir;

pub use error::{Error, Result};
pub use linalg::{orthonormalize, projection, symmetric_eigen, EigenDecomposition};
pub use opg::{composite_opg, level_opg, qopg_fit, qopg_initial, CompositeOpg, CsEstimate, GradientField, LevelOpg, QopgConfig};
pub use qmave::{qmave_fit, QmaveConfig, QmaveState};
pub use selection::{
    modified_cv_bandwidths, normal_inv_cdf, plan_bandwidths, rule_of_thumb_bandwidth, select_dimension_cv, BandwidthPlan,
    BandwidthRule, CvSmoother, DimensionCvConfig, DimensionSelection,
};
pub use sim::{run_replicates, subspace_error, ErrorDist, EstimatorKind, ModelKind, SimReport, SimSpec};
pub use sir::{sir_fit, SirConfig};
