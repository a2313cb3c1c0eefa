//! Local polynomial quantile smoothing: Taylor designs, kernels and the
//! weighted check-loss solver.

mod design;
mod local;
mod solver;

pub use design::{build_multi_index_set, design_vector, kernel_weight, KernelKind, KernelSpec, MultiIndexSet};
pub(crate) use design::sup_distance;
pub use local::{extract_gradient, fit_local_quantile, LocalFit, LocalFitSpec};
pub(crate) use local::fit_rows;
pub use solver::{check_loss, weighted_quantile, DenseDesign, Design, QuantileProblem, QuantileSolution, SolverConfig};
pub(crate) use solver::{accumulate_row, solve_spd};
