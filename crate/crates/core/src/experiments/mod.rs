//! Experiment orchestration: epsilon ladders, scaling fits, and the
//! Gamma-limit desk-scale experiments.

pub mod config;
pub mod gamma;
pub mod regime;
pub mod scaling;

pub use gamma::{
    compactness_diagnostic, limit_field, limit_targets, liminf_diagnostic, recovery_sequence,
    CompactnessReport, CurlTarget, GammaError, GammaLimitReport, GammaRow, GammaStep,
    LimitDisplacement, LimitField, LimitTargets,
};
pub use regime::{NepsRule, RegimeError, RegimeLabel, RegimeParams};
pub use scaling::{
    cell_convergence_sweep, single_scaling_sweep, CellSweepReport, CellSweepRow, ScalingError,
    ScalingReport, ScalingRow,
};
