//! Joint choice of per-agent processing times and channel scheduling for
//! age-of-information driven monitoring.
//!
//! The pieces, bottom up: [`aoi`] holds agent descriptions and the age
//! recursion, [`cost`] the cost families, [`threshold`] the closed-form
//! single-agent solution and Whittle index, [`optimizer`] the multiplier
//! search over all agents, [`oracle`] an independent value-iteration check,
//! [`sim`] the slot-level simulator and [`gridmap`] the mapping scenario.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aoi;
pub mod cost;
pub mod error;
pub mod gridmap;
pub mod optimizer;
pub mod oracle;
pub mod sim;
pub mod threshold;

pub use aoi::{delivery_age, reset_age, step_aoi, AgentSpec, AoiState, ResetAge, Tau, TxLen, WaitModel};
pub use cost::{
    binary_entropy, check_assumption1, entropy_of_region, AffineAoiCost, BaseCost, CostDescriptor, CostModel,
    EntropyGridCost, FnCost, PowerLawCost, QualityMap,
};
pub use error::{Error, Result};
pub use gridmap::{build_scenario, entropy_curve, spearman, MappingConfig, RegionModel};
pub use optimizer::{optimize, Codesign, CodesignResult, OptimizerConfig, OptimizerMode, StopReason};
pub use oracle::{solve_mdp, verify_threshold_structure, OracleConfig, OracleResult};
pub use sim::{compare_policies, run, Comparison, Policy, PolicyRun, SimConfig, SimReport};
pub use threshold::{
    best_tau, optimal_threshold, threshold_cost, utilization, v_function, whittle_index, AgentSolver, TauChoice,
    Threshold, ThresholdCurve, ThresholdResult,
};
