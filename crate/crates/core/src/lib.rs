//! Tabular performative reinforcement learning.
//!
//! The environment reacts to the deployed policy: transitions and rewards are
//! functions of it. This crate evaluates such environments exactly, estimates
//! performative gradients from value queries alone, and runs zeroth-order
//! Frank-Wolfe over floored policy sets next to a repeated-retraining baseline.
//! [`theory`] evaluates the constants of the convergence analysis and checks the
//! inequalities numerically.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod eval;
pub mod grad;
pub mod mdp;
pub mod optim;
pub mod rng;
pub mod table;
pub mod theory;

pub use env::{
    estimate_d_min, estimate_sensitivity, guaranteed_d_min, DynamicsRule, PerformativeEnv,
    SensitivityConstants, SensitivityEstimate,
};
pub use error::{Error, Result};
pub use eval::{
    analytic_grad_fixed, eval_decomposition, noisy_value, performative_value, RegCoefficient, RegKind,
    ValueDecomposition,
};
pub use grad::{
    fd_performative_gradient, l0_basis, project_l0, sample_direction, sample_direction_with, zo_gradient,
    zo_gradient_with, DirectionSample, GradEstimate, SamplingScheme,
};
pub use mdp::{
    min_policy_mass, occupancy_measure, random_floored_policy, random_policy, OccupancyMeasure, Policy,
    RewardTable, TabularMdpBase, TransitionKernel,
};
pub use optim::{
    fw_step, gap_from_gradient, lmo, npg_solve, repeated_retraining, run_zfw, stationarity_gap, FwConfig,
    GapDomain, GradSource, IterationRecord, RunResult,
};
pub use rng::{seeded, SeededRng, StreamKey};
pub use table::ActionTable;
pub use theory::{compute_constants, theory_hyperparams, TheoryConstants, TheorySchedule};
