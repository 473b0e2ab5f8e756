//! Distributionally robust offline reinforcement learning for d-rectangular
//! linear MDPs with total-variation uncertainty sets.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: tabular linear DRMDP instances, policies, value tables and
//!   offline dataset collection under the nominal kernel.
//! * [`io`]: JSON instance files and JSON-lines dataset files.
//! * [`tv`]: the total-variation inner problem, solved exactly through its
//!   one-dimensional dual.
//! * [`robust_dp`]: exact robust dynamic programming used as ground truth.
//! * [`estimators`]: ridge regression, diagonal pessimism penalties and the
//!   truncated variance estimators.
//! * [`algorithms`]: DRPVI, VA-DRPVI and the modified (alpha-free variance)
//!   VA-DRPVI.
//! * [`instances`]: the hard-instance family and random simplex instances.
//! * [`experiment`]: suboptimality, pessimism and coverage diagnostics, plus
//!   the seeded K-sweep harness.

pub mod algorithms;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod instances;
pub mod io;
pub mod mdp;
pub mod robust_dp;
pub mod seed;
pub mod tv;

pub use algorithms::{
    compute_nu_hat, drpvi, modified_va_drpvi, run_algorithm, va_drpvi, AlgoConfig, AlgorithmKind,
    AlgorithmOutput, BetaMode, ModelSpec, RewardMode,
};
pub use error::{Error, Result};
pub use instances::{
    build_hard_instance, hard_instance_optimal_value, random_simplex_mdp, HardInstanceParams,
};
pub use mdp::{
    collect_offline_dataset, nominal_kernel, FeatureMap, OfflineDataset, PolicyTable, QTable,
    StochasticPolicy, TabularLinearDRMDP, Transition, ValueTable,
};
pub use robust_dp::{
    compute_kappa, range_shrinkage_bound, robust_policy_evaluation, robust_value_iteration,
    uncertainty_function, RobustDPResult,
};
pub use tv::{clip, truncate, tv_dual_inf, tv_dual_sup, tv_worst_case_distribution, DualSolution};

/// Absolute tolerance for simplex and probability checks.
pub const PROB_TOL: f64 = 1e-12;
