//! Diagnostics and the K-sweep harness.

pub mod checks;
pub mod config;
pub mod diagnostics;
pub mod plot;
pub mod sweep;

pub use checks::{run_checks, CheckOutcome};
pub use config::{load_config, parse_config, InstanceSource, SweepConfig};
pub use diagnostics::{
    check_partial_coverage, check_pessimism, compute_phi_report, evaluate_suboptimality, PessimismReport,
    PhiWeights,
};
pub use sweep::{default_behavior, execute_sweep, run_sweep, write_sweep, SweepResult, SweepRow};
