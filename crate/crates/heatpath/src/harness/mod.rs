//! Run configuration, convergence sweeps, the property suite and report
//! emission.

pub mod config;
pub mod convergence;
pub mod props;
pub mod report;

pub use config::{config_hash, emit_config, load_config, parse_config, RunConfig};
pub use convergence::{run_convergence, run_estimates, run_oracle_eval};
pub use props::{billiard_suite, run_property_suite, PropertyReport, PropertyResult};
pub use report::{
    emit_convergence, emit_estimates, emit_trace, ConvergenceReport, OutFormat, PointEstimate,
};
