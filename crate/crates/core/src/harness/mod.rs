//! Configuration, alignment, metrics and persistence for batches of runs.

pub mod align;
pub mod config;
pub mod experiment;
pub mod records;

pub use align::{align_components, align_with, direct_mse, factor_mse, tensor_mse, Gauge};
pub use config::{Algorithm, ExperimentConfig};
pub use experiment::{compare_amp_als, generate_problem, run_experiment, run_phase, summarize, write_outputs};
pub use records::{CompareRow, CompareTable, Method, RunRecord};
