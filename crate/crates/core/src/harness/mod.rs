//! Experiment configs, seeded runs, named sweeps and CSV output.

pub mod config;
pub mod csv;
pub mod run;
pub mod scenarios;

pub use config::{ExperimentConfig, TrainingConfig};
pub use csv::{emit_csv, emit_summary, records_to_string, sig6, HEADER, SUMMARY_HEADER};
pub use run::{
    check_invariants, pool_bound_bytes, run_experiment, run_seed, summarize, Experiment, RunRecord, SeedRun, Stat,
    Summary,
};
pub use scenarios::{
    base_logistic, base_quadratic, byzantine_rate_configs, scale_configs, scenario_table, RULES, SCENARIOS,
};
