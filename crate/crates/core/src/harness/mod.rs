//! Experiment harness: generators, specs, seeded batch runs and reports.

pub mod experiment;
pub mod generators;

pub use experiment::{
    run_experiment, write_csv, Algorithm, ExperimentOutcome, ExperimentSpec, GameSource, Metric, Params,
    Summary, Sweep, SweepParam, Thresholds, CSV_SCHEMA_LINE, THREADS_ENV,
};
pub use generators::{generate_game, matching_pennies_chain, random_game, single_state, GameKind};
