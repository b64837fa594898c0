//! Experiment harness: runs configured scenarios over repetitions and writes
//! per-repetition JSON, aggregate statistics and plot data.
//!
//! Results land in `<results_root>/<name>-<hash>/`, where the hash covers
//! the resolved configuration and scale, so reruns overwrite byte-identical
//! files and changed configurations never collide.

mod config;
pub mod presets;
mod report;
mod run;

pub use config::{
    AttackKind, ConfigFormat, ExperimentConfig, Scale, Scenario, DEFAULT_DESK_REPETITIONS, DEFAULT_FULL_REPETITIONS,
};
pub use report::{
    aggregate, attack_dominates, compare_baselines, mean_stderr, read_aggregate, write_aggregate, write_plot_data,
    AggregateRow, ComparisonRow, PlotPoint, RunManifest, SeriesRole, SeriesStat, AGGREGATE_FILE, MANIFEST_FILE,
};
pub use run::{
    load_scenario_data, repetition_seed, resolve_data_path, run_experiment, run_repetition, AttackOutcome,
    BaselineOutcome, RepetitionRecord, RepetitionResult, RepetitionStatus, RunOptions, RunSummary, ENV_DATA_ROOT,
    ENV_RESULTS_ROOT, ENV_WORKERS,
};
