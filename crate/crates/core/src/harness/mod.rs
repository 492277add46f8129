//! Configuration, orchestration and persistence of experiments.

mod compare;
mod config;
mod io;
mod run;
mod sweep;

pub use compare::{compare_regimes, comparison_csv, Comparison, RatioDiagnostics, RegimeSlopes, RelativeSlopes};
pub use config::{
    ExperimentConfig, OutputSpec, SeriesFormat, DEFAULT_CLASSICAL_POINTS, DEFAULT_REALIZATIONS, DEFAULT_TRAJECTORIES,
    MAX_STEPS,
};
pub use io::{
    check_schema_version, final_state_csv, load_bundle, read_final_state, read_series, read_summary, series_csv,
    summary_json, write_atomic, write_bundle, OutputFiles, Summary, CODE_VERSION, FINAL_STATE_COLUMNS,
    FINAL_STATE_FILE, SCHEMA_VERSION, SERIES_COLUMNS, SERIES_FILE, SUMMARY_FILE, SUPPORTED_MAJOR,
};
pub use run::{run_experiment, AnalysisSummary, Estimate, RunBundle};
pub use sweep::{
    cell_dir, derived_seed, run_sweep, sweep_csv, CellFailure, SweepCell, SweepGrid, SweepPlan, SweepReport, SweepRow,
    SWEEP_COLUMNS,
};
