//! Experiment orchestration: configuration, single trajectories, seeded
//! ensembles, hitting-time sweeps and the oracle suite.

pub mod config;
pub mod ensemble;
pub mod experiments;
pub mod trajectory;
pub mod verify;

pub use config::{Init, NoiseKind, RunConfig, CONFIG_KEYS};
pub use ensemble::{
    init_thread_pool, run_batch, run_ensemble, thread_cap, EnsembleSummary, THREADS_ENV,
};
pub use experiments::{
    certify_initialization, counterexample_experiment, epsilon_sweep, fit_scaling, hitting_times,
    monitor_ensemble, regret_report, sample_complexity, scaling_sweep, sweep_config, sweep_points,
    CounterexampleParams, CounterexampleResult, HitResult, HitSummary, MonitorSummary, RegretRow,
    ScalingFit, SweepPoint, SweepTask, DEFAULT_MAX_T,
};
pub use trajectory::{run_trajectory, write_csv, Row, TrajectoryRecord, CSV_HEADER};
pub use verify::{drift_agreement, normalization_invariants, verify_suite, SuiteSize};
