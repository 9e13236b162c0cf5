//! Training, execution, baselines and metrics over a [`RunConfig`].

mod config;
mod execute;
mod metrics;
mod screen;
mod train;

pub use config::{DataSource, EvalConfig, GridFiles, RunConfig, RunContext};
pub use execute::{eval_env, execute_episode, run_method, write_logs, Controller, EpisodeLog, Method, MethodRun};
pub use metrics::{
    evaluate_metrics, improvement, quartiles, with_improvements, write_metrics, write_unsafe_counts, write_voltage_distribution,
    BusSummary, EpisodeCounts, EvalReport,
};
pub use screen::{fallback, verdict, RunMode, Screen};
pub use train::{
    write_training_counts, write_training_curve, EpisodeRecord, Policy, TrainOutput, Trainer, CHECKPOINT_FILE, RESUME_FILE,
};
