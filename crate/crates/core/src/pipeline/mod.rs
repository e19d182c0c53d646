//! Configuration, file formats and the end-to-end commands: simulate a
//! logged dataset, fit reward models, train, evaluate off-policy, sweep
//! preferences and evaluate against the simulator.

mod commands;
mod config;
mod formats;

pub use commands::{
    cmd_eval_sim, cmd_evaluate, cmd_fit_reward_models, cmd_gen_data, cmd_sweep, cmd_train, evaluation_rows,
    fit_reward_models, reward_spec_for, run_sweep, run_sweep_job, simulate_policy, train_policy, EstimateRow,
    RewardModels, SimReport, SweepRow,
};
pub use config::{OpeConfig, PipelineConfig, RewardConfig, RewardVariant, SweepCell, SweepSpec, FORMAT_VERSION};
pub use formats::{
    dataset_to_string, read_checkpoint, read_dataset, read_models, rows_to_bytes, sibling, write_atomic,
    write_checkpoint, write_dataset, write_models, Checkpoint, ReportFormat, RewardModelsFile, RunManifest,
};
