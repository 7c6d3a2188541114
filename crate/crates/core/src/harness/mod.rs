//! Experiment configuration, seeded execution and output files.

mod config;
mod output;
mod run;

pub use config::{AlgoSpec, EnvSpec, ExperimentConfig, NetSpec, NtkDiagSpec, Profile, CI_WIDTH};
pub use output::{
    batches_csv, emit_outputs, per_round_csv, summary_csv, BATCHES_HEADER, PER_ROUND_HEADER,
    SUMMARY_HEADER,
};
pub use run::{
    build_policy, instance_environment, network_config, ntk_subsample, play, run_experiment,
    ExperimentResult, InstanceInfo, RoundRow, RunRecord,
};
