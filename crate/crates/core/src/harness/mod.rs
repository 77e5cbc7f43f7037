//! Config-driven experiment orchestration: build a network, pretrain
//! clients, run protocols, evaluate, persist.

mod config;
mod experiment;
mod report;

pub use config::{
    load_config, DatasetKind, DatasetSpec, ExperimentConfig, ModelSpec, PartitionSpecToml,
    PretrainSpec, ProtocolKind, ProtocolSpec, QueryPolicy, SweepLevel, SweepSpec,
};
pub use experiment::{local_pretrain, run_experiment, PretrainLog, RunRecord, SeedNetwork};
pub use report::{
    read_results_csv, result_rows, results_csv_string, summarize, summary_csv_string, summary_table,
    write_results_csv, ResultRow, SummaryRow,
};
