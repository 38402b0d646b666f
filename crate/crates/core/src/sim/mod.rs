//! Experiment orchestration: the server round loop, scenario presets and
//! reporting.

mod config;
mod experiment;
mod report;
mod round;

pub use config::{
    participants_per_round, Aggregation, ArchSpec, OutputConfig, PlateauMetric, PortionSchedule, Scenario, Seeds,
    SimConfig, OUT_DIR_ENV,
};
pub use experiment::{
    evaluation_shards, noisy_client_ids, prepare, pretrain, run_evaluation_phase, run_experiment, run_matrix,
    ExperimentResult, MatrixRun, Prepared, Pretrained,
};
pub use report::{
    average_minima, report_csv, summarize, write_json, write_report, write_score_dump, StrategySummary, Summary,
    CSV_HEADER,
};
pub use round::{run_round, sample_clients, test_examples, RoundOutcome, RoundRecord, RoundSettings, ScoreRow};
