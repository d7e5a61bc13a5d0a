//! Benchmark harness: dataset loading, the training mixture, evaluation
//! sweeps, reports and run configuration.

mod config;
mod dataset;
mod eval;
mod mixture;
mod train;

pub use config::{
    build_clients, Clients, ConfigError, EndpointConfig, FixtureConfig, HarnessConfig,
    MixtureConfig, SearchEndpoint, Workload,
};
pub use dataset::{load_dataset, parse_dataset, DatasetError, QASample, SourceDataset};
pub use eval::{
    config_fingerprint, evaluate, reference_rows, Aggregates, EvalError, EvalReport,
    ReferenceRow, ReportMeta, SampleRow,
};
pub use mixture::{sample_training_mixture, MixtureError};
pub use train::sample_groups;
