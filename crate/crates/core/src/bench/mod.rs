//! Benchmark suites, the geometric-mean metric and evaluation reports.

mod generate;
mod metric;
mod report;
mod suite;

use std::path::PathBuf;

pub use generate::{generate_benchmark, generate_suite, Benchmark, Origin, MAX_OPS, MIN_OPS};
pub use metric::{geometric_mean_metric, improvement_percent, MetricResult, MetricRow, RowRatio};
pub use report::{
    compare_reports, random_bindings, run_evaluation, tensors_close, write_report, EvalReport, EvalRow, RatioDelta,
    RowStatus,
};
pub use suite::{read_suite, write_suite, MANIFEST_FILE};

use crate::agents::AgentError;
use crate::env::EnvError;
use crate::graph::ParseError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid suite request: {0}")]
    InvalidRange(String),
    #[error("suite is empty")]
    EmptySuite,
    #[error("metric undefined: all {0} rows excluded")]
    MetricUndefined(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}
