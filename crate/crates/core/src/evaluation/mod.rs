//! Retrieval metrics, the identification protocol and the timing benchmark.

mod bench;
mod metrics;
mod protocol;

pub use bench::{bench_matching, BenchConfig, BenchReport, ModeTiming};
pub use metrics::{
    average_precision, cmc, mean_average_precision, roc, CmcCurve, RocCurve, TrialResult,
};
pub use protocol::{
    aggregate_repetitions, dsr_trials, prepare_gallery, resizing_trials, summarize,
    verification_scores, MatchSettings, MetricsSummary, RepeatedSummary,
};
