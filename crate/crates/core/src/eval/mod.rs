//! Identifying metrics, distribution distances and evaluation reports.

pub mod distance;
pub mod metrics;
pub mod report;

pub use distance::{ks_distance, wasserstein_1d, DistanceError};
pub use metrics::{
    identifying_metric, identifying_metric_with, mean, std_dev, MetricKind, MetricOptions,
    MetricSample,
};
pub use report::{
    degeneration_rate, distance_report, histogram, mean_metric, trend_report, uniqueness_rate,
    DistanceEntry, EvalReport, Histogram, ProfileEntry, QualityEntry, TrendVerdict,
};
