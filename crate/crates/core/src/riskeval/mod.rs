//! Risk metrics over exposure logs and the audit report.

mod exposure;
mod metrics;
mod report;

pub use exposure::{
    default_window, divergence_trajectory, exposure_shares, incidence, item_impressions,
    permutation_null, series_csv, window_count, ExposureShareSeries, Incidence, NullBand, WindowShares,
};
pub use metrics::{
    amplification, gini, js_divergence, novel_exposure, shares, trend_slope, DEFAULT_EPSILON,
};
pub use report::{
    build_report, CohortReport, ItemConcentration, PairDivergence, ReportMetadata, ReportOptions,
    RiskReport, REPORT_FORMAT,
};
