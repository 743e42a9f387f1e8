//! Bundled measured data.

/// Mean corrected coincidences of a representative dataset, one row per sub-run.
pub const REPRESENTATIVE_COUNTS_CSV: &str = include_str!("../fixtures/representative_counts.csv");

/// Singles and coincidences of the four blocker sets used for the γ fit.
pub const BUNDLED_COUNTS_CSV: &str = include_str!("../fixtures/bundled_counts.csv");

/// Published LGI, WLGI and NSIT means with their Δ.
pub const REFERENCE_RESULT_REPORT_JSON: &str = include_str!("../fixtures/reference_result_report.json");
