//! Versioned report documents shared by the command-line tool and tests.
//!
//! Field names are part of the on-disk format; see `docs/report-schema.md`.
//! Wall-clock time and thread counts are deliberately left out so that two
//! runs with the same configuration serialise to identical bytes.

use serde::Serialize;

use crate::mc::{ConvergenceReport, CovarianceReport, Verdict};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub identity: String,
    pub t: f64,
    #[serde(rename = "T")]
    pub end: f64,
    #[serde(rename = "N")]
    pub steps: Vec<usize>,
    #[serde(rename = "M")]
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document<R> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub config: RunConfig,
    pub results: Vec<R>,
}

impl<R: Serialize> Document<R> {
    pub fn new(config: RunConfig, results: Vec<R>) -> Self {
        Self { schema_version: SCHEMA_VERSION, tool_version: TOOL_VERSION, config, results }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report documents serialise")
    }
}

pub type VerifyDocument = Document<Verdict>;
pub type SweepDocument = Document<ConvergenceReport>;
pub type CovarianceDocument = Document<CovarianceReport>;

/// Column order of the CSV form of a verification report.
pub const VERIFY_CSV_HEADER: [&str; 12] = [
    "identity_id",
    "citation",
    "N",
    "M",
    "seed",
    "ms_error",
    "ci95_lo",
    "ci95_hi",
    "envelope",
    "scale_bound",
    "pilot_ms_error",
    "pass",
];

pub fn verify_csv_row(v: &Verdict) -> [String; 12] {
    let r = &v.report;
    [
        r.identity_id.clone(),
        r.citation.clone(),
        r.steps.to_string(),
        r.paths.to_string(),
        r.seed.to_string(),
        r.ms_error.to_string(),
        r.ci95[0].to_string(),
        r.ci95[1].to_string(),
        v.envelope.to_string(),
        v.scale_bound.to_string(),
        v.pilot_ms_error.to_string(),
        v.pass.to_string(),
    ]
}
