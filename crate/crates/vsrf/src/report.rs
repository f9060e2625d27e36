//! Tab-separated tables and JSON result records.
//!
//! Every table starts with a header line. PSNR of identical volumes is
//! printed as `inf`; the JSON records use the string `"inf"` for it.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};
use vsrf_core::pipeline::{ExperimentReport, SweepRow};
use vsrf_core::QualityReport;

pub const QUALITY_HEADER: &str = "id\tmethod\tpsnr_db\tssim";
pub const SWEEP_HEADER: &str = "setting\tid\tmethod\tpsnr_db\tssim";

pub fn fmt_psnr(p: f64) -> String {
    if p.is_infinite() && p > 0.0 {
        "inf".into()
    } else {
        format!("{p:.4}")
    }
}

pub fn fmt_ssim(s: f64) -> String {
    format!("{s:.6}")
}

/// One result record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub id: String,
    pub method: String,
    #[serde(serialize_with = "psnr_json")]
    pub psnr_db: f64,
    pub ssim: f64,
}

fn psnr_json<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
    if p.is_finite() {
        s.serialize_f64(*p)
    } else {
        s.serialize_str("inf")
    }
}

impl Record {
    pub fn from_quality(q: &QualityReport, method: &str) -> Self {
        Self {
            setting: None,
            id: q.id.clone(),
            method: method.into(),
            psnr_db: q.psnr_db,
            ssim: q.ssim,
        }
    }
}

/// Per-volume and mean records of an experiment, both methods.
pub fn experiment_records(report: &ExperimentReport, setting: Option<&str>) -> Vec<Record> {
    let mut out = Vec::new();
    for row in report.table_rows() {
        for (method, q) in [("vsrf", &row.vsrf), ("tricubic", &row.tricubic)] {
            out.push(Record {
                setting: setting.map(str::to_string),
                id: row.id.clone(),
                method: method.into(),
                psnr_db: q.psnr_db,
                ssim: q.ssim,
            });
        }
    }
    out
}

pub fn sweep_records(rows: &[SweepRow]) -> Vec<Record> {
    rows.iter()
        .flat_map(|r| experiment_records(&r.report, Some(&r.label)))
        .collect()
}

/// Tab-separated table; includes the `setting` column when any record has one.
pub fn table(records: &[Record]) -> String {
    let with_setting = records.iter().any(|r| r.setting.is_some());
    let mut s = String::new();
    s.push_str(if with_setting { SWEEP_HEADER } else { QUALITY_HEADER });
    s.push('\n');
    for r in records {
        if with_setting {
            s.push_str(r.setting.as_deref().unwrap_or(""));
            s.push('\t');
        }
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.id, r.method, fmt_psnr(r.psnr_db), fmt_ssim(r.ssim));
    }
    s
}

pub fn json(records: &[Record]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records serialize");
    s.push('\n');
    s
}
