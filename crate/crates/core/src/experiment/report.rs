use serde::{Deserialize, Serialize};

use super::ExperimentRecord;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(crate::error::Error::InvalidConfig(format!(
                "unknown format '{other}'"
            ))),
        }
    }
}

/// Median and quartiles of one metric within one `(n, s)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub s: f64,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
}

type Getter = fn(&ExperimentRecord) -> Option<f64>;

pub(crate) const METRICS: [(&str, Getter); 13] = [
    ("error_gamma_pct", |r| r.error_gamma_pct),
    ("cosine_gamma", |r| r.cosine_gamma),
    ("error_psi_pct", |r| r.error_psi_pct),
    ("cosine_psi", |r| r.cosine_psi),
    ("error_mu_pct", |r| r.error_mu_pct),
    ("cosine_mu", |r| r.cosine_mu),
    ("error_sigma_pct", |r| r.error_sigma_pct),
    ("cosine_sigma", |r| r.cosine_sigma),
    ("error_b_pct", |r| r.error_b_pct),
    ("cosine_b", |r| r.cosine_b),
    ("error_c_pct", |r| r.error_c_pct),
    ("final_loss", |r| r.final_loss),
    ("wall_time", |r| r.wall_time),
];

const HEADER: [&str; 20] = [
    "n",
    "s",
    "trial",
    "seed",
    "variant",
    "lambda",
    "error_gamma_pct",
    "cosine_gamma",
    "error_psi_pct",
    "cosine_psi",
    "error_mu_pct",
    "cosine_mu",
    "error_sigma_pct",
    "cosine_sigma",
    "error_b_pct",
    "cosine_b",
    "error_c_pct",
    "final_loss",
    "fit_error",
    "wall_time",
];

const SUMMARY_HEADER: [&str; 7] = ["n", "s", "metric", "count", "median", "q25", "q75"];

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

/// Per-cell summary in order of first appearance of each `(n, s)`.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut cells: Vec<(usize, f64)> = Vec::new();
    for r in records {
        if !cells.iter().any(|&(n, s)| n == r.n && s == r.s) {
            cells.push((r.n, r.s));
        }
    }
    let mut out = Vec::new();
    for (n, s) in cells {
        for (name, get) in METRICS {
            let mut vals: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.s == s)
                .filter_map(get)
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                n,
                s,
                metric: name.to_string(),
                count: vals.len(),
                median: quantile(&vals, 0.5),
                q25: quantile(&vals, 0.25),
                q75: quantile(&vals, 0.75),
            });
        }
    }
    out
}

/// 17 significant digits, enough to round-trip any double.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn record_row(r: &ExperimentRecord) -> Vec<String> {
    let mut row = vec![
        r.n.to_string(),
        fmt_f64(r.s),
        r.trial.to_string(),
        r.seed.to_string(),
        r.variant.to_string(),
        fmt_opt(r.lambda),
    ];
    row.extend(METRICS[..12].iter().map(|(_, get)| fmt_opt(get(r))));
    row.push(r.fit_error.clone().unwrap_or_default());
    row.push(fmt_opt(r.wall_time));
    row
}

fn csv_bytes(records: &[ExperimentRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    let summary = summarize(records);
    if summary.is_empty() {
        return Ok(out);
    }
    out.push(b'\n');
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for row in &summary {
        w.write_record([
            row.n.to_string(),
            fmt_f64(row.s),
            row.metric.clone(),
            row.count.to_string(),
            fmt_f64(row.median),
            fmt_f64(row.q25),
            fmt_f64(row.q75),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Serializes records plus the per-cell summary block.
pub fn report(records: &[ExperimentRecord], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => csv_bytes(records),
        ReportFormat::Json => {
            let rep = Report {
                records: records.to_vec(),
                summary: summarize(records),
            };
            let mut bytes = serde_json::to_vec_pretty(&rep)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
    }
}

pub fn parse_json_report(bytes: &[u8]) -> Result<Report> {
    Ok(serde_json::from_slice(bytes)?)
}
