//! CSV and JSON emission of metrics records.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::MetricsRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to report")]
    Empty,
    #[error("unknown report format `{0}` (expected csv or obj)")]
    UnknownFormat(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    /// JSON array of objects.
    Obj,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "obj" | "json" => Ok(ReportFormat::Obj),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

/// Flat row shared by both formats; absent values serialize as empty CSV
/// fields and JSON `null`.
#[derive(Debug, Serialize)]
struct Row<'a> {
    kernel: &'a str,
    vlen: u32,
    mode: &'a str,
    coverage: Option<f64>,
    perm_per_vec: Option<f64>,
    scalar_share: Option<f64>,
    vector_share: Option<f64>,
    packunpack_share: Option<f64>,
    unvec_share: Option<f64>,
    vlr_run_avg: Option<f64>,
    cycles: u64,
    speedup: Option<f64>,
}

impl<'a> From<&'a MetricsRecord> for Row<'a> {
    fn from(r: &'a MetricsRecord) -> Self {
        let d = r.distribution;
        Row {
            kernel: &r.kernel,
            vlen: r.vlen,
            mode: &r.mode,
            coverage: r.coverage,
            perm_per_vec: r.perm_per_vector,
            scalar_share: d.map(|d| d.scalar),
            vector_share: d.map(|d| d.vector),
            packunpack_share: d.map(|d| d.pack_unpack),
            unvec_share: d.map(|d| d.unvectorizable),
            vlr_run_avg: r.vlr_run_avg,
            cycles: r.cycles,
            speedup: r.speedup,
        }
    }
}

pub fn emit_report<W: Write>(records: &[MetricsRecord], format: ReportFormat, out: W) -> Result<(), ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows: Vec<Row> = records.iter().map(Row::from).collect();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        ReportFormat::Obj => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn report_string(records: &[MetricsRecord], format: ReportFormat) -> Result<String, ReportError> {
    let mut buf = Vec::new();
    emit_report(records, format, &mut buf)?;
    Ok(String::from_utf8(buf).expect("reports are UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{DynamicCounts, MetricsRecord};

    fn record() -> MetricsRecord {
        let s = DynamicCounts { kernel: "k".into(), scalar_fp: 4, ..Default::default() };
        let v = DynamicCounts {
            kernel: "k".into(),
            vector: 2,
            vector_lanes: 4,
            mask_runs: vec![(2, 2)],
            ..Default::default()
        };
        MetricsRecord::build(128, "vlv", (&s, 40), (&v, 20)).unwrap()
    }

    #[test]
    fn csv_header_and_row() {
        let text = report_string(&[record()], ReportFormat::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "kernel,vlen,mode,coverage,perm_per_vec,scalar_share,vector_share,packunpack_share,unvec_share,vlr_run_avg,cycles,speedup"
        );
        assert_eq!(lines.next().unwrap(), "k,128,vlv,1.0,0.0,0.0,1.0,0.0,0.0,2.0,20,2.0");
    }

    #[test]
    fn obj_uses_null_for_absent_values() {
        let mut r = record();
        r.coverage = None;
        let text = report_string(&[r], ReportFormat::Obj).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v[0]["coverage"].is_null());
        assert_eq!(v[0]["speedup"], 2.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(report_string(&[], ReportFormat::Csv), Err(ReportError::Empty)));
        assert!(matches!("xml".parse::<ReportFormat>(), Err(ReportError::UnknownFormat(_))));
    }
}
