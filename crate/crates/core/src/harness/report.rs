//! Sweep tables as CSV or JSON, with floats at 9 significant digits.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use super::sweep::SweepRow;
use crate::util::{format_sig9, parse_extended_f64};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["lambda", "tau_margin", "beam", "mean_cost", "mean_inconsistency", "mean_rho", "mean_L"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("format must be csv or json, got {other:?}"))),
        }
    }
}

fn sig9_number(v: f64) -> Value {
    if v.is_finite() {
        json!(format_sig9(v).parse::<f64>().expect("formatted float parses"))
    } else {
        json!(format_sig9(v))
    }
}

fn row_fields(r: &SweepRow) -> [f64; 6] {
    [r.lambda, r.tau_margin, r.mean_cost, r.mean_inconsistency, r.mean_rho, r.mean_loss]
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        let [l, t, c, i, rho, loss] = row_fields(r);
        w.write_record([
            format_sig9(l),
            format_sig9(t),
            r.beam.to_string(),
            format_sig9(c),
            format_sig9(i),
            format_sig9(rho),
            format_sig9(loss),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| Error::InvalidConfig(format!("csv report: {m}"));
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| parse_extended_f64(&rec[i]).ok_or_else(|| bad(format!("bad number {:?}", &rec[i])));
        rows.push(SweepRow {
            lambda: f(0)?,
            tau_margin: f(1)?,
            beam: rec[2].parse().map_err(|_| bad(format!("bad beam {:?}", &rec[2])))?,
            mean_cost: f(3)?,
            mean_inconsistency: f(4)?,
            mean_rho: f(5)?,
            mean_loss: f(6)?,
        });
    }
    Ok(rows)
}

/// JSON row with the CSV's column order.
#[derive(Serialize)]
struct JsonRow {
    lambda: Value,
    tau_margin: Value,
    beam: usize,
    mean_cost: Value,
    mean_inconsistency: Value,
    mean_rho: Value,
    #[serde(rename = "mean_L")]
    mean_loss: Value,
}

pub fn rows_to_json(rows: &[SweepRow]) -> Result<String> {
    let arr: Vec<JsonRow> = rows
        .iter()
        .map(|r| {
            let [l, t, c, i, rho, loss] = row_fields(r);
            JsonRow {
                lambda: sig9_number(l),
                tau_margin: sig9_number(t),
                beam: r.beam,
                mean_cost: sig9_number(c),
                mean_inconsistency: sig9_number(i),
                mean_rho: sig9_number(rho),
                mean_loss: sig9_number(loss),
            }
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&arr)?;
    s.push('\n');
    Ok(s)
}

pub fn rows_from_json(text: &str) -> Result<Vec<SweepRow>> {
    serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("json report: {e}")))
}

pub fn render(rows: &[SweepRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => rows_to_csv(rows),
        ReportFormat::Json => rows_to_json(rows),
    }
}

/// Parses rows from either format, detected from the first non-blank character.
pub fn parse_rows(text: &str) -> Result<Vec<SweepRow>> {
    match text.trim_start().chars().next() {
        Some('[') => rows_from_json(text),
        _ => rows_from_csv(text),
    }
}

pub fn write_report(rows: &[SweepRow], format: ReportFormat, out: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("report needs at least one row".into()));
    }
    std::fs::write(out, render(rows, format)?).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<SweepRow> {
        vec![
            SweepRow {
                lambda: 0.5,
                tau_margin: 0.0,
                beam: 1,
                mean_cost: 12.345678912345,
                mean_inconsistency: 1.0 / 3.0,
                mean_rho: 0.6666666666666,
                mean_loss: 12.5,
            },
            SweepRow {
                lambda: 2.0,
                tau_margin: f64::INFINITY,
                beam: 4,
                mean_cost: 20.0,
                mean_inconsistency: 0.0,
                mean_rho: 0.0,
                mean_loss: 20.0,
            },
        ]
    }

    #[test]
    fn csv_layout() {
        let text = rows_to_csv(&rows()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "lambda,tau_margin,beam,mean_cost,mean_inconsistency,mean_rho,mean_L");
        assert_eq!(lines[1], "0.5,0,1,12.3456789,0.333333333,0.666666667,12.5");
        assert_eq!(lines[2], "2,inf,4,20,0,0,20");
    }

    #[test]
    fn json_keeps_column_order() {
        let text = rows_to_json(&rows()).unwrap();
        let first_row: Vec<&str> = text.lines().skip(2).take(7).map(|l| l.trim().split(':').next().unwrap()).collect();
        let expected: Vec<String> = CSV_HEADER.iter().map(|h| format!("\"{h}\"")).collect();
        assert_eq!(first_row, expected);
        assert!(text.contains("\"tau_margin\": \"inf\""));
    }

    #[test]
    fn round_trips_are_stable() {
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let first = parse_rows(&render(&rows(), format).unwrap()).unwrap();
            let second = parse_rows(&render(&first, format).unwrap()).unwrap();
            assert_eq!(first, second);
            assert_eq!(render(&first, format).unwrap(), render(&rows(), format).unwrap());
            for (a, b) in first.iter().zip(rows()) {
                assert!((a.mean_cost - b.mean_cost).abs() < 1e-7);
                assert_eq!(a.tau_margin, b.tau_margin);
            }
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(rows_from_csv("a,b\n1,2\n").is_err());
        assert!(rows_from_csv("lambda,tau_margin,beam,mean_cost,mean_inconsistency,mean_rho,mean_L\nx,0,1,1,1,1,1\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&[], ReportFormat::Csv, &dir.path().join("x.csv")).is_err());
        let p = dir.path().join("ok.csv");
        write_report(&rows(), ReportFormat::Csv, &p).unwrap();
        assert_eq!(parse_rows(&std::fs::read_to_string(p).unwrap()).unwrap().len(), 2);
    }
}
