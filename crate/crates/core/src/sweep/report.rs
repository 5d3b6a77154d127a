use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AggregateRow, RunRow, SweepResult};
use crate::error::{Error, Result};

pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const PLOT_FILE: &str = "plot.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// `rows.csv` and `aggregates.csv`.
    Csv,
    /// `plot.json`: one mean-accuracy series per degree over a log-scaled
    /// `eta` axis.
    PlotData,
}

/// Writes the report files into `out_dir`, creating it if needed, and
/// returns their paths.
pub fn emit_report(
    result: &SweepResult,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::invalid("cannot report an empty sweep"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match format {
        ReportFormat::Csv => {
            let rows = out_dir.join(ROWS_FILE);
            write_rows_csv(&result.rows, create(&rows)?).map_err(|e| at(&rows, e))?;
            let aggs = out_dir.join(AGGREGATES_FILE);
            write_aggregates_csv(&result.aggregates, create(&aggs)?).map_err(|e| at(&aggs, e))?;
            Ok(vec![rows, aggs])
        }
        ReportFormat::PlotData => {
            let path = out_dir.join(PLOT_FILE);
            let mut text = serde_json::to_string_pretty(&plot_data(result))?;
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn write_csv<T: Serialize, W: Write>(items: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for item in items {
        w.serialize(item)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn read_csv<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_rows_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    write_csv(rows, out)
}

pub fn write_aggregates_csv<W: Write>(aggregates: &[AggregateRow], out: W) -> Result<()> {
    write_csv(aggregates, out)
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<RunRow>> {
    read_csv(input)
}

pub fn read_aggregates_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    read_csv(input)
}

/// Plot specification: x is `eta` on a base-2 log axis, y is seed-averaged
/// test accuracy with the sample standard deviation as error bars.
pub fn plot_data(result: &SweepResult) -> serde_json::Value {
    let mut degrees: Vec<_> = result.aggregates.iter().map(|a| a.degree).collect();
    degrees.sort();
    degrees.dedup();
    let series: Vec<_> = degrees
        .iter()
        .map(|&degree| {
            let points: Vec<_> = result
                .aggregates
                .iter()
                .filter(|a| a.degree == degree)
                .map(|a| {
                    serde_json::json!({
                        "eta": a.eta,
                        "mean_accuracy": a.mean_accuracy,
                        "std_accuracy": a.std_accuracy,
                        "max_accuracy": a.max_accuracy,
                    })
                })
                .collect();
            serde_json::json!({
                "label": format!("degree {degree}"),
                "degree": degree.as_u8(),
                "points": points,
            })
        })
        .collect();
    serde_json::json!({
        "x_axis": { "field": "eta", "label": "eta", "scale": "log", "base": 2 },
        "y_axis": { "field": "mean_accuracy", "label": "mean test accuracy", "error": "std_accuracy" },
        "series": series,
    })
}
