use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AuditReport, OutcomeTables};
use crate::error::{Error, Result};
use crate::matching::NoduleOutcome;
use crate::stats::SensitivityCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableValue {
    Text(String),
    Count(usize),
    /// Rendered with four decimal places.
    Number(f64),
    Flag(bool),
    Empty,
}

impl TableValue {
    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(TableValue::Empty, TableValue::Number)
    }

    fn csv(&self) -> String {
        match self {
            TableValue::Text(s) => s.clone(),
            TableValue::Count(n) => n.to_string(),
            TableValue::Number(x) => format!("{x:.4}"),
            TableValue::Flag(b) => b.to_string(),
            TableValue::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            TableValue::Text(s) => serde_json::Value::String(s.clone()),
            TableValue::Count(n) => serde_json::Value::from(*n),
            TableValue::Number(x) => {
                let rounded: f64 = format!("{x:.4}").parse().unwrap_or(*x);
                serde_json::Value::from(rounded)
            }
            TableValue::Flag(b) => serde_json::Value::Bool(*b),
            TableValue::Empty => serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<TableValue>>,
}

fn cell_values(cell: &SensitivityCell) -> [TableValue; 5] {
    [
        TableValue::Count(cell.detected),
        TableValue::Count(cell.total),
        TableValue::opt(cell.sensitivity),
        TableValue::opt(cell.ci.map(|c| c.0)),
        TableValue::opt(cell.ci.map(|c| c.1)),
    ]
}

const CELL_COLUMNS: [&str; 5] = ["detected", "total", "sensitivity", "ci_low", "ci_high"];

fn with_cell_columns(lead: &[&'static str]) -> Vec<&'static str> {
    lead.iter().copied().chain(CELL_COLUMNS).collect()
}

impl OutcomeTables {
    pub fn condition_summary_table(&self) -> Table {
        Table {
            name: "condition_summary",
            columns: with_cell_columns(&["condition"]),
            rows: self
                .condition_summary
                .iter()
                .map(|(c, cell)| {
                    std::iter::once(TableValue::Text(c.label().into()))
                        .chain(cell_values(cell))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn phase_table(&self) -> Table {
        Table {
            name: "phase_table",
            columns: with_cell_columns(&["condition", "bin_center"]),
            rows: self
                .phase_table
                .iter()
                .map(|(c, cell)| {
                    [TableValue::Text(c.label().into()), TableValue::opt(cell.bin_center)]
                        .into_iter()
                        .chain(cell_values(cell))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn ratio_table(&self) -> Table {
        sensitivity_table("ratio_table", "stratum", &self.ratio_table)
    }

    pub fn risk_table(&self) -> Table {
        risk_table(&self.risk_list)
    }

    pub fn all_tables(&self) -> Vec<Table> {
        vec![
            self.condition_summary_table(),
            self.phase_table(),
            self.ratio_table(),
            self.risk_table(),
        ]
    }
}

/// Label / bin-centre table in the ratio-table layout; also used for simulator sweeps.
pub fn sensitivity_table(name: &'static str, label_column: &'static str, cells: &[SensitivityCell]) -> Table {
    Table {
        name,
        columns: with_cell_columns(&[label_column, "bin_center"]),
        rows: cells
            .iter()
            .map(|cell| {
                [TableValue::Text(cell.label.clone()), TableValue::opt(cell.bin_center)]
                    .into_iter()
                    .chain(cell_values(cell))
                    .collect()
            })
            .collect(),
    }
}

fn risk_table(outcomes: &[NoduleOutcome]) -> Table {
    Table {
        name: "risk_list",
        columns: vec![
            "series_id",
            "condition",
            "nodule_index",
            "diameter_mm",
            "ratio",
            "zphase",
            "detected",
            "risk_flag",
        ],
        rows: outcomes
            .iter()
            .map(|o| {
                vec![
                    TableValue::Text(o.series_id.clone()),
                    TableValue::Text(o.condition.label().into()),
                    TableValue::Count(o.nodule_index),
                    TableValue::opt(o.diameter_mm),
                    TableValue::opt(o.ratio),
                    TableValue::Number(o.zphase.value()),
                    TableValue::Flag(o.detected),
                    TableValue::Flag(o.risk_flag),
                ]
            })
            .collect(),
    }
}

pub fn render_table(table: &Table, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&table.columns)?;
            for row in &table.rows {
                w.write_record(row.iter().map(TableValue::csv))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Config(format!("rendering {}: {e}", table.name)))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        OutputFormat::Json => {
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: serde_json::Map<String, serde_json::Value> = table
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&rows)?;
            text.push('\n');
            Ok(text)
        }
    }
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Write one file per table plus `run_metadata.json`; returns the paths written.
pub fn emit_tables(report: &AuditReport, out_dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for table in report.tables.all_tables() {
        let path = out_dir.join(format!("{}.{}", table.name, format.extension()));
        written.push(write(path, &render_table(&table, format)?)?);
    }
    let mut meta = serde_json::to_string_pretty(&report.metadata)?;
    meta.push('\n');
    written.push(write(out_dir.join("run_metadata.json"), &meta)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(detected: usize, total: usize) -> SensitivityCell {
        SensitivityCell {
            label: "0.4500".into(),
            bin_center: Some(0.45),
            detected,
            total,
            sensitivity: (total > 0).then(|| detected as f64 / total as f64),
            ci: (total > 0).then_some((0.5, 0.75)),
        }
    }

    #[test]
    fn numbers_have_four_decimals() {
        let t = sensitivity_table("t", "stratum", &[cell(39, 63)]);
        let csv = render_table(&t, OutputFormat::Csv).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "0.4500,0.4500,39,63,0.6190,0.5000,0.7500");
    }

    #[test]
    fn empty_cells_render_blank() {
        let t = sensitivity_table("t", "stratum", &[cell(0, 0)]);
        let csv = render_table(&t, OutputFormat::Csv).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "0.4500,0.4500,0,0,,,");
        let json: serde_json::Value = serde_json::from_str(&render_table(&t, OutputFormat::Json).unwrap()).unwrap();
        assert!(json[0]["sensitivity"].is_null());
    }

    #[test]
    fn json_matches_csv_values() {
        let t = sensitivity_table("t", "stratum", &[cell(39, 63), cell(58, 73)]);
        let json: serde_json::Value = serde_json::from_str(&render_table(&t, OutputFormat::Json).unwrap()).unwrap();
        let csv = render_table(&t, OutputFormat::Csv).unwrap();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        for (row, obj) in reader.records().zip(json.as_array().unwrap()) {
            let row = row.unwrap();
            for (col, field) in t.columns.iter().zip(row.iter()) {
                let v = &obj[*col];
                match v {
                    serde_json::Value::Number(n) => assert_eq!(n.as_f64().unwrap(), field.parse::<f64>().unwrap()),
                    serde_json::Value::String(s) => assert_eq!(s, field),
                    other => panic!("unexpected {other}"),
                }
            }
        }
    }
}
