//! CSV ingestion with one feature/label encoding shared by source and target.
//!
//! A feature column is numeric when its cell in the first data row of the first
//! file parses as a number; otherwise it is categorical and gets one-hot encoded
//! with categories in first-appearance order (source rows before target rows).

use std::path::Path;

use super::{LabeledSample, Label, Task};
use crate::error::{Error, Result};

/// A header plus raw string records.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub file: String,
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> Result<RawTable> {
    let file = path.display().to_string();
    let io_err = |e: csv::Error| -> Error {
        let row = e.position().map(|p| p.line().saturating_sub(1) as usize).unwrap_or(0);
        Error::Ingest { file: file.clone(), row, column: String::new(), message: e.to_string() }
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(io_err)?;
    let headers: Vec<String> = reader.headers().map_err(io_err)?.iter().map(str::to_owned).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Ingest {
            file,
            row: 0,
            column: String::new(),
            message: "file is empty or has no header row".into(),
        });
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(io_err)?;
        records.push(rec.iter().map(str::to_owned).collect());
    }
    if records.is_empty() {
        return Err(Error::Ingest { file, row: 0, column: String::new(), message: "no data rows".into() });
    }
    Ok(RawTable { file, headers, records })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoding {
    Numeric { name: String },
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name } | ColumnEncoding::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { categories, .. } => categories.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub label_column: String,
    pub task: Task,
    pub columns: Vec<ColumnEncoding>,
    /// Label names by category id (classification only).
    pub label_categories: Vec<String>,
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok()
}

fn column_index(table: &RawTable, name: &str) -> Result<usize> {
    table.headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
        file: table.file.clone(),
        row: 0,
        column: name.to_owned(),
        message: "column not found in header".into(),
    })
}

impl Encoding {
    /// Fits the encoding on the union of `tables`, in order.
    pub fn fit(tables: &[&RawTable], label_column: &str, task: Task) -> Result<Encoding> {
        let first = tables.first().ok_or_else(|| Error::Usage("no tables to encode".into()))?;
        column_index(first, label_column)?;
        let feature_names: Vec<&String> = first.headers.iter().filter(|h| *h != label_column).collect();
        for t in tables {
            column_index(t, label_column)?;
            if t.headers.len() != first.headers.len() {
                return Err(Error::Ingest {
                    file: t.file.clone(),
                    row: 0,
                    column: String::new(),
                    message: format!("expected {} columns, found {}", first.headers.len(), t.headers.len()),
                });
            }
            for name in &feature_names {
                column_index(t, name)?;
            }
        }

        let mut columns = Vec::with_capacity(feature_names.len());
        for name in feature_names {
            let j = column_index(first, name)?;
            if parse_number(&first.records[0][j]).is_some() {
                columns.push(ColumnEncoding::Numeric { name: name.clone() });
            } else {
                let mut categories: Vec<String> = Vec::new();
                for t in tables {
                    let jt = column_index(t, name)?;
                    for rec in &t.records {
                        if !categories.contains(&rec[jt]) {
                            categories.push(rec[jt].clone());
                        }
                    }
                }
                columns.push(ColumnEncoding::Categorical { name: name.clone(), categories });
            }
        }

        let mut label_categories = Vec::new();
        if task == Task::Classification {
            for t in tables {
                let jl = column_index(t, label_column)?;
                for rec in &t.records {
                    if !label_categories.contains(&rec[jl]) {
                        label_categories.push(rec[jl].clone());
                    }
                }
            }
        }
        Ok(Encoding { label_column: label_column.to_owned(), task, columns, label_categories })
    }

    /// Encoded feature dimension.
    pub fn dim(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    pub fn encode(&self, table: &RawTable) -> Result<Vec<LabeledSample>> {
        let label_idx = column_index(table, &self.label_column)?;
        let col_idx: Vec<usize> =
            self.columns.iter().map(|c| column_index(table, c.name())).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(table.records.len());
        for (r, rec) in table.records.iter().enumerate() {
            let row = r + 1;
            let cell_err = |column: &str, message: String| Error::Ingest {
                file: table.file.clone(),
                row,
                column: column.to_owned(),
                message,
            };
            let mut features = Vec::with_capacity(self.dim());
            for (enc, &j) in self.columns.iter().zip(&col_idx) {
                let cell = &rec[j];
                match enc {
                    ColumnEncoding::Numeric { name } => {
                        let v = parse_number(cell)
                            .ok_or_else(|| cell_err(name, format!("non-numeric value `{cell}`")))?;
                        if !v.is_finite() {
                            return Err(cell_err(name, format!("non-finite value `{cell}`")));
                        }
                        features.push(v);
                    }
                    ColumnEncoding::Categorical { name, categories } => {
                        let k = categories
                            .iter()
                            .position(|c| c == cell)
                            .ok_or_else(|| cell_err(name, format!("unknown category `{cell}`")))?;
                        features.extend((0..categories.len()).map(|i| if i == k { 1.0 } else { 0.0 }));
                    }
                }
            }
            let cell = &rec[label_idx];
            let label = match self.task {
                Task::Classification => Label::Class(
                    self.label_categories
                        .iter()
                        .position(|c| c == cell)
                        .ok_or_else(|| cell_err(&self.label_column, format!("unknown label `{cell}`")))?,
                ),
                Task::Regression => {
                    let v = parse_number(cell)
                        .ok_or_else(|| cell_err(&self.label_column, format!("non-numeric label `{cell}`")))?;
                    if !v.is_finite() {
                        return Err(cell_err(&self.label_column, format!("non-finite label `{cell}`")));
                    }
                    Label::Value(v)
                }
            };
            out.push(LabeledSample { features, label });
        }
        Ok(out)
    }
}

/// Loads one file with an encoding fitted on that file alone.
pub fn load_csv(path: &Path, label_column: &str, task: Task) -> Result<Vec<LabeledSample>> {
    let table = read_table(path)?;
    Encoding::fit(&[&table], label_column, task)?.encode(&table)
}

/// Loads source and target with a single encoding fitted on both.
pub fn load_pair(
    source: &Path,
    target: &Path,
    label_column: &str,
    task: Task,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>, Encoding)> {
    let s = read_table(source)?;
    let t = read_table(target)?;
    let encoding = Encoding::fit(&[&s, &t], label_column, task)?;
    let src = encoding.encode(&s)?;
    let tgt = encoding.encode(&t)?;
    Ok((src, tgt, encoding))
}

/// Writes samples with header `x1..xd,<label_column>`.
pub fn write_csv(path: &Path, samples: &[LabeledSample], label_column: &str) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let dim = samples.first().map_or(0, LabeledSample::dim);
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.push(label_column.to_owned());
    w.write_record(&header).map_err(io)?;
    for s in samples {
        let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        rec.push(match s.label {
            Label::Class(c) => c.to_string(),
            Label::Value(v) => v.to_string(),
        });
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}
