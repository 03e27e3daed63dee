use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{validate_schema, ColumnKind, ColumnSchema, TabularDataset, Task};
use crate::error::DataError;

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub label_column: String,
    /// Required for multiclass data; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { label_column: "target".into(), num_classes: None }
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    if !path.exists() {
        return Err(DataError::DatasetFileMissing(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?)
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

/// Reads a UTF-8, comma-delimited CSV with a header row.
///
/// Every schema column and the label column must appear in the header; other
/// columns are ignored. Row indices in errors count data rows from 0.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &[ColumnSchema],
    task: Task,
    options: &CsvOptions,
) -> Result<TabularDataset, DataError> {
    validate_schema(schema)?;
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let positions = schema
        .iter()
        .map(|c| header_index(&headers, &c.name))
        .collect::<Result<Vec<_>, _>>()?;
    let label_pos = header_index(&headers, &options.label_column)?;
    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .iter()
        .map(|c| {
            c.categories
                .as_ref()
                .map(|cats| cats.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
        })
        .collect();

    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, col) in schema.iter().enumerate() {
            let raw = record.get(positions[j]).unwrap_or("");
            let mismatch = || DataError::TypeMismatch { row, col: col.name.clone(), value: raw.to_string() };
            let value = match (col.kind, &lookups[j]) {
                (ColumnKind::Numerical, _) => {
                    let v: f64 = raw.parse().map_err(|_| mismatch())?;
                    if !v.is_finite() {
                        return Err(mismatch());
                    }
                    v
                }
                (ColumnKind::Categorical, Some(lookup)) => {
                    *lookup.get(raw).ok_or_else(mismatch)? as f64
                }
                (ColumnKind::Categorical, None) => {
                    let code: usize = raw.parse().map_err(|_| mismatch())?;
                    if code >= col.cardinality.unwrap_or(0) {
                        return Err(mismatch());
                    }
                    code as f64
                }
            };
            cells.push(value);
        }
        let raw = record.get(label_pos).unwrap_or("");
        let mismatch =
            || DataError::TypeMismatch { row, col: options.label_column.clone(), value: raw.to_string() };
        let y: f64 = raw.parse().map_err(|_| mismatch())?;
        if !y.is_finite() || (task.is_classification() && (y < 0.0 || y.fract() != 0.0)) {
            return Err(mismatch());
        }
        labels.push(y);
    }
    let n = labels.len();
    if n == 0 {
        return Err(DataError::EmptyFile);
    }
    let rows = Array2::from_shape_vec((n, schema.len()), cells)
        .map_err(|e| DataError::InvalidDataset(e.to_string()))?;
    let num_classes = match task {
        Task::Regression => None,
        Task::Binclass => Some(2),
        Task::Multiclass => Some(
            options
                .num_classes
                .unwrap_or_else(|| labels.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1),
        ),
    };
    TabularDataset::new(schema.to_vec(), rows, Array1::from(labels), task, num_classes)
}

/// Builds categorical columns with sorted vocabularies observed in the file.
pub fn scan_categories(path: impl AsRef<Path>, columns: &[&str]) -> Result<Vec<ColumnSchema>, DataError> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let positions =
        columns.iter().map(|c| header_index(&headers, c)).collect::<Result<Vec<_>, _>>()?;
    let mut vocab: Vec<BTreeSet<String>> = vec![BTreeSet::new(); columns.len()];
    for record in reader.records() {
        let record = record?;
        for (v, &p) in vocab.iter_mut().zip(&positions) {
            v.insert(record.get(p).unwrap_or("").to_string());
        }
    }
    Ok(columns
        .iter()
        .zip(vocab)
        .map(|(name, v)| ColumnSchema::with_categories(*name, v.into_iter().collect()))
        .collect())
}
