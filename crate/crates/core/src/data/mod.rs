//! Tabular datasets: schema, CSV ingestion, preprocessing and splits.

mod csv_io;
mod preprocess;
mod presets;
mod split;
mod synthetic;

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub use csv_io::{load_csv, scan_categories, CsvOptions};
pub use preprocess::{
    apply_preprocess, fit_preprocess, ColumnTransform, LabelScaler, NumericMode, PreprocessState,
};
pub use presets::{load_preset, preset, preset_names, Preset, PresetSource};
pub use split::{split, split_indices, SplitIndices, SplitRatios};
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticConfig, SyntheticData, SyntheticTruth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binclass,
    Multiclass,
    Regression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Binclass => "binclass",
            Task::Multiclass => "multiclass",
            Task::Regression => "regression",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binclass" | "binary" => Ok(Task::Binclass),
            "multiclass" => Ok(Task::Multiclass),
            "regression" => Ok(Task::Regression),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

/// One feature column.
///
/// Categorical cells are stored as integer codes in `[0, cardinality)`. When
/// `categories` is present the CSV holds the category strings and the code is
/// the string's position in that list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numerical, cardinality: None, categories: None }
    }

    /// Categorical column whose CSV cells are already integer codes.
    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            cardinality: Some(cardinality),
            categories: None,
        }
    }

    /// Categorical column with a declared string vocabulary.
    pub fn with_categories(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            cardinality: Some(categories.len()),
            categories: Some(categories),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }
}

pub fn validate_schema(schema: &[ColumnSchema]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(DataError::InvalidSchema(format!("duplicate column `{}`", col.name)));
        }
        match (col.kind, col.cardinality) {
            (ColumnKind::Numerical, Some(_)) => {
                return Err(DataError::InvalidSchema(format!(
                    "numerical column `{}` must not declare a cardinality",
                    col.name
                )))
            }
            (ColumnKind::Categorical, None) | (ColumnKind::Categorical, Some(0)) => {
                return Err(DataError::InvalidSchema(format!(
                    "categorical column `{}` needs cardinality >= 1",
                    col.name
                )))
            }
            _ => {}
        }
        if let (Some(cats), Some(card)) = (&col.categories, col.cardinality) {
            if cats.len() != card {
                return Err(DataError::InvalidSchema(format!(
                    "column `{}` declares {} categories but cardinality {}",
                    col.name,
                    cats.len(),
                    card
                )));
            }
        }
    }
    Ok(())
}

/// A validated feature matrix with labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub schema: Vec<ColumnSchema>,
    pub rows: Array2<f64>,
    pub labels: Array1<f64>,
    pub task: Task,
    pub num_classes: Option<usize>,
}

impl TabularDataset {
    pub fn new(
        schema: Vec<ColumnSchema>,
        rows: Array2<f64>,
        labels: Array1<f64>,
        task: Task,
        num_classes: Option<usize>,
    ) -> Result<Self, DataError> {
        validate_schema(&schema)?;
        let n = rows.nrows();
        if n == 0 {
            return Err(DataError::InvalidDataset("dataset has no rows".into()));
        }
        if rows.ncols() != schema.len() {
            return Err(DataError::InvalidDataset(format!(
                "rows have {} cells but the schema has {} columns",
                rows.ncols(),
                schema.len()
            )));
        }
        if labels.len() != n {
            return Err(DataError::InvalidDataset(format!(
                "{} labels for {} rows",
                labels.len(),
                n
            )));
        }
        let num_classes = match task {
            Task::Regression => None,
            Task::Binclass => Some(num_classes.unwrap_or(2)),
            Task::Multiclass => Some(num_classes.ok_or_else(|| {
                DataError::InvalidDataset("multiclass datasets need num_classes".into())
            })?),
        };
        if task == Task::Binclass && num_classes != Some(2) {
            return Err(DataError::InvalidDataset("binclass datasets have exactly 2 classes".into()));
        }
        for (i, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::InvalidDataset(format!("label {i} is not finite")));
            }
            if let Some(c) = num_classes {
                if y < 0.0 || y.fract() != 0.0 || y as usize >= c {
                    return Err(DataError::InvalidDataset(format!(
                        "label {i} = {y} outside [0, {c})"
                    )));
                }
            }
        }
        for (j, col) in schema.iter().enumerate() {
            let column = rows.column(j);
            match col.cardinality {
                Some(card) => {
                    for (i, &v) in column.iter().enumerate() {
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= card {
                            return Err(DataError::InvalidDataset(format!(
                                "row {i}, column `{}`: code {v} outside [0, {card})",
                                col.name
                            )));
                        }
                    }
                }
                None => {
                    if let Some(i) = column.iter().position(|v| !v.is_finite()) {
                        return Err(DataError::InvalidDataset(format!(
                            "row {i}, column `{}` is not finite",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(Self { schema, rows, labels, task, num_classes })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn numerical_columns(&self) -> Vec<usize> {
        columns_of(&self.schema, ColumnKind::Numerical)
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        columns_of(&self.schema, ColumnKind::Categorical)
    }

    /// Row subset in the given order.
    pub fn select(&self, indices: &[usize]) -> TabularDataset {
        TabularDataset {
            schema: self.schema.clone(),
            rows: self.rows.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            task: self.task,
            num_classes: self.num_classes,
        }
    }
}

pub(crate) fn columns_of(schema: &[ColumnSchema], kind: ColumnKind) -> Vec<usize> {
    schema.iter().enumerate().filter(|(_, c)| c.kind == kind).map(|(j, _)| j).collect()
}
