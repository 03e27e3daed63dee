//! Named dataset presets.
//!
//! The six benchmark tables are read from `<data_dir>/<file>`; nothing is
//! downloaded. `scripts/extract_datasets.py` produces the Adult and
//! California-housing files.

use std::path::Path;

use super::csv_io::{load_csv, scan_categories, CsvOptions};
use super::preprocess::NumericMode;
use super::synthetic::{make_synthetic_with, SyntheticConfig};
use super::{ColumnKind, ColumnSchema, TabularDataset, Task};
use crate::error::DataError;

#[derive(Clone, Debug, PartialEq)]
pub enum PresetSource {
    Csv {
        file: &'static str,
        /// Columns read as categorical; every other non-label column is numerical.
        categorical: &'static [&'static str],
    },
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub task: Task,
    pub num_classes: Option<usize>,
    pub mode: NumericMode,
    pub source: PresetSource,
    pub expected_rows: Option<usize>,
    pub expected_numerical: usize,
    pub expected_categorical: usize,
}

impl Preset {
    pub fn num_features(&self) -> usize {
        self.expected_numerical + self.expected_categorical
    }
}

const ADULT_CATEGORICAL: &[&str] = &[
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "gender",
    "native-country",
];

fn csv_preset(
    name: &'static str,
    file: &'static str,
    task: Task,
    num_classes: Option<usize>,
    mode: NumericMode,
    rows: usize,
    numerical: usize,
    categorical: &'static [&'static str],
) -> Preset {
    Preset {
        name,
        task,
        num_classes,
        mode,
        source: PresetSource::Csv { file, categorical },
        expected_rows: Some(rows),
        expected_numerical: numerical,
        expected_categorical: categorical.len(),
    }
}

fn synthetic_preset(name: &'static str, task: Task) -> Preset {
    let mut cfg = SyntheticConfig::new(1500, 6, task, 0);
    cfg.categorical = 2;
    cfg.separation = 3.0;
    Preset {
        name,
        task,
        num_classes: match task {
            Task::Regression => None,
            Task::Binclass => Some(2),
            Task::Multiclass => Some(cfg.num_classes),
        },
        mode: NumericMode::Quantile,
        source: PresetSource::Synthetic(cfg),
        expected_rows: Some(1500),
        expected_numerical: 6,
        expected_categorical: 2,
    }
}

fn registry() -> Vec<Preset> {
    use NumericMode::*;
    vec![
        csv_preset("AD", "adult.csv", Task::Binclass, Some(2), Quantile, 48842, 6, ADULT_CATEGORICAL),
        csv_preset("HI", "higgs.csv", Task::Binclass, Some(2), Quantile, 98050, 28, &[]),
        csv_preset("HE", "helena.csv", Task::Multiclass, Some(100), Standardize, 65196, 27, &[]),
        csv_preset("JA", "jannis.csv", Task::Multiclass, Some(4), Quantile, 83733, 54, &[]),
        csv_preset("AL", "aloi.csv", Task::Multiclass, Some(1000), Standardize, 108000, 128, &[]),
        csv_preset("CA", "california_housing.csv", Task::Regression, None, Quantile, 20640, 8, &[]),
        synthetic_preset("synthetic", Task::Binclass),
        synthetic_preset("synthetic-multiclass", Task::Multiclass),
        synthetic_preset("synthetic-regression", Task::Regression),
    ]
}

pub fn preset_names() -> Vec<&'static str> {
    registry().into_iter().map(|p| p.name).collect()
}

pub fn preset(name: &str) -> Result<Preset, DataError> {
    registry()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| DataError::UnknownPreset(name.to_string()))
}

/// Loads a preset's raw (unpreprocessed) dataset.
pub fn load_preset(name: &str, data_dir: impl AsRef<Path>) -> Result<(Preset, TabularDataset), DataError> {
    let preset = preset(name)?;
    let dataset = match &preset.source {
        PresetSource::Synthetic(cfg) => make_synthetic_with(cfg)?.dataset,
        PresetSource::Csv { file, categorical } => {
            let path = data_dir.as_ref().join(file);
            if !path.exists() {
                return Err(DataError::DatasetFileMissing(path));
            }
            let options = CsvOptions { label_column: "target".into(), num_classes: preset.num_classes };
            let headers = csv::Reader::from_path(&path)?.headers()?.clone();
            let cat_columns = scan_categories(&path, categorical)?;
            let schema: Vec<ColumnSchema> = headers
                .iter()
                .filter(|h| *h != options.label_column)
                .map(|h| match cat_columns.iter().find(|c| c.name == h) {
                    Some(c) => c.clone(),
                    None => ColumnSchema::numerical(h),
                })
                .collect();
            let n_num = schema.iter().filter(|c| c.kind == ColumnKind::Numerical).count();
            if n_num != preset.expected_numerical || schema.len() - n_num != preset.expected_categorical {
                return Err(DataError::SchemaMismatch(format!(
                    "{} expects {} numerical and {} categorical columns, file has {} and {}",
                    preset.name,
                    preset.expected_numerical,
                    preset.expected_categorical,
                    n_num,
                    schema.len() - n_num
                )));
            }
            load_csv(&path, &schema, preset.task, &options)?
        }
    };
    Ok((preset, dataset))
}
