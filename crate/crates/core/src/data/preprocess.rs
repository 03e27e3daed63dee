//! Column-wise preprocessing fitted on training rows only.
//!
//! Numerical columns go either through a quantile transform onto standard
//! normal scores or through standardization; categorical columns are
//! re-encoded into dense integer indices with one reserved slot for values
//! never seen during fitting; regression labels are standardized.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ColumnKind, ColumnSchema, TabularDataset, Task};
use crate::error::DataError;

const MAX_QUANTILES: usize = 1000;
const BOUNDS_THRESHOLD: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericMode {
    #[default]
    Quantile,
    Standardize,
}

impl std::str::FromStr for NumericMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quantile" => Ok(NumericMode::Quantile),
            "standardize" => Ok(NumericMode::Standardize),
            other => Err(format!("unknown preprocessing mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    /// Empirical quantiles (non-decreasing) paired with their cumulative
    /// probabilities; values are mapped through the interpolated CDF and then
    /// through the standard normal quantile function.
    Quantile { quantiles: Vec<f64>, references: Vec<f64> },
    Standardize { mean: f64, std: f64 },
    /// Constant training column; values are left untouched.
    PassThrough,
}

impl ColumnTransform {
    fn fit(values: &[f64], mode: NumericMode) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var == 0.0 {
            return ColumnTransform::PassThrough;
        }
        match mode {
            NumericMode::Standardize => ColumnTransform::Standardize { mean, std: var.sqrt() },
            NumericMode::Quantile => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let m = values.len().min(MAX_QUANTILES);
                let references: Vec<f64> = if m == 1 {
                    vec![0.0]
                } else {
                    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
                };
                let mut quantiles: Vec<f64> = references.iter().map(|&p| percentile(&sorted, p)).collect();
                for i in 1..quantiles.len() {
                    quantiles[i] = quantiles[i].max(quantiles[i - 1]);
                }
                ColumnTransform::Quantile { quantiles, references }
            }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ColumnTransform::PassThrough => x,
            ColumnTransform::Standardize { mean, std } => (x - mean) / std,
            ColumnTransform::Quantile { quantiles, references } => {
                let m = quantiles.len();
                let (lo, hi) = (quantiles[0], quantiles[m - 1]);
                let u = if x - BOUNDS_THRESHOLD < lo {
                    0.0
                } else if x + BOUNDS_THRESHOLD > hi {
                    1.0
                } else {
                    // Averaging the forward and the mirrored interpolation sends
                    // runs of repeated quantiles to the middle of their span.
                    let forward = interp(x, m, |i| quantiles[i], |i| references[i]);
                    let backward = interp(
                        -x,
                        m,
                        |i| -quantiles[m - 1 - i],
                        |i| -references[m - 1 - i],
                    );
                    0.5 * (forward - backward)
                };
                let u = u.clamp(BOUNDS_THRESHOLD, 1.0 - BOUNDS_THRESHOLD);
                standard_normal().inverse_cdf(u)
            }
        }
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 1].
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Piecewise-linear interpolation over ascending `xp` (may repeat), clamped
/// at both ends. Picks the last knot `j` with `xp[j] <= x`.
fn interp(x: f64, len: usize, xp: impl Fn(usize) -> f64, fp: impl Fn(usize) -> f64) -> f64 {
    if x <= xp(0) {
        return fp(0);
    }
    if x >= xp(len - 1) {
        return fp(len - 1);
    }
    let (mut lo, mut hi) = (0usize, len - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xp(mid) <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (x0, x1) = (xp(lo), xp(hi));
    let (y0, y1) = (fp(lo), fp(hi));
    if x1 == x0 {
        y0
    } else {
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericColumnState {
    pub column: usize,
    pub transform: ColumnTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumnState {
    pub column: usize,
    /// Raw code -> dense index. Codes absent here map to `dictionary.len()`.
    pub dictionary: BTreeMap<usize, usize>,
}

impl CategoricalColumnState {
    pub fn reserved_index(&self) -> usize {
        self.dictionary.len()
    }

    pub fn encode(&self, code: usize) -> usize {
        self.dictionary.get(&code).copied().unwrap_or_else(|| self.reserved_index())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub mode: NumericMode,
    pub input_schema: Vec<ColumnSchema>,
    pub numerical: Vec<NumericColumnState>,
    pub categorical: Vec<CategoricalColumnState>,
    pub label: Option<LabelScaler>,
    /// Names of constant training columns passed through unchanged.
    pub constant_columns: Vec<String>,
}

impl PreprocessState {
    /// Schema of datasets produced by [`apply_preprocess`]: categorical
    /// cardinalities include the reserved slot.
    pub fn output_schema(&self) -> Vec<ColumnSchema> {
        let mut schema = self.input_schema.clone();
        for cat in &self.categorical {
            let col = &mut schema[cat.column];
            let names = col.categories.as_ref().map(|cats| {
                let mut names: Vec<String> = cat.dictionary.keys().map(|&c| cats[c].clone()).collect();
                names.push("<unseen>".into());
                names
            });
            col.cardinality = Some(cat.dictionary.len() + 1);
            col.categories = names;
        }
        schema
    }
}

pub fn fit_preprocess(train: &TabularDataset, mode: NumericMode) -> Result<PreprocessState, DataError> {
    if train.n_rows() == 0 {
        return Err(DataError::InvalidDataset("cannot fit preprocessing on an empty dataset".into()));
    }
    let mut numerical = Vec::new();
    let mut categorical = Vec::new();
    let mut constant_columns = Vec::new();
    for (j, col) in train.schema.iter().enumerate() {
        let values: Vec<f64> = train.rows.column(j).to_vec();
        match col.kind {
            ColumnKind::Numerical => {
                let transform = ColumnTransform::fit(&values, mode);
                if transform == ColumnTransform::PassThrough {
                    log::warn!("column `{}` is constant on the training rows; passing through", col.name);
                    constant_columns.push(col.name.clone());
                }
                numerical.push(NumericColumnState { column: j, transform });
            }
            ColumnKind::Categorical => {
                let mut codes: Vec<usize> = values.iter().map(|&v| v as usize).collect();
                codes.sort_unstable();
                codes.dedup();
                let dictionary = codes.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
                categorical.push(CategoricalColumnState { column: j, dictionary });
            }
        }
    }
    let label = (train.task == Task::Regression).then(|| {
        let n = train.labels.len() as f64;
        let mean = train.labels.sum() / n;
        let std = (train.labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        LabelScaler { mean, std: if std > 0.0 { std } else { 1.0 } }
    });
    Ok(PreprocessState {
        mode,
        input_schema: train.schema.clone(),
        numerical,
        categorical,
        label,
        constant_columns,
    })
}

pub fn apply_preprocess(state: &PreprocessState, dataset: &TabularDataset) -> Result<TabularDataset, DataError> {
    if dataset.schema.len() != state.input_schema.len()
        || dataset
            .schema
            .iter()
            .zip(&state.input_schema)
            .any(|(a, b)| a.name != b.name || a.kind != b.kind)
    {
        return Err(DataError::SchemaMismatch(
            "dataset columns differ from the columns the preprocessing was fitted on".into(),
        ));
    }
    let mut rows: Array2<f64> = dataset.rows.clone();
    for num in &state.numerical {
        rows.column_mut(num.column).mapv_inplace(|x| num.transform.apply(x));
    }
    for cat in &state.categorical {
        rows.column_mut(cat.column).mapv_inplace(|x| cat.encode(x as usize) as f64);
    }
    let labels: Array1<f64> = match &state.label {
        Some(scaler) if dataset.task == Task::Regression => dataset.labels.mapv(|y| scaler.apply(y)),
        _ => dataset.labels.clone(),
    };
    TabularDataset::new(state.output_schema(), rows, labels, dataset.task, dataset.num_classes)
}
