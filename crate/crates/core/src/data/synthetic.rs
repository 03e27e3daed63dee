//! Seeded fixture generators with known generating parameters.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ColumnSchema, TabularDataset, Task};
use crate::error::DataError;

pub const CATEGORICAL_CARDINALITY: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub num_features: usize,
    pub task: Task,
    pub seed: u64,
    /// Distance between class means along feature 0, in noise standard deviations.
    pub separation: f64,
    pub num_classes: usize,
    /// Regression noise standard deviation.
    pub noise_std: f64,
    /// Extra categorical columns with cardinality [`CATEGORICAL_CARDINALITY`].
    pub categorical: usize,
}

impl SyntheticConfig {
    pub fn new(n: usize, num_features: usize, task: Task, seed: u64) -> Self {
        Self {
            n,
            num_features,
            task,
            seed,
            separation: 10.0,
            num_classes: if task == Task::Multiclass { 3 } else { 2 },
            noise_std: 0.5,
            categorical: 0,
        }
    }
}

/// Parameters the data were drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// Class means, one row per class (classification).
    pub centers: Option<Array2<f64>>,
    /// Regression slope per numerical feature.
    pub weights: Option<Array1<f64>>,
    pub intercept: f64,
    /// Additive regression effect per categorical column and category.
    pub category_effects: Vec<Vec<f64>>,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: TabularDataset,
    pub truth: SyntheticTruth,
}

/// Gaussian blobs (classification) or linear-plus-noise data (regression).
pub fn make_synthetic(n: usize, num_features: usize, task: Task, seed: u64) -> Result<SyntheticData, DataError> {
    make_synthetic_with(&SyntheticConfig::new(n, num_features, task, seed))
}

pub fn make_synthetic_with(config: &SyntheticConfig) -> Result<SyntheticData, DataError> {
    if config.n < 4 {
        return Err(DataError::TooFewRows { n: config.n, min: 4 });
    }
    if config.num_features == 0 {
        return Err(DataError::InvalidSchema("synthetic data needs at least one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, f) = (config.n, config.num_features);
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut schema: Vec<ColumnSchema> = (0..f).map(|j| ColumnSchema::numerical(format!("x{j}"))).collect();
    schema.extend(
        (0..config.categorical).map(|j| ColumnSchema::categorical(format!("c{j}"), CATEGORICAL_CARDINALITY)),
    );
    let width = f + config.categorical;
    let mut rows = Array2::<f64>::zeros((n, width));
    let mut labels = Array1::<f64>::zeros(n);
    let category_effects: Vec<Vec<f64>> = (0..config.categorical)
        .map(|_| (0..CATEGORICAL_CARDINALITY).map(|_| 0.5 * gauss(&mut rng)).collect())
        .collect();

    let truth = match config.task {
        Task::Binclass | Task::Multiclass => {
            let classes = if config.task == Task::Binclass { 2 } else { config.num_classes.max(2) };
            let mut centers = Array2::<f64>::zeros((classes, f));
            if config.task == Task::Binclass {
                centers[[0, 0]] = -config.separation / 2.0;
                centers[[1, 0]] = config.separation / 2.0;
                for j in 1..f {
                    let shift: f64 = rng.random_range(-0.5..0.5);
                    centers[[0, j]] = -shift;
                    centers[[1, j]] = shift;
                }
            } else {
                for c in 0..classes {
                    for j in 0..f {
                        centers[[c, j]] = config.separation / 2.0 * gauss(&mut rng) / (f as f64).sqrt();
                    }
                }
            }
            for i in 0..n {
                let y = rng.random_range(0..classes);
                labels[i] = y as f64;
                for j in 0..f {
                    rows[[i, j]] = centers[[y, j]] + gauss(&mut rng);
                }
                for j in 0..config.categorical {
                    rows[[i, f + j]] = rng.random_range(0..CATEGORICAL_CARDINALITY) as f64;
                }
            }
            SyntheticTruth {
                centers: Some(centers),
                weights: None,
                intercept: 0.0,
                category_effects,
                noise_std: 1.0,
            }
        }
        Task::Regression => {
            let weights = Array1::from_shape_fn(f, |_| gauss(&mut rng));
            let intercept = gauss(&mut rng);
            for i in 0..n {
                let mut y = intercept;
                for j in 0..f {
                    let x = gauss(&mut rng);
                    rows[[i, j]] = x;
                    y += weights[j] * x;
                }
                for (j, effects) in category_effects.iter().enumerate() {
                    let code = rng.random_range(0..CATEGORICAL_CARDINALITY);
                    rows[[i, f + j]] = code as f64;
                    y += effects[code];
                }
                labels[i] = y + config.noise_std * gauss(&mut rng);
            }
            SyntheticTruth {
                centers: None,
                weights: Some(weights),
                intercept,
                category_effects,
                noise_std: config.noise_std,
            }
        }
    };
    let num_classes = match config.task {
        Task::Regression => None,
        Task::Binclass => Some(2),
        Task::Multiclass => Some(config.num_classes.max(2)),
    };
    let dataset = TabularDataset::new(schema, rows, labels, config.task, num_classes)?;
    Ok(SyntheticData { dataset, truth })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;

    #[test]
    fn bit_identical_under_seed() {
        let a = make_synthetic(100, 4, Task::Binclass, 1).unwrap();
        let b = make_synthetic(100, 4, Task::Binclass, 1).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = make_synthetic(100, 4, Task::Binclass, 2).unwrap();
        assert_ne!(a.dataset.rows, c.dataset.rows);
    }

    #[test]
    fn ten_sigma_blobs_are_threshold_separable() {
        let data = make_synthetic(500, 4, Task::Binclass, 3).unwrap().dataset;
        // Depth-1 stump on feature 0 at the midpoint between the class means.
        let correct = data
            .rows
            .column(0)
            .iter()
            .zip(data.labels.iter())
            .filter(|(&x, &y)| (x > 0.0) == (y == 1.0))
            .count();
        assert_eq!(correct, 500);
    }

    #[test]
    fn ols_recovers_slopes() {
        let data = make_synthetic(2000, 3, Task::Regression, 4).unwrap();
        let (ds, truth) = (&data.dataset, &data.truth);
        let n = ds.n_rows();
        let p = ds.n_features() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { ds.rows[[i, j - 1]] });
        let y = DVector::from_iterator(n, ds.labels.iter().copied());
        let xtx = x.transpose() * &x;
        let xtx_inv = xtx.clone().try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &y;
        let resid = &y - &x * &beta;
        let sigma2 = resid.dot(&resid) / (n - p) as f64;
        let weights = truth.weights.as_ref().unwrap();
        for j in 0..ds.n_features() {
            let se = (sigma2 * xtx_inv[(j + 1, j + 1)]).sqrt();
            assert!((beta[j + 1] - weights[j]).abs() < 3.0 * se, "slope {j}: {} vs {}", beta[j + 1], weights[j]);
        }
        let se0 = (sigma2 * xtx_inv[(0, 0)]).sqrt();
        assert!((beta[0] - truth.intercept).abs() < 3.0 * se0);
    }

    #[test]
    fn multiclass_and_categorical_columns() {
        let mut cfg = SyntheticConfig::new(60, 3, Task::Multiclass, 9);
        cfg.categorical = 2;
        cfg.num_classes = 4;
        let data = make_synthetic_with(&cfg).unwrap().dataset;
        assert_eq!(data.n_features(), 5);
        assert_eq!(data.categorical_columns(), vec![3, 4]);
        assert_eq!(data.num_classes, Some(4));
    }

    #[test]
    fn too_few_rows() {
        assert!(make_synthetic(3, 2, Task::Binclass, 0).is_err());
    }
}
