use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::DataError;

pub type SplitRatios = [f64; 3];

pub const MIN_SPLIT_ROWS: usize = 10;

/// Row indices of a train/validation/test partition, exportable for audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub stratified: bool,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic partition with part sizes `round(n * ratio)` (test takes
/// the remainder). Classification labels are stratified: each class is
/// shuffled and spread evenly along the ordering before it is cut.
pub fn split_indices(dataset: &TabularDataset, ratios: SplitRatios, seed: u64) -> Result<SplitIndices, DataError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let n = dataset.n_rows();
    if n < MIN_SPLIT_ROWS {
        return Err(DataError::TooFewRows { n, min: MIN_SPLIT_ROWS });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stratified = dataset.task.is_classification();
    let order: Vec<usize> = if stratified {
        let classes = dataset.num_classes.unwrap_or(2);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &y) in dataset.labels.iter().enumerate() {
            groups[y as usize].push(i);
        }
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
        for (class, group) in groups.iter_mut().enumerate() {
            group.shuffle(&mut rng);
            let len = group.len() as f64;
            for (rank, &i) in group.iter().enumerate() {
                keyed.push(((rank as f64 + 0.5) / len, class, i));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, i)| i).collect()
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    };
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { seed, stratified, train, val, test })
}

pub fn split(
    dataset: &TabularDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset, TabularDataset), DataError> {
    let idx = split_indices(dataset, ratios, seed)?;
    Ok((dataset.select(&idx.train), dataset.select(&idx.val), dataset.select(&idx.test)))
}

#[cfg(test)]
mod tests {
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;

    use super::*;
    use crate::data::{ColumnSchema, Task};

    fn dataset(n: usize, task: Task) -> TabularDataset {
        let rows = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let labels = match task {
            Task::Regression => Array1::from_shape_fn(n, |i| i as f64 * 0.5),
            _ => Array1::from_shape_fn(n, |i| ((i * 7) % 3 == 0) as u8 as f64),
        };
        TabularDataset::new(vec![ColumnSchema::numerical("x")], rows, labels, task, None).unwrap()
    }

    #[test]
    fn ten_rows_six_two_two() {
        let idx = split_indices(&dataset(10, Task::Binclass), [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!((idx.train.len(), idx.val.len(), idx.test.len()), (6, 2, 2));
    }

    #[test]
    fn deterministic() {
        let ds = dataset(57, Task::Binclass);
        assert_eq!(split_indices(&ds, [0.6, 0.2, 0.2], 4).unwrap(), split_indices(&ds, [0.6, 0.2, 0.2], 4).unwrap());
        assert_ne!(
            split_indices(&ds, [0.6, 0.2, 0.2], 4).unwrap().train,
            split_indices(&ds, [0.6, 0.2, 0.2], 5).unwrap().train
        );
    }

    #[test]
    fn california_sizes() {
        let idx = split_indices(&dataset(20640, Task::Regression), [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!((idx.train.len(), idx.val.len(), idx.test.len()), (12384, 4128, 4128));
    }

    #[test]
    fn errors() {
        let ds = dataset(10, Task::Regression);
        assert!(matches!(split_indices(&ds, [0.6, 0.2, 0.3], 0), Err(DataError::BadRatios(_))));
        assert!(matches!(split_indices(&dataset(9, Task::Regression), [0.6, 0.2, 0.2], 0), Err(DataError::TooFewRows { .. })));
    }

    #[test]
    fn stratification_tracks_class_balance() {
        let ds = dataset(3000, Task::Binclass);
        let overall = ds.labels.mean().unwrap();
        let idx = split_indices(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        for part in [&idx.train, &idx.val, &idx.test] {
            let rate = part.iter().map(|&i| ds.labels[i]).sum::<f64>() / part.len() as f64;
            assert!((rate - overall).abs() < 2.0 / part.len() as f64 + 1e-12, "{rate} vs {overall}");
        }
    }

    proptest! {
        #[test]
        fn partitions_rows_exactly(n in 10usize..400, seed in 0u64..1000, a in 0.05f64..0.9, classification in any::<bool>()) {
            let b = (1.0 - a) / 2.0;
            let ratios = [a, b, 1.0 - a - b];
            let ds = dataset(n, if classification { Task::Binclass } else { Task::Regression });
            let idx = split_indices(&ds, ratios, seed).unwrap();
            let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (part, r) in [(&idx.train, ratios[0]), (&idx.val, ratios[1]), (&idx.test, ratios[2])] {
                prop_assert!((part.len() as f64 - n as f64 * r).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
