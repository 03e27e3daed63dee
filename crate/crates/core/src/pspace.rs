//! The prototype space: choosing K, K-Means over representations, and
//! projection of simplex coordinates onto the prototypes.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, KMeansError, ModelError};
use crate::ot::COSINE_EPS;

/// `K` global prototypes stored row-wise (`K x d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSpace {
    pub prototypes: Array2<f64>,
}

impl PrototypeSpace {
    pub fn new(prototypes: Array2<f64>) -> Result<Self, ModelError> {
        if prototypes.nrows() == 0 || prototypes.ncols() == 0 {
            return Err(ModelError::ShapeMismatch("prototype space must be non-empty".into()));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput("prototype space"));
        }
        Ok(Self { prototypes })
    }

    pub fn k(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// Writes one row per prototype: `prototype,d0,d1,...`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        let mut header = vec!["prototype".to_string()];
        header.extend((0..self.dim()).map(|j| format!("d{j}")));
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for (k, row) in self.prototypes.rows().into_iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

/// `max(2, ceil(log N))` prototypes for `N` input features.
pub fn choose_k(num_features: usize, base: LogBase) -> usize {
    let n = num_features.max(1) as f64;
    let log = match base {
        LogBase::Natural => n.ln(),
        LogBase::Two => n.log2(),
    };
    (log.ceil() as usize).max(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub n_init: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { n_init: 10, max_iter: 300, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd step and refinement sweep of the winning restart.
    pub trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn inertia(points: &Array2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| sq_dist(points.row(i), centroids.row(c))).sum()
}

fn plus_plus(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn recompute(points: &Array2<f64>, assignment: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &points.row(i);
        counts[c] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).mapv_inplace(|v| v / n as f64);
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its centroid into each empty cluster.
fn fill_empty(points: &Array2<f64>, centroids: &mut Array2<f64>, assignment: &mut [usize], k: usize) {
    loop {
        let (c, counts) = recompute(points, assignment, k);
        *centroids = c;
        let Some(empty) = counts.iter().position(|&n| n == 0) else { return };
        let far = (0..points.nrows())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(points.row(a), centroids.row(assignment[a]))
                    .total_cmp(&sq_dist(points.row(b), centroids.row(assignment[b])))
            })
            .expect("n >= k guarantees a cluster with two points");
        assignment[far] = empty;
    }
}

/// Single-point moves that strictly lower the inertia (Hartigan's rule).
/// Returns whether anything moved.
fn refine(points: &Array2<f64>, centroids: &mut Array2<f64>, assignment: &mut [usize], counts: &mut [usize]) -> bool {
    let mut moved = false;
    for i in 0..points.nrows() {
        let a = assignment[i];
        if counts[a] <= 1 {
            continue;
        }
        let x = points.row(i);
        let na = counts[a] as f64;
        let remove_gain = na / (na - 1.0) * sq_dist(x, centroids.row(a));
        let mut best: Option<(usize, f64)> = None;
        for b in 0..centroids.nrows() {
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            let add_cost = nb / (nb + 1.0) * sq_dist(x, centroids.row(b));
            let delta = add_cost - remove_gain;
            if delta < -1e-12 * (1.0 + remove_gain) && best.is_none_or(|(_, d)| delta < d) {
                best = Some((b, delta));
            }
        }
        if let Some((b, _)) = best {
            let nb = counts[b] as f64;
            let ca = (&centroids.row(a) * na - x) / (na - 1.0);
            let cb = (&centroids.row(b) * nb + x) / (nb + 1.0);
            centroids.row_mut(a).assign(&ca);
            centroids.row_mut(b).assign(&cb);
            counts[a] -= 1;
            counts[b] += 1;
            assignment[i] = b;
            moved = true;
        }
    }
    moved
}

fn single_run(points: &Array2<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let mut centroids = plus_plus(points, k, rng);
    let mut assignment: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, &centroids)).collect();
    fill_empty(points, &mut centroids, &mut assignment, k);
    let mut trace = vec![inertia(points, &centroids, &assignment)];
    for _ in 0..max_iter {
        let next: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next != assignment;
        assignment = next;
        fill_empty(points, &mut centroids, &mut assignment, k);
        trace.push(inertia(points, &centroids, &assignment));
        if !changed {
            break;
        }
    }
    let (_, mut counts) = recompute(points, &assignment, k);
    for _ in 0..max_iter {
        if !refine(points, &mut centroids, &mut assignment, &mut counts) {
            break;
        }
        // Recompute exactly to shed drift from the incremental updates.
        centroids = recompute(points, &assignment, k).0;
        trace.push(inertia(points, &centroids, &assignment));
    }
    let inertia = inertia(points, &centroids, &assignment);
    KMeansResult { centroids, assignment, inertia, trace }
}

/// Seeded K-Means: k-means++ seeding, Lloyd iterations, then single-point
/// refinement, repeated `n_init` times.
pub fn kmeans(points: &Array2<f64>, k: usize, config: &KMeansConfig) -> Result<KMeansResult, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroClusters);
    }
    if points.nrows() < k {
        return Err(KMeansError::TooFewPoints { n: points.nrows(), k });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(KMeansError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.n_init.max(1) {
        let run = single_run(points, k, config.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Copies centroids into a prototype space. Centroids with (near) zero norm
/// have no cosine direction and are nudged by `1e-6`-scale noise; their
/// indices are returned.
pub fn init_prototypes(centroids: &Array2<f64>, seed: u64) -> Result<(PrototypeSpace, Vec<usize>), ModelError> {
    let mut protos = centroids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = Vec::new();
    for (k, mut row) in protos.rows_mut().into_iter().enumerate() {
        if row.dot(&row).sqrt() < COSINE_EPS {
            row.mapv_inplace(|v| v + 1e-6 * rng.random_range(-1.0..1.0));
            perturbed.push(k);
        }
    }
    Ok((PrototypeSpace::new(protos)?, perturbed))
}

/// `sum_k r_ik beta_k` for each row of `coords`.
pub fn project(coords: &Array2<f64>, space: &PrototypeSpace) -> Result<Array2<f64>, ModelError> {
    if coords.ncols() != space.k() {
        return Err(ModelError::ShapeMismatch(format!("{} coordinates for {} prototypes", coords.ncols(), space.k())));
    }
    Ok(coords.dot(&space.prototypes))
}

/// Largest deviation of any row from the probability simplex.
pub fn simplex_violation(coords: &Array2<f64>) -> f64 {
    coords
        .rows()
        .into_iter()
        .map(|r| {
            let neg = r.iter().fold(0.0f64, |m, &v| m.max(-v));
            (r.sum() - 1.0).abs().max(neg)
        })
        .fold(0.0, f64::max)
}

/// Distances from each point to its centroid, for diagnostics.
pub fn point_distances(points: &Array2<f64>, result: &KMeansResult) -> Array1<f64> {
    Array1::from_shape_fn(points.nrows(), |i| sq_dist(points.row(i), result.centroids.row(result.assignment[i])).sqrt())
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand_distr::StandardNormal;

    use super::*;

    #[test]
    fn k_from_feature_count() {
        assert_eq!(choose_k(8, LogBase::Natural), 3);
        assert_eq!(choose_k(14, LogBase::Natural), 3);
        assert_eq!(choose_k(128, LogBase::Natural), 5);
        assert_eq!(choose_k(1, LogBase::Natural), 2);
        assert_eq!(choose_k(3, LogBase::Natural), 2);
        assert_eq!(choose_k(8, LogBase::Two), 3);
        assert_eq!(choose_k(9, LogBase::Two), 4);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let centers = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let points = Array2::from_shape_fn((90, 2), |(i, j)| centers[[i % 3, j]] + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let res = kmeans(&points, 3, &KMeansConfig::default()).unwrap();
        for i in 0..90 {
            assert_eq!(res.assignment[i], res.assignment[i % 3]);
        }
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn deterministic_and_errors() {
        let points = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let cfg = KMeansConfig { seed: 5, ..Default::default() };
        assert_eq!(kmeans(&points, 4, &cfg).unwrap(), kmeans(&points, 4, &cfg).unwrap());
        assert!(matches!(kmeans(&points, 21, &cfg), Err(KMeansError::TooFewPoints { n: 20, k: 21 })));
        assert!(matches!(kmeans(&points, 0, &cfg), Err(KMeansError::ZeroClusters)));
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let points = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [5.0, 5.0]];
        let res = kmeans(&points, 3, &KMeansConfig::default()).unwrap();
        let mut used = res.assignment.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!(res.inertia.abs() < 1e-12);
    }

    #[test]
    fn zero_centroid_is_perturbed() {
        let (space, perturbed) = init_prototypes(&array![[0.0, 0.0], [1.0, 2.0]], 0).unwrap();
        assert_eq!(perturbed, vec![0]);
        assert!(space.prototypes.row(0).iter().any(|&v| v != 0.0));
        assert_eq!(space.prototypes.row(1), array![1.0, 2.0]);
    }

    #[test]
    fn projection_of_vertex_is_the_prototype() {
        let space = PrototypeSpace::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let p = project(&array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5]], &space).unwrap();
        assert_eq!(p, array![[3.0, 4.0], [3.0, 4.0]]);
        assert!(project(&array![[1.0, 0.0]], &space).is_err());
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        PrototypeSpace::new(array![[1.5, -2.0]]).unwrap().write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "prototype,d0,d1\n0,1.5,-2\n");
    }
}
