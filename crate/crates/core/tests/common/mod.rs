//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix4, Vector4};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use protab::data::{ColumnSchema, Task};
use protab::losses::{DiversifyConfig, LossWeights};
use protab::nn::{build_model, Activation, BackboneKind, BackboneSpec, Batch, ModelBundle, ParamSet};
use protab::pspace::PrototypeSpace;
use protab::train::{phase2_step, ObjectiveSettings};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Random point of the open simplex.
pub fn simplex(k: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let w: Array1<f64> = (0..k).map(|_| -rng.random_range(1e-9f64..1.0).ln()).collect();
    let s = w.sum();
    w / s
}

/// Exact optimum of a 3x3 transport LP by vertex enumeration.
///
/// The plan is parametrized by its top-left 2x2 block `x`; every entry is
/// affine in `x`. Each vertex of the polytope makes four entries zero, so all
/// choices of four active entries are solved and the feasible ones compared.
pub fn exact_lp_3x3(a: &[f64; 3], b: &[f64; 3], c: &Array2<f64>) -> f64 {
    // entry (i, j) = offset + coef . x, with x = (p00, p01, p10, p11)
    let entries: [(f64, [f64; 4]); 9] = [
        (0.0, [1.0, 0.0, 0.0, 0.0]),
        (0.0, [0.0, 1.0, 0.0, 0.0]),
        (a[0], [-1.0, -1.0, 0.0, 0.0]),
        (0.0, [0.0, 0.0, 1.0, 0.0]),
        (0.0, [0.0, 0.0, 0.0, 1.0]),
        (a[1], [0.0, 0.0, -1.0, -1.0]),
        (b[0], [-1.0, 0.0, -1.0, 0.0]),
        (b[1], [0.0, -1.0, 0.0, -1.0]),
        (a[2] - b[0] - b[1], [1.0, 1.0, 1.0, 1.0]),
    ];
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 9) {
        if mask.count_ones() != 4 {
            continue;
        }
        let active: Vec<usize> = (0..9).filter(|i| mask & (1 << i) != 0).collect();
        let m = Matrix4::from_fn(|r, col| entries[active[r]].1[col]);
        let rhs = Vector4::from_fn(|r, _| -entries[active[r]].0);
        let Some(inv) = m.try_inverse() else { continue };
        let x = inv * rhs;
        let plan: Vec<f64> = entries.iter().map(|(o, g)| o + g[0] * x[0] + g[1] * x[1] + g[2] * x[2] + g[3] * x[3]).collect();
        if plan.iter().all(|&p| p >= -1e-12) {
            let cost: f64 = plan.iter().enumerate().map(|(idx, p)| p * c[[idx / 3, idx % 3]]).sum();
            best = best.min(cost);
        }
    }
    best
}

/// Minimum within-cluster sum of squares over every assignment of points to `k` labels.
pub fn exhaustive_kmeans(points: &Array2<f64>, k: usize) -> f64 {
    let n = points.nrows();
    let d = points.ncols();
    let total = k.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += points[[i, j]];
            }
        }
        let mut inertia = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..d {
                let mean = sums[l][j] / counts[l] as f64;
                inertia += (points[[i, j]] - mean).powi(2);
            }
        }
        best = best.min(inertia);
    }
    best
}

/// Two-sided Wilcoxon signed-rank test by enumerating all `2^n` sign patterns.
/// Returns `(n, min(W+, W-), p)`, or `None` with fewer than five non-zero differences.
pub fn wilcoxon_enumerated(x: &[f64], y: &[f64]) -> Option<(usize, f64, f64)> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n < 5 {
        return None;
    }
    // Rank of |d_i| = (#smaller) + (#equal + 1) / 2, computed pairwise.
    let ranks: Vec<f64> = d
        .iter()
        .map(|di| {
            let smaller = d.iter().filter(|dj| dj.abs() < di.abs()).count() as f64;
            let equal = d.iter().filter(|dj| dj.abs() == di.abs()).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let stat = w_plus.min(total - w_plus);
    let mut at_most = 0u64;
    for pattern in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| pattern & (1 << i) != 0).map(|i| ranks[i]).sum();
        if w <= stat + 1e-9 {
            at_most += 1;
        }
    }
    let p = (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0);
    Some((n, stat, p))
}

/// A small randomized phase-2 model with prototypes and a matching batch.
pub struct GradInstance {
    pub model: ModelBundle,
    pub batch: Batch,
    pub labels: Array1<f64>,
}

pub fn grad_instance(seed: u64) -> GradInstance {
    let mut r = rng(seed);
    let kinds = [BackboneKind::Mlp, BackboneKind::Residual, BackboneKind::FeatureAttention];
    let tasks = [Task::Multiclass, Task::Binclass, Task::Regression];
    let kind = kinds[seed as usize % 3];
    let task = tasks[(seed as usize / 3) % 3];
    let num_classes = (task == Task::Multiclass).then_some(3);
    let schema = vec![
        ColumnSchema::numerical("a"),
        ColumnSchema::numerical("b"),
        ColumnSchema::numerical("c"),
        ColumnSchema::categorical("u", 3),
        ColumnSchema::categorical("v", 4),
    ];
    let spec = BackboneSpec {
        kind,
        depth: if kind == BackboneKind::FeatureAttention { 1 } else { 2 },
        hidden_dim: 6,
        embedding_dim: Some(if kind == BackboneKind::FeatureAttention { 5 } else { 2 }),
        activation: if seed.is_multiple_of(2) { Activation::Gelu } else { Activation::Tanh },
        dropout: 0.0,
        estimator_hidden: Some(5),
    };
    let model = build_model(&spec, &schema, task, num_classes, seed).expect("model");
    let d = spec.representation_dim();
    let k = 2 + (seed as usize % 3);
    let space = PrototypeSpace::new(gaussian(k, d, &mut r)).expect("prototypes");
    let model = model.with_prototypes(space).expect("attach");
    let n = 8;
    let batch = Batch {
        numerical: gaussian(n, 3, &mut r),
        categorical: Array2::from_shape_fn((n, 2), |(_, j)| r.random_range(0..[3, 4][j])),
    };
    let labels: Array1<f64> = match task {
        Task::Multiclass => (0..n).map(|i| (i % 3) as f64).collect(),
        Task::Binclass => (0..n).map(|i| (i % 2) as f64).collect(),
        Task::Regression => (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
    };
    GradInstance { model, batch, labels }
}

pub fn one_hot(term: usize) -> LossWeights {
    let mut w = [0.0; 4];
    w[term] = 1.0;
    LossWeights { task: w[0], projecting: w[1], diversifying: w[2], orthogonalization: w[3] }
}

pub const TERM_NAMES: [&str; 4] = ["task", "projecting", "diversifying", "orthogonalization"];

/// Parameter groups each term trains.
pub fn term_groups(term: usize) -> &'static [&'static str] {
    match term {
        0 => &["backbone", "head", "estimator", "prototypes"],
        1 => &["backbone", "estimator", "prototypes"],
        2 => &["backbone", "estimator"],
        _ => &["prototypes"],
    }
}

/// Norm-wise relative error between the analytic gradient of one weighted
/// term and central finite differences, per parameter group. Also returns the
/// analytic group norm so callers can reject vacuous checks.
pub fn gradient_check(inst: &GradInstance, term: usize) -> Vec<(&'static str, f64, f64)> {
    let settings = ObjectiveSettings {
        weights: one_hot(term),
        diversify: DiversifyConfig { sample_fraction: 0.5, ..Default::default() },
        ..Default::default()
    };
    let seed = 17;
    let eval = |m: &ModelBundle| phase2_step(m, &inst.batch, inst.labels.view(), &settings, seed, None).expect("step").loss.total;
    let step = phase2_step(&inst.model, &inst.batch, inst.labels.view(), &settings, seed, None).expect("step");
    let analytic = step.grad.flatten();
    // Richardson-extrapolated central differences: O(h^4) truncation with a
    // step large enough to keep rounding noise of big loss values small.
    let h = 1e-3;
    let central = |p: usize, k: usize, h: f64| {
        let mut plus = inst.model.clone();
        plus.params_mut()[p][k] += h;
        let mut minus = inst.model.clone();
        minus.params_mut()[p][k] -= h;
        (eval(&plus) - eval(&minus)) / (2.0 * h)
    };
    let mut fd = vec![0.0; analytic.len()];
    let sizes: Vec<usize> = inst.model.params().iter().map(|p| p.len()).collect();
    let mut idx = 0;
    for (p, len) in sizes.into_iter().enumerate() {
        for k in 0..len {
            fd[idx] = (4.0 * central(p, k, h / 2.0) - central(p, k, h)) / 3.0;
            idx += 1;
        }
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (name, len) in inst.model.param_groups() {
        let a = &analytic[start..start + len];
        let f = &fd[start..start + len];
        start += len;
        if !term_groups(term).contains(&name) {
            continue;
        }
        let diff = a.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push((name, diff / na.max(nf).max(1e-12), na));
    }
    out
}
