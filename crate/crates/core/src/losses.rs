//! Training objectives, each returning its value together with analytic
//! gradients with respect to its array inputs.
//!
//! * task loss: softmax cross-entropy, single-logit logistic loss, or MSE;
//! * projecting loss: mean over the batch of the transport cost between a
//!   representation and the prototypes weighted by its coordinates, with the
//!   cost `1 - cos(z, beta_k)`;
//! * diversifying loss: a contrastive term over cosine similarities of
//!   coordinates, positives being same-label (or same-bin) pairs;
//! * orthogonalization loss: `L1(M) / ||M||_F^2 + max(0, |K - L1(M)|)` with
//!   `M_ij = |cos(beta_i, beta_j)|`, equal to 1 exactly for orthogonal prototypes.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::LossError;
use crate::ot::COSINE_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub task: f64,
    pub projecting: f64,
    pub diversifying: f64,
    pub orthogonalization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { task: 1.0, projecting: 0.25, diversifying: 0.25, orthogonalization: 0.25 }
    }
}

/// Per-term values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub projecting: f64,
    pub diversifying: f64,
    pub orthogonalization: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.task, self.projecting, self.diversifying, self.orthogonalization, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted sum of the four terms; fills in `total`.
pub fn total_objective(terms: &LossBreakdown, weights: &LossWeights) -> LossBreakdown {
    let total = weights.task * terms.task
        + weights.projecting * terms.projecting
        + weights.diversifying * terms.diversifying
        + weights.orthogonalization * terms.orthogonalization;
    LossBreakdown { total, ..*terms }
}

fn class_index(y: f64, classes: usize) -> Result<usize, LossError> {
    if y < 0.0 || y.fract() != 0.0 || y as usize >= classes {
        return Err(LossError::LabelOutOfRange { label: y, classes });
    }
    Ok(y as usize)
}

/// Mean task loss and its gradient with respect to `pred`.
///
/// `pred` is `n x C` logits (multiclass), `n x 1` logits (binclass) or
/// `n x 1` predictions (regression).
pub fn task_loss(pred: &Array2<f64>, labels: ArrayView1<f64>, task: Task) -> Result<(f64, Array2<f64>), LossError> {
    let n = pred.nrows();
    if labels.len() != n || n == 0 {
        return Err(LossError::ShapeMismatch(format!("{} predictions for {} labels", n, labels.len())));
    }
    let inv_n = 1.0 / n as f64;
    match task {
        Task::Multiclass => {
            let classes = pred.ncols();
            let mut grad = pred.clone();
            let mut total = 0.0;
            for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
                let y = class_index(labels[i], classes)?;
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[y];
                row.mapv_inplace(|v| (v - lse).exp() * inv_n);
                row[y] -= inv_n;
            }
            Ok((total * inv_n, grad))
        }
        Task::Binclass | Task::Regression => {
            if pred.ncols() != 1 {
                return Err(LossError::ShapeMismatch(format!("{task} expects one output column, got {}", pred.ncols())));
            }
            let mut grad = Array2::zeros((n, 1));
            let mut total = 0.0;
            for i in 0..n {
                let s = pred[[i, 0]];
                let y = labels[i];
                if task == Task::Binclass {
                    let y = class_index(y, 2)? as f64;
                    total += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
                    grad[[i, 0]] = (sigmoid(s) - y) * inv_n;
                } else {
                    total += (s - y) * (s - y);
                    grad[[i, 0]] = 2.0 * (s - y) * inv_n;
                }
            }
            Ok((total * inv_n, grad))
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine similarities between rows of `a` and rows of `b`, plus the floored norms.
fn cosine_cross(a: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let na = a.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(COSINE_EPS));
    let nb = b.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(COSINE_EPS));
    let mut cos = a.dot(&b.t());
    cos /= &na.view().insert_axis(Axis(1));
    cos /= &nb.view().insert_axis(Axis(0));
    (cos, na, nb)
}

/// Unit direction of each row, or zero where the norm sits on the floor.
fn directions(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > COSINE_EPS {
            row /= norm;
        } else {
            row.fill(0.0);
        }
    }
    out
}

/// Backward of [`cosine_cross`] for upstream gradient `g = dL/dcos`.
fn cosine_cross_backward(
    a: &Array2<f64>,
    b: &Array2<f64>,
    cos: &Array2<f64>,
    na: &Array1<f64>,
    nb: &Array1<f64>,
    g: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let a_scaled = a / &na.view().insert_axis(Axis(1));
    let b_scaled = b / &nb.view().insert_axis(Axis(1));
    let gc = g * cos;
    let mut da = g.dot(&b_scaled);
    da -= &(&directions(a) * &gc.sum_axis(Axis(1)).insert_axis(Axis(1)));
    da /= &na.view().insert_axis(Axis(1));
    let mut db = g.t().dot(&a_scaled);
    db -= &(&directions(b) * &gc.sum_axis(Axis(0)).insert_axis(Axis(1)));
    db /= &nb.view().insert_axis(Axis(1));
    (da, db)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectingGrad {
    pub value: f64,
    pub dz: Array2<f64>,
    pub dcoords: Array2<f64>,
    pub dprototypes: Array2<f64>,
}

/// `(1/n) sum_i sum_k r_ik (1 - cos(z_i, beta_k))` with gradients.
pub fn projecting_loss(z: &Array2<f64>, coords: &Array2<f64>, prototypes: &Array2<f64>) -> Result<ProjectingGrad, LossError> {
    let n = z.nrows();
    if n == 0 || coords.nrows() != n || coords.ncols() != prototypes.nrows() || z.ncols() != prototypes.ncols() {
        return Err(LossError::ShapeMismatch(format!(
            "z {:?}, coordinates {:?}, prototypes {:?}",
            z.dim(),
            coords.dim(),
            prototypes.dim()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let (cos, nz, nb) = cosine_cross(z, prototypes);
    let cost = cos.mapv(|c| 1.0 - c);
    let value = (&cost * coords).sum() * inv_n;
    let dcoords = cost * inv_n;
    let g = coords.mapv(|r| -r * inv_n);
    let (dz, dprototypes) = cosine_cross_backward(z, prototypes, &cos, &nz, &nb, &g);
    Ok(ProjectingGrad { value, dz, dcoords, dprototypes })
}

/// Which pairs of a minibatch count as positives.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSpec {
    /// `same[i][j]` for every ordered pair, diagonal included.
    pub same: Array2<bool>,
    /// Number of label bins used for regression targets.
    pub bins: Option<usize>,
    /// Every regression label in the batch was equal.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// Base of the logarithm in `t = ceil(1 + log(n_b))` regression bins.
    pub bin_log_base: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { bin_log_base: 2.0 }
    }
}

/// Number of equal-width label bins for a regression batch of `n` rows.
pub fn regression_bins(n: usize, config: &PairConfig) -> usize {
    (1.0 + (n.max(1) as f64).log(config.bin_log_base)).ceil().max(1.0) as usize
}

/// Positive pairs: same class, or for regression the same of
/// `t = ceil(1 + log(n_b))` equal-width bins spanning the batch's label range.
pub fn make_pairs(labels: ArrayView1<f64>, task: Task, config: &PairConfig) -> PairSpec {
    let n = labels.len();
    match task {
        Task::Binclass | Task::Multiclass => PairSpec {
            same: Array2::from_shape_fn((n, n), |(i, j)| labels[i] == labels[j]),
            bins: None,
            degenerate: false,
        },
        Task::Regression => {
            let t = regression_bins(n, config);
            let lo = labels.fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = labels.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let degenerate = !(hi > lo);
            let bin: Vec<usize> = labels
                .iter()
                .map(|&y| if degenerate { 0 } else { (((y - lo) / (hi - lo) * t as f64) as usize).min(t - 1) })
                .collect();
            if degenerate {
                log::warn!("regression batch has a single label value; all pairs are positive");
            }
            PairSpec { same: Array2::from_shape_fn((n, n), |(i, j)| bin[i] == bin[j]), bins: Some(t), degenerate }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversifyReduction {
    /// Plain sum over positive pairs.
    #[default]
    Sum,
    /// Sum divided by the number of positive pairs.
    MeanOverPositives,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversifyConfig {
    /// Fraction of the batch sampled (without replacement) before pairing.
    pub sample_fraction: f64,
    /// Drop `i == j` from both the positives and the normalizer.
    pub exclude_self: bool,
    pub reduction: DiversifyReduction,
}

impl Default for DiversifyConfig {
    fn default() -> Self {
        Self { sample_fraction: 0.5, exclude_self: false, reduction: DiversifyReduction::Sum }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversifyGrad {
    pub value: f64,
    /// Gradient for every batch row; rows outside the sample are zero.
    pub dcoords: Array2<f64>,
    pub sampled: Vec<usize>,
    pub positive_pairs: usize,
    /// No two distinct sampled rows shared a label (or bin); value is 0.
    pub no_positive_pairs: bool,
}

/// Seed for the diversifying subsample of one training step.
pub fn subsample_seed(run_seed: u64, epoch: usize, step: usize) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32 | step as u64 & 0xFFFF_FFFF)
}

fn sample_rows(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let m = ((fraction * n as f64).ceil() as usize).clamp(n.min(2), n);
    if m == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Contrastive loss over the cosine similarity `c_ij` of coordinate rows:
/// `-sum_{(i,j) positive} log(exp(c_ij) / sum_{a,b} exp(c_ab))` over a seeded
/// subsample of the batch.
pub fn diversifying_loss(
    coords: &Array2<f64>,
    pairs: &PairSpec,
    config: &DiversifyConfig,
    seed: u64,
) -> Result<DiversifyGrad, LossError> {
    let n = coords.nrows();
    if pairs.same.dim() != (n, n) {
        return Err(LossError::ShapeMismatch(format!("{n} coordinate rows, pair matrix {:?}", pairs.same.dim())));
    }
    if !(config.sample_fraction > 0.0 && config.sample_fraction <= 1.0) {
        return Err(LossError::InvalidArgument(format!("sample_fraction {} outside (0, 1]", config.sample_fraction)));
    }
    let sampled = sample_rows(n, config.sample_fraction, seed);
    let m = sampled.len();
    let mut dcoords = Array2::zeros(coords.dim());
    let off_diagonal = (0..m).any(|a| (0..m).any(|b| a != b && pairs.same[[sampled[a], sampled[b]]]));
    if !off_diagonal {
        return Ok(DiversifyGrad { value: 0.0, dcoords, sampled, positive_pairs: 0, no_positive_pairs: true });
    }
    let r = coords.select(Axis(0), &sampled);
    let (cos, norms, _) = cosine_cross(&r, &r);
    let counted = |a: usize, b: usize| !(config.exclude_self && a == b);
    let max = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for ((a, b), &c) in cos.indexed_iter() {
        if counted(a, b) {
            z += (c - max).exp();
        }
    }
    let lse = max + z.ln();
    let mut positives = 0usize;
    let mut pos_sum = 0.0;
    for ((a, b), &c) in cos.indexed_iter() {
        if counted(a, b) && pairs.same[[sampled[a], sampled[b]]] {
            positives += 1;
            pos_sum += c;
        }
    }
    let scale = match config.reduction {
        DiversifyReduction::Sum => 1.0,
        DiversifyReduction::MeanOverPositives => 1.0 / positives as f64,
    };
    let value = scale * (positives as f64 * lse - pos_sum);
    let g = Array2::from_shape_fn((m, m), |(a, b)| {
        if !counted(a, b) {
            return 0.0;
        }
        let soft = positives as f64 * (cos[[a, b]] - lse).exp();
        let pos = if pairs.same[[sampled[a], sampled[b]]] { 1.0 } else { 0.0 };
        scale * (soft - pos)
    });
    let (da, db) = cosine_cross_backward(&r, &r, &cos, &norms, &norms, &g);
    for (row, &i) in sampled.iter().enumerate() {
        let mut out = dcoords.row_mut(i);
        out += &da.row(row);
        out += &db.row(row);
    }
    Ok(DiversifyGrad { value, dcoords, sampled, positive_pairs: positives, no_positive_pairs: false })
}

/// Orthogonalization penalty of the prototype rows and its gradient.
pub fn orthogonalization_loss(prototypes: &Array2<f64>) -> Result<(f64, Array2<f64>), LossError> {
    let k = prototypes.nrows();
    if k == 0 {
        return Err(LossError::ShapeMismatch("no prototypes".into()));
    }
    let (cos, norms, _) = cosine_cross(prototypes, prototypes);
    let m = cos.mapv(f64::abs);
    let l1 = m.sum();
    let fro2 = m.mapv(|v| v * v).sum();
    let gap = k as f64 - l1;
    let value = l1 / fro2 + gap.abs();
    // d/dM_ij of each part; the diagonal is constant and contributes nothing.
    let gap_sign = if gap < 0.0 {
        1.0
    } else if gap > 0.0 {
        -1.0
    } else {
        0.0
    };
    let g = Array2::from_shape_fn((k, k), |(i, j)| {
        if i == j {
            return 0.0;
        }
        let dm = 1.0 / fro2 - 2.0 * l1 * m[[i, j]] / (fro2 * fro2) + gap_sign;
        dm * cos[[i, j]].signum() * (cos[[i, j]] != 0.0) as u8 as f64
    });
    let (da, db) = cosine_cross_backward(prototypes, prototypes, &cos, &norms, &norms, &g);
    Ok((value, da + db))
}
