//! Metrics, the per-seed ablation grid, aggregation and the Wilcoxon
//! signed-rank test.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Task;
use crate::error::{Error, EvalError, ModelError};
use crate::nn::{Batch, ModelBundle};
use crate::train::{run_phase1, run_phase2, NoopObserver, PreparedData, TrainConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    /// On standardized labels.
    Rmse,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        if task.is_classification() {
            Metric::Accuracy
        } else {
            Metric::Rmse
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Rmse => "rmse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub metric: Metric,
    pub value: f64,
}

impl Score {
    /// Strictly better under the metric's direction.
    pub fn better_than(&self, other: &Score) -> bool {
        if self.metric.higher_is_better() {
            self.value > other.value
        } else {
            self.value < other.value
        }
    }
}

const EVAL_CHUNK: usize = 4096;

/// Scores eval-mode predictions against `labels`.
pub fn evaluate_batch(model: &ModelBundle, batch: &Batch, labels: ArrayView1<f64>) -> Result<Score, Error> {
    let n = batch.len();
    if n == 0 || labels.len() != n {
        return Err(ModelError::ShapeMismatch(format!("{n} rows, {} labels", labels.len())).into());
    }
    let metric = Metric::for_task(model.task);
    let mut correct = 0usize;
    let mut sq = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = Batch {
            numerical: batch.numerical.slice(s![start..end, ..]).to_owned(),
            categorical: batch.categorical.slice(s![start..end, ..]).to_owned(),
        };
        let pred = model.predict(&chunk)?;
        for (row, &y) in pred.axis_iter(Axis(0)).zip(labels.slice(s![start..end]).iter()) {
            match model.task {
                Task::Regression => sq += (row[0] - y).powi(2),
                Task::Binclass => correct += ((row[0] > 0.0) == (y == 1.0)) as usize,
                Task::Multiclass => {
                    let arg = row.iter().enumerate().fold(0, |best, (k, &v)| if v > row[best] { k } else { best });
                    correct += (arg as f64 == y) as usize;
                }
            }
        }
    }
    let value = match metric {
        Metric::Accuracy => correct as f64 / n as f64,
        Metric::Rmse => (sq / n as f64).sqrt(),
    };
    Ok(Score { metric, value })
}

pub fn evaluate(model: &ModelBundle, data: &crate::data::TabularDataset) -> Result<Score, Error> {
    evaluate_batch(model, &Batch::from_dataset(data), data.labels.view())
}

/// One test score of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub backbone: String,
    pub variant: Variant,
    pub seed: u64,
    pub metric: Metric,
    pub value: f64,
    pub k: Option<usize>,
    pub epochs: usize,
    pub seconds: f64,
}

impl MetricRecord {
    pub fn key(&self) -> (String, String, Variant, u64) {
        (self.dataset.clone(), self.backbone.clone(), self.variant, self.seed)
    }
}

/// Newline-delimited JSON store of [`MetricRecord`]s, one record per key.
pub struct RecordStore {
    path: PathBuf,
}

impl RecordStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> Result<Vec<MetricRecord>, Error> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let file = std::fs::File::open(&self.path).map_err(|e| Error::io(format!("opening {}", self.path.display()), e))?;
        let mut out = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io("reading record store", e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    /// Inserts or replaces records by key and rewrites the file sorted by key.
    pub fn upsert(&self, records: &[MetricRecord]) -> Result<(), Error> {
        let mut all: BTreeMap<_, MetricRecord> = self.load()?.into_iter().map(|r| (r.key(), r)).collect();
        for r in records {
            all.insert(r.key(), r.clone());
        }
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let tmp = self.path.with_extension("ndjson.tmp");
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        for r in all.values() {
            writeln!(file, "{}", serde_json::to_string(r)?).map_err(|e| Error::io("writing record store", e))?;
        }
        drop(file);
        std::fs::rename(&tmp, &self.path).map_err(|e| Error::io(format!("replacing {}", self.path.display()), e))
    }
}

/// Settings of one ablation grid.
pub struct GridSpec<'a> {
    pub data: &'a PreparedData,
    pub config: &'a TrainConfig,
    pub seeds: &'a [u64],
    pub variants: &'a [Variant],
    /// Where non-baseline runs write their prototypes as CSV.
    pub artifacts: Option<&'a Path>,
    pub threads: usize,
}

fn backbone_name(config: &TrainConfig) -> String {
    config.model.kind.to_string()
}

fn run_seed(spec: &GridSpec<'_>, seed: u64) -> Result<Vec<MetricRecord>, Error> {
    let mut observer = NoopObserver;
    let phase1 = run_phase1(spec.data, spec.config, seed, &mut observer)?;
    let mut out = Vec::new();
    for &variant in spec.variants {
        let result = run_phase2(spec.data, &phase1, spec.config, variant, seed, &mut observer)?;
        let baseline = variant == Variant::Baseline;
        if let (Some(dir), false) = (spec.artifacts, baseline) {
            let name = format!("prototypes_{}_{}_{}_{}.csv", spec.data.name, backbone_name(spec.config), variant, seed);
            result.model.prototypes.as_ref().expect("phase-2 model").write_csv(dir.join(name))?;
        }
        out.push(MetricRecord {
            dataset: spec.data.name.clone(),
            backbone: backbone_name(spec.config),
            variant,
            seed,
            metric: result.test.metric,
            value: result.test.value,
            k: (!baseline).then_some(phase1.prototypes.k),
            epochs: result.report.epochs,
            seconds: if baseline { phase1.report.seconds } else { result.report.seconds },
        });
    }
    Ok(out)
}

/// Runs every variant for every seed; phase 1 is shared by all variants of a
/// seed. Keys already in `store` are skipped, so an interrupted grid resumes.
pub fn run_ablation_grid(spec: &GridSpec<'_>, store: Option<&RecordStore>) -> Result<Vec<MetricRecord>, Error> {
    let done: Vec<MetricRecord> = match store {
        Some(s) => s.load()?,
        None => Vec::new(),
    };
    let backbone = backbone_name(spec.config);
    let has = |seed: u64, v: Variant| {
        done.iter().any(|r| r.dataset == spec.data.name && r.backbone == backbone && r.seed == seed && r.variant == v)
    };
    let todo: Vec<u64> = spec.seeds.iter().copied().filter(|&s| spec.variants.iter().any(|&v| !has(s, v))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let fresh: Vec<Vec<MetricRecord>> = pool.install(|| todo.par_iter().map(|&s| run_seed(spec, s)).collect::<Result<_, _>>())?;
    let fresh: Vec<MetricRecord> = fresh.into_iter().flatten().collect();
    if let Some(s) = store {
        s.upsert(&fresh)?;
    }
    let mut all: Vec<MetricRecord> = done
        .into_iter()
        .filter(|r| r.dataset == spec.data.name && r.backbone == backbone && spec.seeds.contains(&r.seed) && spec.variants.contains(&r.variant))
        .filter(|r| !todo.contains(&r.seed))
        .chain(fresh)
        .collect();
    all.sort_by_key(|a| a.key());
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub backbone: String,
    pub variant: Variant,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and population standard deviation per (dataset, backbone, variant).
pub fn aggregate(records: &[MetricRecord]) -> Result<Vec<Aggregate>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut groups: BTreeMap<(String, String, Variant), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.clone(), r.backbone.clone(), r.variant)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((dataset, backbone, variant), rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.value).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / n;
            Aggregate { dataset, backbone, variant, metric: rs[0].metric, n: rs.len(), mean, std: var.sqrt() }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinCount {
    /// Seeds where `a` is at least as good as `b` (ties count for both sides).
    pub a: usize,
    pub b: usize,
    pub ties: usize,
}

/// Per-seed comparison of two variants on the same dataset and backbone.
pub fn win_counts(records: &[MetricRecord], a: Variant, b: Variant) -> WinCount {
    let mut out = WinCount::default();
    for ra in records.iter().filter(|r| r.variant == a) {
        let Some(rb) = records
            .iter()
            .find(|r| r.variant == b && r.seed == ra.seed && r.dataset == ra.dataset && r.backbone == ra.backbone)
        else {
            continue;
        };
        let sa = Score { metric: ra.metric, value: ra.value };
        let sb = Score { metric: rb.metric, value: rb.value };
        if sa.better_than(&sb) {
            out.a += 1;
        } else if sb.better_than(&sa) {
            out.b += 1;
        } else {
            out.a += 1;
            out.b += 1;
            out.ties += 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub exact: bool,
    pub reject: bool,
}

pub const WILCOXON_ALPHA: f64 = 0.05;
const EXACT_MAX_N: usize = 25;

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired Wilcoxon signed-rank test of `x` against `y`.
///
/// Zero differences are dropped; tied magnitudes get midranks. For up to 25
/// pairs the null distribution of `W+` is computed exactly (conditional on the
/// observed ranks); beyond that a tie-corrected normal approximation with
/// continuity correction is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(EvalError::TooFewPairs(n));
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p_value, exact) = if n <= EXACT_MAX_N {
        // Doubled ranks are integers even with midranks.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let limit = (2.0 * statistic).round() as usize;
        let tail: f64 = counts[..=limit].iter().sum();
        ((2.0 * tail / 2f64.powi(n as i32)).min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut ties = BTreeMap::new();
        for r in &ranks {
            *ties.entry(r.to_bits()).or_insert(0usize) += 1;
        }
        let correction: f64 = ties.values().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - correction).sqrt();
        let z = (statistic - mean + 0.5) / sd;
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * normal.cdf(z.min(0.0))).min(1.0), false)
    };
    Ok(WilcoxonResult { n, w_plus, w_minus, statistic, p_value, exact, reject: p_value <= WILCOXON_ALPHA })
}
