//! Phase 1 (supervised backbone), prototype generation, phase 2 (training in
//! the prototype space) and the end-to-end pipeline.

mod objective;
mod optim;
mod pipeline;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use objective::{phase1_step, phase2_step, ObjectiveSettings, StepResult};
pub use optim::{clip_grad_norm, Adam, OptimConfig};
pub use pipeline::{
    prepare_data, prepare_dataset, run_phase1, run_phase2, run_pipeline, Phase1Outcome, Phase2Outcome,
    PipelineResult, PreparedData, TrainReport,
};

use crate::data::{NumericMode, SplitRatios, TabularDataset};
use crate::error::{Error, TrainError};
use crate::eval::{evaluate_batch, Score};
use crate::losses::{subsample_seed, LossBreakdown, LossWeights};
use crate::nn::{BackboneSpec, Batch, ModelBundle, ParamSet};
use crate::pspace::{choose_k, init_prototypes, kmeans, KMeansConfig, LogBase, PrototypeSpace};

/// Which phase-2 loss terms are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All four terms.
    #[default]
    Full,
    /// Without the orthogonalization term.
    NoO,
    /// Without the orthogonalization and diversifying terms.
    NoOD,
    /// Phase 1 only: the plain backbone.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoO, Variant::NoOD, Variant::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoO => "no_o",
            Variant::NoOD => "no_o_d",
            Variant::Baseline => "baseline",
        }
    }

    pub fn weights(self, base: &LossWeights) -> LossWeights {
        match self {
            Variant::Full | Variant::Baseline => *base,
            Variant::NoO => LossWeights { orthogonalization: 0.0, ..*base },
            Variant::NoOD => LossWeights { orthogonalization: 0.0, diversifying: 0.0, ..*base },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, no_o, no_o_d or baseline)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preset: String,
    pub data_dir: PathBuf,
    /// Seed of the train/validation/test partition, fixed across training seeds.
    pub split_seed: u64,
    pub ratios: SplitRatios,
    /// Overrides the preset's numerical transform.
    pub numeric_mode: Option<NumericMode>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preset: "synthetic".into(),
            data_dir: PathBuf::from("data"),
            split_seed: 0,
            ratios: [0.6, 0.2, 0.2],
            numeric_mode: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    /// Fixed prototype count; by default `max(2, ceil(log N))` for `N` features.
    pub k: Option<usize>,
    pub log_base: LogBase,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self { k: None, log_base: LogBase::Natural, n_init: km.n_init, max_iter: km.max_iter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: BackboneSpec,
    pub optim: OptimConfig,
    pub batch_size: usize,
    /// Per phase.
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub objective: ObjectiveSettings,
    pub prototypes: PrototypeConfig,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: BackboneSpec::default(),
            optim: OptimConfig::default(),
            batch_size: 256,
            max_epochs: 100,
            patience: 16,
            grad_clip: 1.0,
            objective: ObjectiveSettings::default(),
            prototypes: PrototypeConfig::default(),
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.optim.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be non-negative");
        }
        if self.prototypes.k == Some(0) {
            return bad("k must be at least 1");
        }
        let w = self.objective.weights;
        if [w.task, w.projecting, w.diversifying, w.orthogonalization].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

/// One line of the step log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub phase: Phase,
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub phase: Phase,
    pub epoch: usize,
    pub val: Score,
    pub improved: bool,
}

/// Hooks called during training; every method defaults to a no-op.
pub trait TrainObserver {
    fn on_step(&mut self, _event: &StepEvent) {}
    /// Coordinates of every phase-2 training batch.
    fn on_coordinates(&mut self, _epoch: usize, _step: usize, _coords: &Array2<f64>) {}
    fn on_epoch(&mut self, _event: &EpochEvent) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Writes each step as a JSON line.
pub struct JsonLinesObserver<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesObserver<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TrainObserver for JsonLinesObserver<W> {
    fn on_step(&mut self, event: &StepEvent) {
        if let Ok(line) = serde_json::to_string(event) {
            if let Err(e) = writeln!(self.out, "{line}") {
                log::warn!("step log write failed: {e}");
            }
        }
    }

    fn on_epoch(&mut self, event: &EpochEvent) {
        log::debug!("phase {:?} epoch {} val {:.5}{}", event.phase, event.epoch, event.val.value, if event.improved { " *" } else { "" });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub val_history: Vec<f64>,
    pub steps: usize,
    pub seconds: f64,
    /// Batches whose diversifying subsample had no positive pair.
    pub no_positive_pair_batches: usize,
    pub last_loss: LossBreakdown,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Minibatch Adam with per-epoch reshuffling and early stopping on the
/// validation metric; returns the best-validation parameters.
fn fit<F>(
    mut model: ModelBundle,
    train: &TabularDataset,
    val: &TabularDataset,
    config: &TrainConfig,
    phase: Phase,
    observer: &mut dyn TrainObserver,
    mut step_fn: F,
) -> Result<(ModelBundle, PhaseReport), Error>
where
    F: FnMut(&ModelBundle, &Batch, ndarray::ArrayView1<f64>, usize, usize, &mut ChaCha8Rng) -> Result<StepResult, Error>,
{
    config.validate()?;
    let start = Instant::now();
    let phase_stream = match phase {
        Phase::One => 0,
        Phase::Two => 2,
    };
    let mut shuffle_rng = stream_rng(model.seed, 10 + phase_stream);
    let mut dropout_rng = stream_rng(model.seed, 11 + phase_stream);
    let train_batch = Batch::from_dataset(train);
    train_batch.check(&model.layout)?;
    let val_batch = Batch::from_dataset(val);
    let mut adam = Adam::new(config.optim, model.num_params());
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut report = PhaseReport::default();
    let mut best: Option<(ModelBundle, Score)> = None;
    let mut stale = 0;
    let mut step = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = train_batch.select(chunk);
            let labels: Array1<f64> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut result = step_fn(&model, &batch, labels.view(), epoch, step, &mut dropout_rng)?;
            if !result.loss.is_finite() || result.grad.params().iter().any(|p| p.iter().any(|g| !g.is_finite())) {
                return Err(TrainError::DivergedLoss { epoch, step, detail: format!("{:?}", result.loss) }.into());
            }
            if config.grad_clip > 0.0 {
                clip_grad_norm(&mut result.grad, config.grad_clip);
            }
            adam.step(&mut model, &result.grad);
            if let Some(coords) = &result.coords {
                observer.on_coordinates(epoch, step, coords);
            }
            observer.on_step(&StepEvent { phase, epoch, step, loss: result.loss });
            report.no_positive_pair_batches += result.no_positive_pairs as usize;
            report.last_loss = result.loss;
            step += 1;
        }
        let score = evaluate_batch(&model, &val_batch, val.labels.view())?;
        let improved = best.as_ref().is_none_or(|(_, b)| score.better_than(b));
        observer.on_epoch(&EpochEvent { phase, epoch, val: score, improved });
        report.val_history.push(score.value);
        report.epochs = epoch + 1;
        if improved {
            best = Some((model.clone(), score));
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_model, best_score) = best.expect("at least one epoch");
    report.best_val = best_score.value;
    report.steps = step;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((best_model, report))
}

/// Trains backbone and head on the task loss alone.
pub fn train_phase1(
    model: ModelBundle,
    train: &TabularDataset,
    val: &TabularDataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelBundle, PhaseReport), Error> {
    fit(model, train, val, config, Phase::One, observer, |m, b, y, _, _, rng| phase1_step(m, b, y, Some(rng)))
}

/// Trains backbone, estimator, head and prototypes on the weighted objective.
pub fn train_phase2(
    model: ModelBundle,
    train: &TabularDataset,
    val: &TabularDataset,
    config: &TrainConfig,
    settings: &ObjectiveSettings,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelBundle, PhaseReport), Error> {
    if !model.projects() {
        return Err(TrainError::MissingPrototypes.into());
    }
    let run_seed = model.seed;
    fit(model, train, val, config, Phase::Two, observer, |m, b, y, epoch, step, rng| {
        phase2_step(m, b, y, settings, subsample_seed(run_seed, epoch, step), Some(rng))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeOutcome {
    pub space: PrototypeSpace,
    pub k: usize,
    pub inertia: f64,
    /// Prototypes nudged away from a zero centroid.
    pub perturbed: Vec<usize>,
}

/// K-Means over eval-mode representations of the training rows.
pub fn generate_prototypes(
    model: &ModelBundle,
    train: &TabularDataset,
    config: &PrototypeConfig,
    num_features: usize,
    seed: u64,
) -> Result<PrototypeOutcome, Error> {
    let k = config.k.unwrap_or_else(|| choose_k(num_features, config.log_base));
    let reps = model.represent(&Batch::from_dataset(train))?;
    let km = kmeans(&reps, k, &KMeansConfig { n_init: config.n_init, max_iter: config.max_iter, seed })?;
    let (space, perturbed) = init_prototypes(&km.centroids, seed)?;
    if !perturbed.is_empty() {
        log::warn!("prototypes {perturbed:?} started from a zero centroid and were perturbed");
    }
    Ok(PrototypeOutcome { space, k, inertia: km.inertia, perturbed })
}
