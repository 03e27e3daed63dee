//! load -> preprocess -> split -> phase 1 -> prototypes -> re-initialize ->
//! phase 2 -> test.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    generate_prototypes, train_phase1, train_phase2, DataConfig, ObjectiveSettings, PhaseReport, PrototypeOutcome,
    TrainConfig, TrainObserver, Variant,
};
use crate::data::{
    apply_preprocess, fit_preprocess, load_preset, split_indices, NumericMode, PreprocessState, SplitIndices,
    TabularDataset, Task,
};
use crate::error::Error;
use crate::eval::{evaluate, Score};
use crate::nn::{build_model, BackboneKind, ModelBundle};

/// Preprocessed train/validation/test partitions of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub name: String,
    pub task: Task,
    pub num_classes: Option<usize>,
    pub num_features: usize,
    pub preprocess: PreprocessState,
    pub split: SplitIndices,
    pub train: TabularDataset,
    pub val: TabularDataset,
    pub test: TabularDataset,
}

/// Splits `raw` with the fixed split seed and fits preprocessing on the training rows only.
pub fn prepare_dataset(name: &str, raw: &TabularDataset, mode: NumericMode, config: &DataConfig) -> Result<PreparedData, Error> {
    let split = split_indices(raw, config.ratios, config.split_seed)?;
    let train_raw = raw.select(&split.train);
    let preprocess = fit_preprocess(&train_raw, config.numeric_mode.unwrap_or(mode))?;
    let train = apply_preprocess(&preprocess, &train_raw)?;
    let val = apply_preprocess(&preprocess, &raw.select(&split.val))?;
    let test = apply_preprocess(&preprocess, &raw.select(&split.test))?;
    Ok(PreparedData {
        name: name.to_string(),
        task: raw.task,
        num_classes: raw.num_classes,
        num_features: raw.n_features(),
        preprocess,
        split,
        train,
        val,
        test,
    })
}

pub fn prepare_data(config: &DataConfig) -> Result<PreparedData, Error> {
    let (preset, raw) = load_preset(&config.preset, &config.data_dir)?;
    prepare_dataset(preset.name, &raw, preset.mode, config)
}

#[derive(Clone, Debug)]
pub struct Phase1Outcome {
    pub model: ModelBundle,
    pub report: PhaseReport,
    pub test: Score,
    pub prototypes: PrototypeOutcome,
}

/// Phase 1 and prototype generation for one training seed.
pub fn run_phase1(
    data: &PreparedData,
    config: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<Phase1Outcome, Error> {
    let model = build_model(&config.model, &data.train.schema, data.task, data.num_classes, seed)?;
    let (model, report) = train_phase1(model, &data.train, &data.val, config, observer)?;
    let test = evaluate(&model, &data.test)?;
    let prototypes = generate_prototypes(&model, &data.train, &config.prototypes, data.num_features, seed)?;
    log::info!(
        "{} seed {seed}: phase 1 {} epochs, test {} {:.4}, K = {}",
        data.name,
        report.epochs,
        test.metric,
        test.value,
        prototypes.k
    );
    Ok(Phase1Outcome { model, report, test, prototypes })
}

#[derive(Clone, Debug)]
pub struct Phase2Outcome {
    pub model: ModelBundle,
    pub report: PhaseReport,
    pub test: Score,
}

/// Seed for the re-initialized phase-2 parameters.
pub fn phase2_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0000_0000_0002
}

/// Re-initializes the phase-1 model around its prototypes and runs phase 2
/// with the variant's loss weights. `Variant::Baseline` is not a phase-2
/// variant and returns the phase-1 model unchanged.
pub fn run_phase2(
    data: &PreparedData,
    phase1: &Phase1Outcome,
    config: &TrainConfig,
    variant: Variant,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<Phase2Outcome, Error> {
    if variant == Variant::Baseline {
        return Ok(Phase2Outcome { model: phase1.model.clone(), report: phase1.report.clone(), test: phase1.test });
    }
    let model = phase1.model.clone().with_prototypes(phase1.prototypes.space.clone())?.reinitialize(phase2_seed(seed))?;
    let settings = ObjectiveSettings { weights: variant.weights(&config.objective.weights), ..config.objective };
    let (model, report) = train_phase2(model, &data.train, &data.val, config, &settings, observer)?;
    let test = evaluate(&model, &data.test)?;
    log::info!("{} seed {seed}: {variant} {} epochs, test {} {:.4}", data.name, report.epochs, test.metric, test.value);
    Ok(Phase2Outcome { model, report, test })
}

/// Summary of one end-to-end run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub task: Task,
    pub backbone: BackboneKind,
    pub variant: Variant,
    pub seed: u64,
    pub split_seed: u64,
    pub num_features: usize,
    pub k: usize,
    pub kmeans_inertia: f64,
    pub perturbed_prototypes: Vec<usize>,
    /// Test score of the phase-1 model.
    pub baseline_test: Score,
    /// Test score of the final model.
    pub test: Score,
    pub phase1: PhaseReport,
    pub phase2: Option<PhaseReport>,
    pub diversify_sample_fraction: f64,
    pub seconds: f64,
}

pub struct PipelineResult {
    pub report: TrainReport,
    pub model: ModelBundle,
    pub phase1_model: ModelBundle,
    pub data: PreparedData,
}

pub fn run_pipeline(config: &TrainConfig, seed: u64, observer: &mut dyn TrainObserver) -> Result<PipelineResult, Error> {
    config.validate()?;
    let start = Instant::now();
    let data = prepare_data(&config.data)?;
    let phase1 = run_phase1(&data, config, seed, observer)?;
    let phase2 = run_phase2(&data, &phase1, config, config.variant, seed, observer)?;
    let report = TrainReport {
        dataset: data.name.clone(),
        task: data.task,
        backbone: config.model.kind,
        variant: config.variant,
        seed,
        split_seed: config.data.split_seed,
        num_features: data.num_features,
        k: phase1.prototypes.k,
        kmeans_inertia: phase1.prototypes.inertia,
        perturbed_prototypes: phase1.prototypes.perturbed.clone(),
        baseline_test: phase1.test,
        test: phase2.test,
        phase1: phase1.report.clone(),
        phase2: (config.variant != Variant::Baseline).then_some(phase2.report),
        diversify_sample_fraction: config.objective.diversify.sample_fraction,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineResult { report, model: phase2.model, phase1_model: phase1.model, data })
}
