//! One forward/backward evaluation of each phase's objective.

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, TrainError};
use crate::losses::{
    diversifying_loss, make_pairs, orthogonalization_loss, projecting_loss, task_loss, total_objective, DiversifyConfig,
    LossBreakdown, LossWeights, PairConfig,
};
use crate::nn::{Batch, ModelBundle, ParamSet};

/// Everything phase 2 needs besides the model and the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSettings {
    pub weights: LossWeights,
    pub diversify: DiversifyConfig,
    pub pairs: PairConfig,
    /// Block the gradient from the coordinates back into the backbone.
    pub stop_grad_coordinates: bool,
    /// Treat the transport plan of the projecting loss as a constant, so that
    /// term trains the backbone and prototypes but not the estimator.
    pub detach_plan: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: LossBreakdown,
    /// Gradient of `loss.total`, shaped like the model.
    pub grad: ModelBundle,
    pub coords: Option<Array2<f64>>,
    pub no_positive_pairs: bool,
}

/// Task loss on `head(backbone(x))`. Dropout is active when `dropout` is given.
pub fn phase1_step(
    model: &ModelBundle,
    batch: &Batch,
    labels: ArrayView1<f64>,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<StepResult, Error> {
    let (z, cache) = model.backbone.forward(batch, dropout);
    let pred = model.head.forward(&z);
    let (task, dpred) = task_loss(&pred, labels, model.task)?;
    let mut grad = model.zeros_like();
    let dz = model.head.backward(&z, &dpred, &mut grad.head);
    model.backbone.backward(batch, &cache, &dz, &mut grad.backbone);
    let loss = LossBreakdown { task, total: task, ..Default::default() };
    Ok(StepResult { loss, grad, coords: None, no_positive_pairs: false })
}

/// Weighted phase-2 objective on `head(r B)` with `r = softmax(phi(z))`.
///
/// All four terms are evaluated for logging; terms with weight 0 contribute
/// no gradient.
pub fn phase2_step(
    model: &ModelBundle,
    batch: &Batch,
    labels: ArrayView1<f64>,
    settings: &ObjectiveSettings,
    subsample_seed: u64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<StepResult, Error> {
    let (Some(estimator), Some(space)) = (&model.estimator, &model.prototypes) else {
        return Err(TrainError::MissingPrototypes.into());
    };
    let w = settings.weights;
    let protos = &space.prototypes;

    let (z, bcache) = model.backbone.forward(batch, dropout);
    let (coords, ecache) = estimator.forward(&z);
    let projected = coords.dot(protos);
    let pred = model.head.forward(&projected);

    let (task, mut dpred) = task_loss(&pred, labels, model.task)?;
    let proj = projecting_loss(&z, &coords, protos)?;
    let pairs = make_pairs(labels, model.task, &settings.pairs);
    let div = diversifying_loss(&coords, &pairs, &settings.diversify, subsample_seed)?;
    let (orth, dprotos_orth) = orthogonalization_loss(protos)?;

    let mut grad = model.zeros_like();
    dpred *= w.task;
    let dprojected = model.head.backward(&projected, &dpred, &mut grad.head);
    let mut dcoords = dprojected.dot(&protos.t());
    let mut dprotos = coords.t().dot(&dprojected);
    let mut dz = proj.dz * w.projecting;
    if !settings.detach_plan {
        dcoords.scaled_add(w.projecting, &proj.dcoords);
    }
    dprotos.scaled_add(w.projecting, &proj.dprototypes);
    dcoords.scaled_add(w.diversifying, &div.dcoords);
    dprotos.scaled_add(w.orthogonalization, &dprotos_orth);

    let dz_est = estimator.backward(&ecache, &dcoords, grad.estimator.as_mut().expect("estimator gradient"));
    if !settings.stop_grad_coordinates {
        dz += &dz_est;
    }
    model.backbone.backward(batch, &bcache, &dz, &mut grad.backbone);
    grad.prototypes.as_mut().expect("prototype gradient").prototypes.assign(&dprotos);

    let terms = LossBreakdown { task, projecting: proj.value, diversifying: div.value, orthogonalization: orth, total: 0.0 };
    Ok(StepResult {
        loss: total_objective(&terms, &w),
        grad,
        coords: Some(coords),
        no_positive_pairs: div.no_positive_pairs,
    })
}
