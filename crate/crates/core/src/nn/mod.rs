//! Backbones, prediction head, coordinate estimator and the model bundle.
//!
//! Forward passes are plain `ndarray` code; each layer has a hand-written
//! backward pass that accumulates into a gradient value of the layer's own
//! type. All floating point work is `f64`.

mod backbone;
mod layers;

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{
    Backbone, BackboneCache, BackboneKind, BackboneSpec, Batch, FeatureAttention, InputEncoder, InputLayout, Mlp,
    Residual, ResidualBlock,
};
pub use layers::{softmax_rows, softmax_rows_backward, Activation, LayerNorm, Linear, ParamSet};

use crate::data::{ColumnSchema, Task};
use crate::error::{Error, ModelError};
use crate::pspace::PrototypeSpace;

/// Three-layer perceptron `d -> h -> h -> K` followed by a softmax, mapping a
/// representation to coordinates on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateEstimator {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct EstimatorCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    coords: Array2<f64>,
}

impl CoordinateEstimator {
    pub fn init(input_dim: usize, hidden: usize, k: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let layers = vec![Linear::init(input_dim, hidden, rng), Linear::init(hidden, hidden, rng), Linear::init(hidden, k, rng)];
        Self { layers, activation }
    }

    pub fn num_prototypes(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, EstimatorCache) {
        let mut inputs = Vec::with_capacity(3);
        let mut pre = Vec::with_capacity(2);
        let mut h = z.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let u = layer.forward(&h);
            inputs.push(h);
            if l == last {
                h = u;
            } else {
                h = self.activation.forward(&u);
                pre.push(u);
            }
        }
        let coords = softmax_rows(&h);
        (coords.clone(), EstimatorCache { inputs, pre, coords })
    }

    /// Accumulates parameter gradients for `dL/dr` and returns `dL/dz`.
    pub fn backward(&self, cache: &EstimatorCache, dcoords: &Array2<f64>, grad: &mut CoordinateEstimator) -> Array2<f64> {
        let mut dh = softmax_rows_backward(&cache.coords, dcoords);
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                dh = self.activation.backward(&cache.pre[l], &dh);
            }
            dh = self.layers[l].backward(&cache.inputs[l], &dh, &mut grad.layers[l]);
        }
        dh
    }
}

impl ParamSet for CoordinateEstimator {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        self.layers.iter().for_each(|l| l.push_params(&mut v));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.layers.iter_mut().for_each(|l| l.push_params_mut(&mut v));
        v
    }
}

/// Everything needed to run or resume a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub spec: BackboneSpec,
    pub task: Task,
    pub output_dim: usize,
    pub layout: InputLayout,
    pub seed: u64,
    pub backbone: Backbone,
    pub head: Linear,
    pub estimator: Option<CoordinateEstimator>,
    pub prototypes: Option<PrototypeSpace>,
}

/// Output width of the head: one logit for binary and regression tasks.
pub fn output_dim(task: Task, num_classes: Option<usize>) -> usize {
    match task {
        Task::Multiclass => num_classes.unwrap_or(2),
        Task::Binclass | Task::Regression => 1,
    }
}

/// Seeded construction; the same `(spec, schema, task, seed)` gives identical parameters.
pub fn build_model(
    spec: &BackboneSpec,
    schema: &[ColumnSchema],
    task: Task,
    num_classes: Option<usize>,
    seed: u64,
) -> Result<ModelBundle, ModelError> {
    let layout = InputLayout::from_schema(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = Backbone::init(spec, &layout, &mut rng)?;
    let out = output_dim(task, num_classes);
    let head = Linear::init(spec.representation_dim(), out, &mut rng);
    Ok(ModelBundle {
        spec: spec.clone(),
        task,
        output_dim: out,
        layout,
        seed,
        backbone,
        head,
        estimator: None,
        prototypes: None,
    })
}

impl ModelBundle {
    fn estimator_rng(seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        rng
    }

    fn fresh_estimator(&self, k: usize, seed: u64) -> CoordinateEstimator {
        let d = self.spec.representation_dim();
        let hidden = self.spec.estimator_hidden.unwrap_or(d);
        CoordinateEstimator::init(d, hidden, k, self.spec.activation, &mut Self::estimator_rng(seed))
    }

    /// Attaches a prototype space and a freshly initialized estimator for it.
    pub fn with_prototypes(mut self, space: PrototypeSpace) -> Result<Self, ModelError> {
        if space.dim() != self.spec.representation_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "prototypes have width {}, representations {}",
                space.dim(),
                self.spec.representation_dim()
            )));
        }
        self.estimator = Some(self.fresh_estimator(space.k(), self.seed));
        self.prototypes = Some(space);
        Ok(self)
    }

    /// Fresh backbone, head and estimator drawn from `seed`; the prototype
    /// space is carried over unchanged.
    pub fn reinitialize(&self, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::init(&self.spec, &self.layout, &mut rng)?;
        let head = Linear::init(self.spec.representation_dim(), self.output_dim, &mut rng);
        let estimator = self.prototypes.as_ref().map(|p| self.fresh_estimator(p.k(), seed));
        Ok(Self { backbone, head, estimator, seed, prototypes: self.prototypes.clone(), ..self.clone() })
    }

    /// Whether predictions go through the prototype projection.
    pub fn projects(&self) -> bool {
        self.prototypes.is_some() && self.estimator.is_some()
    }

    /// Eval-mode representations.
    pub fn represent(&self, batch: &Batch) -> Result<Array2<f64>, ModelError> {
        batch.check(&self.layout)?;
        Ok(self.backbone.forward(batch, None).0)
    }

    /// Eval-mode coordinates on the simplex.
    pub fn coordinates(&self, batch: &Batch) -> Result<Array2<f64>, ModelError> {
        let estimator = self.estimator.as_ref().ok_or_else(|| ModelError::ShapeMismatch("model has no estimator".into()))?;
        Ok(estimator.forward(&self.represent(batch)?).0)
    }

    /// Applies the head to representations (or projected representations).
    pub fn forward_head(&self, reps: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        if reps.ncols() != self.head.input_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "head expects width {}, got {}",
                self.head.input_dim(),
                reps.ncols()
            )));
        }
        Ok(self.head.forward(reps))
    }

    /// Eval-mode raw outputs (logits or normalized regression values).
    pub fn predict(&self, batch: &Batch) -> Result<Array2<f64>, ModelError> {
        let z = self.represent(batch)?;
        match (&self.estimator, &self.prototypes) {
            (Some(est), Some(space)) => {
                let r = est.forward(&z).0;
                self.forward_head(&r.dot(&space.prototypes))
            }
            _ => self.forward_head(&z),
        }
    }

    /// Named parameter groups in [`ParamSet`] order with their lengths.
    pub fn param_groups(&self) -> Vec<(&'static str, usize)> {
        let mut groups = vec![("backbone", self.backbone.num_params()), ("head", self.head.num_params())];
        if let Some(e) = &self.estimator {
            groups.push(("estimator", e.num_params()));
        }
        if let Some(p) = &self.prototypes {
            groups.push(("prototypes", p.prototypes.len()));
        }
        groups
    }
}

impl ParamSet for ModelBundle {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.backbone.params();
        v.extend(self.head.params());
        if let Some(e) = &self.estimator {
            v.extend(e.params());
        }
        if let Some(p) = &self.prototypes {
            v.push(layers::slice(&p.prototypes));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.backbone.params_mut();
        v.extend(self.head.params_mut());
        if let Some(e) = &mut self.estimator {
            v.extend(e.params_mut());
        }
        if let Some(p) = &mut self.prototypes {
            v.push(layers::slice_mut(&mut p.prototypes));
        }
        v
    }
}

const CHECKPOINT_FORMAT: &str = "protab-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: ModelBundle,
}

/// Writes a JSON checkpoint; floats round-trip bit-exactly.
pub fn save_checkpoint(model: &ModelBundle, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let ckpt = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: model.clone() };
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version)).into());
    }
    Ok(ckpt.model)
}
