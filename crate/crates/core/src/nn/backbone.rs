//! Backbones map a batch of rows to representations `z` of width
//! [`BackboneSpec::representation_dim`].
//!
//! * `mlp`: `depth` x [Linear -> activation -> dropout]; `z` is the last hidden layer.
//! * `residual`: Linear projection to `hidden_dim`, then `depth` pre-norm blocks
//!   `h + W2 drop(act(W1 LN(h)))` with inner width `2 * hidden_dim`; `z = act(LN(h))`.
//! * `feature_attention`: one token of width `embedding_dim` per feature plus a
//!   learned readout token. One attention block in which the readout token
//!   attends over all tokens, followed by a residual feed-forward layer of
//!   width `hidden_dim`; `z` is the final readout token.
//!
//! Categorical columns are embedded (`cardinality x embedding_dim` tables) and
//! concatenated to the numerical inputs for `mlp` and `residual`.

use ndarray::{Array1, Array2, Axis};
#[cfg(test)]
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_mask, slice, slice1, slice1_mut, slice_mut, uniform_fan_in, Activation, LayerNorm, LayerNormCache,
    Linear, ParamSet,
};
use crate::data::{ColumnKind, ColumnSchema, TabularDataset};
use crate::error::ModelError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Mlp,
    Residual,
    FeatureAttention,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::Mlp => "mlp",
            BackboneKind::Residual => "residual",
            BackboneKind::FeatureAttention => "feature_attention",
        })
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mlp" => Ok(BackboneKind::Mlp),
            "residual" | "resnet" => Ok(BackboneKind::Residual),
            "feature_attention" | "attention" => Ok(BackboneKind::FeatureAttention),
            other => Err(format!("unknown backbone `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub depth: usize,
    pub hidden_dim: usize,
    /// Categorical embedding width; the token width for `feature_attention`.
    pub embedding_dim: Option<usize>,
    pub activation: Activation,
    pub dropout: f64,
    /// Hidden width of the coordinate estimator; defaults to the representation width.
    pub estimator_hidden: Option<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Mlp,
            depth: 3,
            hidden_dim: 128,
            embedding_dim: Some(8),
            activation: Activation::Relu,
            dropout: 0.1,
            estimator_hidden: None,
        }
    }
}

impl BackboneSpec {
    pub fn representation_dim(&self) -> usize {
        match self.kind {
            BackboneKind::FeatureAttention => self.embedding_dim.unwrap_or(self.hidden_dim),
            _ => self.hidden_dim,
        }
    }

    pub fn validate(&self, layout: &InputLayout) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::IncompatibleSpec(msg));
        if self.depth == 0 || self.hidden_dim == 0 {
            return bad("depth and hidden_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if layout.width() == 0 {
            return bad("schema has no feature columns".into());
        }
        if self.embedding_dim == Some(0) || self.estimator_hidden == Some(0) {
            return bad("embedding_dim and estimator_hidden must be at least 1".into());
        }
        match self.kind {
            BackboneKind::FeatureAttention => {
                if self.embedding_dim.is_none() {
                    return bad("feature_attention needs embedding_dim (the token width)".into());
                }
                if self.depth != 1 {
                    return bad(format!("feature_attention has exactly one attention block, got depth {}", self.depth));
                }
            }
            _ => {
                if !layout.cardinalities.is_empty() && self.embedding_dim.is_none() {
                    return bad("categorical columns need embedding_dim".into());
                }
            }
        }
        Ok(())
    }

    /// Closed-form trainable parameter count of the backbone alone.
    pub fn param_count(&self, layout: &InputLayout) -> usize {
        let d = self.hidden_dim;
        let e = self.embedding_dim.unwrap_or(0);
        let tables: usize = layout.cardinalities.iter().map(|c| c * e).sum();
        let input = layout.numerical + layout.cardinalities.len() * e;
        match self.kind {
            BackboneKind::Mlp => tables + (input * d + d) + (self.depth - 1) * (d * d + d),
            BackboneKind::Residual => {
                let block = 2 * d + (d * 2 * d + 2 * d) + (2 * d * d + d);
                tables + (input * d + d) + self.depth * block + 2 * d
            }
            BackboneKind::FeatureAttention => {
                2 * layout.numerical * e + tables + e + 3 * e * e + (e * e + e) + (e * d + d) + (d * e + e)
            }
        }
    }
}

/// Column layout a model was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub numerical: usize,
    pub cardinalities: Vec<usize>,
}

impl InputLayout {
    pub fn from_schema(schema: &[ColumnSchema]) -> Result<Self, ModelError> {
        let mut cardinalities = Vec::new();
        let mut numerical = 0;
        for col in schema {
            match col.kind {
                ColumnKind::Numerical => numerical += 1,
                ColumnKind::Categorical => cardinalities.push(col.cardinality.ok_or_else(|| {
                    ModelError::IncompatibleSpec(format!("categorical column `{}` has no cardinality", col.name))
                })?),
            }
        }
        Ok(Self { numerical, cardinalities })
    }

    pub fn width(&self) -> usize {
        self.numerical + self.cardinalities.len()
    }
}

/// Model input: numerical cells and categorical codes, split by kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub numerical: Array2<f64>,
    pub categorical: Array2<usize>,
}

impl Batch {
    pub fn from_dataset(ds: &TabularDataset) -> Self {
        let num = ds.numerical_columns();
        let cat = ds.categorical_columns();
        Self {
            numerical: ds.rows.select(Axis(1), &num),
            categorical: ds.rows.select(Axis(1), &cat).mapv(|v| v as usize),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self { numerical: self.numerical.select(Axis(0), rows), categorical: self.categorical.select(Axis(0), rows) }
    }

    pub fn len(&self) -> usize {
        self.numerical.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, layout: &InputLayout) -> Result<(), ModelError> {
        if self.numerical.ncols() != layout.numerical || self.categorical.ncols() != layout.cardinalities.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "batch has {} numerical and {} categorical columns, model expects {} and {}",
                self.numerical.ncols(),
                self.categorical.ncols(),
                layout.numerical,
                layout.cardinalities.len()
            )));
        }
        if self.categorical.nrows() != self.numerical.nrows() {
            return Err(ModelError::ShapeMismatch("numerical and categorical row counts differ".into()));
        }
        for (j, col) in self.categorical.columns().into_iter().enumerate() {
            if let Some(&code) = col.iter().find(|&&c| c >= layout.cardinalities[j]) {
                return Err(ModelError::ShapeMismatch(format!(
                    "categorical column {j}: code {code} >= cardinality {}",
                    layout.cardinalities[j]
                )));
            }
        }
        if self.numerical.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput("backbone"));
        }
        Ok(())
    }
}

/// Categorical embedding tables concatenated after the numerical cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    pub numerical: usize,
    pub tables: Vec<Array2<f64>>,
}

impl InputEncoder {
    fn init(layout: &InputLayout, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let tables = layout.cardinalities.iter().map(|&c| uniform_fan_in(c, dim, dim, rng)).collect();
        Self { numerical: layout.numerical, tables }
    }

    fn width(&self) -> usize {
        self.numerical + self.tables.iter().map(|t| t.ncols()).sum::<usize>()
    }

    fn encode(&self, batch: &Batch) -> Array2<f64> {
        if self.tables.is_empty() {
            return batch.numerical.clone();
        }
        let n = batch.len();
        let mut out = Array2::zeros((n, self.width()));
        out.slice_mut(ndarray::s![.., ..self.numerical]).assign(&batch.numerical);
        let mut offset = self.numerical;
        for (j, table) in self.tables.iter().enumerate() {
            let e = table.ncols();
            for i in 0..n {
                out.slice_mut(ndarray::s![i, offset..offset + e]).assign(&table.row(batch.categorical[[i, j]]));
            }
            offset += e;
        }
        out
    }

    fn backward(&self, batch: &Batch, dx: &Array2<f64>, grad: &mut InputEncoder) {
        let mut offset = self.numerical;
        for (j, table) in grad.tables.iter_mut().enumerate() {
            let e = table.ncols();
            for i in 0..batch.len() {
                let mut row = table.row_mut(batch.categorical[[i, j]]);
                row += &dx.slice(ndarray::s![i, offset..offset + e]);
            }
            offset += e;
        }
    }

    fn push_params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.extend(self.tables.iter().map(slice));
    }

    fn push_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.extend(self.tables.iter_mut().map(slice_mut));
    }
}

fn maybe_dropout(x: &mut Array2<f64>, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let mask = dropout_mask(x.dim(), p, rng);
            *x *= &mask;
            Some(mask)
        }
        _ => None,
    }
}

fn apply_mask(mut g: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    if let Some(m) = mask {
        g *= m;
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub encoder: InputEncoder,
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    fn init(spec: &BackboneSpec, layout: &InputLayout, rng: &mut ChaCha8Rng) -> Self {
        let encoder = InputEncoder::init(layout, spec.embedding_dim.unwrap_or(1), rng);
        let mut width = encoder.width();
        let mut layers = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            layers.push(Linear::init(width, spec.hidden_dim, rng));
            width = spec.hidden_dim;
        }
        Self { encoder, layers, activation: spec.activation, dropout: spec.dropout }
    }

    fn forward(&self, batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, MlpCache) {
        let mut h = self.encoder.encode(batch);
        let mut cache = MlpCache { inputs: Vec::new(), pre: Vec::new(), masks: Vec::new() };
        for layer in &self.layers {
            let u = layer.forward(&h);
            let mut a = self.activation.forward(&u);
            let mask = maybe_dropout(&mut a, self.dropout, rng.as_deref_mut());
            cache.inputs.push(std::mem::replace(&mut h, a));
            cache.pre.push(u);
            cache.masks.push(mask);
        }
        (h, cache)
    }

    fn backward(&self, batch: &Batch, cache: &MlpCache, dz: &Array2<f64>, grad: &mut Mlp) {
        let mut dh = dz.clone();
        for l in (0..self.layers.len()).rev() {
            let du = self.activation.backward(&cache.pre[l], &apply_mask(dh, &cache.masks[l]));
            if l == 0 && self.encoder.tables.is_empty() {
                self.layers[l].backward_params(&cache.inputs[l], &du, &mut grad.layers[l]);
                return;
            }
            dh = self.layers[l].backward(&cache.inputs[l], &du, &mut grad.layers[l]);
        }
        self.encoder.backward(batch, &dh, &mut grad.encoder);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub encoder: InputEncoder,
    pub input: Linear,
    pub blocks: Vec<ResidualBlock>,
    pub norm: LayerNorm,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
struct BlockCache {
    norm: LayerNormCache,
    normed: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    mask_hidden: Option<Array2<f64>>,
    mask_out: Option<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub struct ResidualCache {
    encoded: Array2<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    pre: Array2<f64>,
}

impl Residual {
    fn init(spec: &BackboneSpec, layout: &InputLayout, rng: &mut ChaCha8Rng) -> Self {
        let d = spec.hidden_dim;
        let encoder = InputEncoder::init(layout, spec.embedding_dim.unwrap_or(1), rng);
        let input = Linear::init(encoder.width(), d, rng);
        let blocks = (0..spec.depth)
            .map(|_| ResidualBlock { norm: LayerNorm::new(d), fc1: Linear::init(d, 2 * d, rng), fc2: Linear::init(2 * d, d, rng) })
            .collect();
        Self { encoder, input, blocks, norm: LayerNorm::new(d), activation: spec.activation, dropout: spec.dropout }
    }

    fn forward(&self, batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, ResidualCache) {
        let encoded = self.encoder.encode(batch);
        let mut h = self.input.forward(&encoded);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (normed, norm) = block.norm.forward(&h);
            let pre = block.fc1.forward(&normed);
            let mut hidden = self.activation.forward(&pre);
            let mask_hidden = maybe_dropout(&mut hidden, self.dropout, rng.as_deref_mut());
            let mut out = block.fc2.forward(&hidden);
            let mask_out = maybe_dropout(&mut out, self.dropout, rng.as_deref_mut());
            h += &out;
            caches.push(BlockCache { norm, normed, pre, hidden, mask_hidden, mask_out });
        }
        let (pre, norm) = self.norm.forward(&h);
        let z = self.activation.forward(&pre);
        (z, ResidualCache { encoded, blocks: caches, norm, pre })
    }

    fn backward(&self, batch: &Batch, cache: &ResidualCache, dz: &Array2<f64>, grad: &mut Residual) {
        let dpre = self.activation.backward(&cache.pre, dz);
        let mut dh = self.norm.backward(&cache.norm, &dpre, &mut grad.norm);
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let c = &cache.blocks[b];
            let g = &mut grad.blocks[b];
            let dout = apply_mask(dh.clone(), &c.mask_out);
            let dhidden = block.fc2.backward(&c.hidden, &dout, &mut g.fc2);
            let dpre = self.activation.backward(&c.pre, &apply_mask(dhidden, &c.mask_hidden));
            let dnormed = block.fc1.backward(&c.normed, &dpre, &mut g.fc1);
            dh += &block.norm.backward(&c.norm, &dnormed, &mut g.norm);
        }
        if self.encoder.tables.is_empty() {
            self.input.backward_params(&cache.encoded, &dh, &mut grad.input);
        } else {
            let dx = self.input.backward(&cache.encoded, &dh, &mut grad.input);
            self.encoder.backward(batch, &dx, &mut grad.encoder);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttention {
    /// Per-feature token scale for numerical columns (`n_num x e`).
    pub num_weight: Array2<f64>,
    pub num_bias: Array2<f64>,
    pub tables: Vec<Array2<f64>>,
    pub readout: Array1<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub out: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    /// `(n * t) x e`, token `j` of sample `i` at row `i * t + j`.
    tokens: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    query: Array1<f64>,
    attn: Array2<f64>,
    mixed: Array2<f64>,
    t1: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_hidden: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl FeatureAttention {
    fn init(spec: &BackboneSpec, layout: &InputLayout, rng: &mut ChaCha8Rng) -> Self {
        let e = spec.embedding_dim.expect("validated");
        let d = spec.hidden_dim;
        let num_weight = uniform_fan_in(layout.numerical, e, e, rng);
        let num_bias = uniform_fan_in(layout.numerical, e, e, rng);
        let tables = layout.cardinalities.iter().map(|&c| uniform_fan_in(c, e, e, rng)).collect();
        let readout = uniform_fan_in(1, e, e, rng).into_shape_with_order(e).expect("row vector");
        Self {
            num_weight,
            num_bias,
            tables,
            readout,
            query: uniform_fan_in(e, e, e, rng),
            key: uniform_fan_in(e, e, e, rng),
            value: uniform_fan_in(e, e, e, rng),
            out: Linear::init(e, e, rng),
            ffn_in: Linear::init(e, d, rng),
            ffn_out: Linear::init(d, e, rng),
            activation: spec.activation,
            dropout: spec.dropout,
        }
    }

    fn token_count(&self) -> usize {
        self.num_weight.nrows() + self.tables.len() + 1
    }

    fn tokens(&self, batch: &Batch) -> Array2<f64> {
        let (n, t, e) = (batch.len(), self.token_count(), self.readout.len());
        let n_num = self.num_weight.nrows();
        let mut tokens = Array2::zeros((n * t, e));
        for i in 0..n {
            for j in 0..n_num {
                let mut row = tokens.row_mut(i * t + j);
                row.assign(&self.num_bias.row(j));
                row.scaled_add(batch.numerical[[i, j]], &self.num_weight.row(j));
            }
            for (c, table) in self.tables.iter().enumerate() {
                tokens.row_mut(i * t + n_num + c).assign(&table.row(batch.categorical[[i, c]]));
            }
            tokens.row_mut(i * t + t - 1).assign(&self.readout);
        }
        tokens
    }

    fn forward(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, AttentionCache) {
        let (n, t, e) = (batch.len(), self.token_count(), self.readout.len());
        let scale = 1.0 / (e as f64).sqrt();
        let tokens = self.tokens(batch);
        let keys = tokens.dot(&self.key);
        let values = tokens.dot(&self.value);
        let query = self.readout.dot(&self.query);
        let scores = (keys.dot(&query) * scale).into_shape_with_order((n, t)).expect("n x t scores");
        let attn = super::layers::softmax_rows(&scores);
        let mut mixed = Array2::zeros((n, e));
        for i in 0..n {
            let mut row = mixed.row_mut(i);
            for j in 0..t {
                row.scaled_add(attn[[i, j]], &values.row(i * t + j));
            }
        }
        let mut t1 = self.out.forward(&mixed);
        t1 += &self.readout;
        let ffn_pre = self.ffn_in.forward(&t1);
        let mut ffn_hidden = self.activation.forward(&ffn_pre);
        let mask = maybe_dropout(&mut ffn_hidden, self.dropout, rng);
        let z = &t1 + &self.ffn_out.forward(&ffn_hidden);
        (z, AttentionCache { tokens, keys, values, query, attn, mixed, t1, ffn_pre, ffn_hidden, mask })
    }

    fn backward(&self, batch: &Batch, c: &AttentionCache, dz: &Array2<f64>, g: &mut FeatureAttention) {
        let (n, t, e) = (batch.len(), self.token_count(), self.readout.len());
        let n_num = self.num_weight.nrows();
        let scale = 1.0 / (e as f64).sqrt();

        let dhidden = self.ffn_out.backward(&c.ffn_hidden, dz, &mut g.ffn_out);
        let dpre = self.activation.backward(&c.ffn_pre, &apply_mask(dhidden, &c.mask));
        let mut dt1 = self.ffn_in.backward(&c.t1, &dpre, &mut g.ffn_in);
        dt1 += dz;
        g.readout += &dt1.sum_axis(Axis(0));
        let dmixed = self.out.backward(&c.mixed, &dt1, &mut g.out);

        let mut dvalues = Array2::zeros((n * t, e));
        let mut dscores = Array2::zeros((n, t));
        for i in 0..n {
            let dm = dmixed.row(i);
            let mut dattn = Array1::zeros(t);
            for j in 0..t {
                let r = i * t + j;
                dvalues.row_mut(r).scaled_add(c.attn[[i, j]], &dm);
                dattn[j] = dm.dot(&c.values.row(r));
            }
            let a = c.attn.row(i);
            let inner = a.dot(&dattn);
            for j in 0..t {
                dscores[[i, j]] = a[j] * (dattn[j] - inner) * scale;
            }
        }
        let dscores = dscores.into_shape_with_order(n * t).expect("flat scores");
        // scores = keys . query
        let dquery = c.keys.t().dot(&dscores);
        let dkeys = {
            let col = dscores.view().insert_axis(Axis(1));
            let row = c.query.view().insert_axis(Axis(0));
            col.dot(&row)
        };
        g.query += &self.readout.view().insert_axis(Axis(1)).dot(&dquery.view().insert_axis(Axis(0)));
        g.readout += &self.query.dot(&dquery);
        g.key += &c.tokens.t().dot(&dkeys);
        g.value += &c.tokens.t().dot(&dvalues);
        let mut dtokens = dkeys.dot(&self.key.t());
        dtokens += &dvalues.dot(&self.value.t());

        for i in 0..n {
            for j in 0..n_num {
                let dtok = dtokens.row(i * t + j);
                g.num_weight.row_mut(j).scaled_add(batch.numerical[[i, j]], &dtok);
                let mut b = g.num_bias.row_mut(j);
                b += &dtok;
            }
            for (k, table) in g.tables.iter_mut().enumerate() {
                let mut row = table.row_mut(batch.categorical[[i, k]]);
                row += &dtokens.row(i * t + n_num + k);
            }
            g.readout += &dtokens.row(i * t + t - 1);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Backbone {
    Mlp(Mlp),
    Residual(Residual),
    FeatureAttention(FeatureAttention),
}

#[derive(Clone, Debug)]
pub enum BackboneCache {
    Mlp(MlpCache),
    Residual(ResidualCache),
    FeatureAttention(AttentionCache),
}

impl Backbone {
    pub fn init(spec: &BackboneSpec, layout: &InputLayout, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        spec.validate(layout)?;
        Ok(match spec.kind {
            BackboneKind::Mlp => Backbone::Mlp(Mlp::init(spec, layout, rng)),
            BackboneKind::Residual => Backbone::Residual(Residual::init(spec, layout, rng)),
            BackboneKind::FeatureAttention => Backbone::FeatureAttention(FeatureAttention::init(spec, layout, rng)),
        })
    }

    /// Dropout is active only when `rng` is given.
    pub fn forward(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, BackboneCache) {
        match self {
            Backbone::Mlp(m) => {
                let (z, c) = m.forward(batch, rng);
                (z, BackboneCache::Mlp(c))
            }
            Backbone::Residual(m) => {
                let (z, c) = m.forward(batch, rng);
                (z, BackboneCache::Residual(c))
            }
            Backbone::FeatureAttention(m) => {
                let (z, c) = m.forward(batch, rng);
                (z, BackboneCache::FeatureAttention(c))
            }
        }
    }

    /// Accumulates parameter gradients for `dL/dz` into `grad`.
    pub fn backward(&self, batch: &Batch, cache: &BackboneCache, dz: &Array2<f64>, grad: &mut Backbone) {
        match (self, cache, grad) {
            (Backbone::Mlp(m), BackboneCache::Mlp(c), Backbone::Mlp(g)) => m.backward(batch, c, dz, g),
            (Backbone::Residual(m), BackboneCache::Residual(c), Backbone::Residual(g)) => m.backward(batch, c, dz, g),
            (Backbone::FeatureAttention(m), BackboneCache::FeatureAttention(c), Backbone::FeatureAttention(g)) => {
                m.backward(batch, c, dz, g)
            }
            _ => panic!("backbone, cache and gradient variants differ"),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Mlp(_) => BackboneKind::Mlp,
            Backbone::Residual(_) => BackboneKind::Residual,
            Backbone::FeatureAttention(_) => BackboneKind::FeatureAttention,
        }
    }
}

impl ParamSet for Backbone {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        match self {
            Backbone::Mlp(m) => {
                m.encoder.push_params(&mut v);
                m.layers.iter().for_each(|l| l.push_params(&mut v));
            }
            Backbone::Residual(m) => {
                m.encoder.push_params(&mut v);
                m.input.push_params(&mut v);
                for b in &m.blocks {
                    b.norm.push_params(&mut v);
                    b.fc1.push_params(&mut v);
                    b.fc2.push_params(&mut v);
                }
                m.norm.push_params(&mut v);
            }
            Backbone::FeatureAttention(m) => {
                v.push(slice(&m.num_weight));
                v.push(slice(&m.num_bias));
                v.extend(m.tables.iter().map(slice));
                v.push(slice1(&m.readout));
                v.push(slice(&m.query));
                v.push(slice(&m.key));
                v.push(slice(&m.value));
                m.out.push_params(&mut v);
                m.ffn_in.push_params(&mut v);
                m.ffn_out.push_params(&mut v);
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        match self {
            Backbone::Mlp(m) => {
                m.encoder.push_params_mut(&mut v);
                m.layers.iter_mut().for_each(|l| l.push_params_mut(&mut v));
            }
            Backbone::Residual(m) => {
                m.encoder.push_params_mut(&mut v);
                m.input.push_params_mut(&mut v);
                for b in &mut m.blocks {
                    b.norm.push_params_mut(&mut v);
                    b.fc1.push_params_mut(&mut v);
                    b.fc2.push_params_mut(&mut v);
                }
                m.norm.push_params_mut(&mut v);
            }
            Backbone::FeatureAttention(m) => {
                v.push(slice_mut(&mut m.num_weight));
                v.push(slice_mut(&mut m.num_bias));
                v.extend(m.tables.iter_mut().map(slice_mut));
                v.push(slice1_mut(&mut m.readout));
                v.push(slice_mut(&mut m.query));
                v.push(slice_mut(&mut m.key));
                v.push(slice_mut(&mut m.value));
                m.out.push_params_mut(&mut v);
                m.ffn_in.push_params_mut(&mut v);
                m.ffn_out.push_params_mut(&mut v);
            }
        }
        v
    }
}

/// Uniform random category codes for each column.
#[cfg(test)]
pub(crate) fn random_codes<R: Rng>(n: usize, cardinalities: &[usize], rng: &mut R) -> Array2<usize> {
    Array2::from_shape_fn((n, cardinalities.len()), |(_, j)| rng.random_range(0..cardinalities[j]))
}
