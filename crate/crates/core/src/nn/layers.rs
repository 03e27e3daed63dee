//! Dense building blocks with explicit backward passes.
//!
//! Every layer's gradient container is a value of the layer's own type, so a
//! model's gradient is a model of the same shape (see [`ParamSet`]).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat, ordered access to every trainable tensor.
pub trait ParamSet: Clone {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    fn flatten(&self) -> Vec<f64> {
        self.params().concat()
    }
}

pub(crate) fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

pub(crate) fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn uniform_fan_in<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Gelu => {
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }

    pub fn forward(self, u: &Array2<f64>) -> Array2<f64> {
        u.mapv(|x| self.apply(x))
    }

    /// `grad_out * act'(pre)` elementwise.
    pub fn backward(self, pre: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
        let mut out = grad_out.clone();
        Zip::from(&mut out).and(pre).for_each(|g, &u| *g *= self.derivative(u));
        out
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
pub(crate) fn dropout_mask<R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = uniform_fan_in(fan_in, fan_out, fan_in, rng);
        let bias = uniform_fan_in(1, fan_out, fan_in, rng).into_shape_with_order(fan_out).expect("row vector");
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad`.
    pub fn backward_params(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    pub(crate) fn push_params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(slice(&self.weight));
        out.push(slice1(&self.bias));
    }

    pub(crate) fn push_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice_mut(&mut self.weight));
        out.push(slice1_mut(&mut self.bias));
    }
}

impl ParamSet for Linear {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        self.push_params(&mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.push_params_mut(&mut v);
        v
    }
}

const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with a learned gain and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gain: Array1::ones(dim), bias: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let mut normalized = x - &mean.view().insert_axis(Axis(1));
        let var = normalized.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        normalized *= &inv_std.view().insert_axis(Axis(1));
        let mut y = &normalized * &self.gain;
        y += &self.bias;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gain += &(dy * &cache.normalized).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gain;
        let d = dy.ncols() as f64;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.normalized).sum_axis(Axis(1)) / d;
        let mut dx = dxhat;
        dx -= &mean_dxhat.view().insert_axis(Axis(1));
        dx -= &(&cache.normalized * &mean_dxhat_xhat.view().insert_axis(Axis(1)));
        dx *= &cache.inv_std.view().insert_axis(Axis(1));
        dx
    }

    pub(crate) fn push_params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(slice1(&self.gain));
        out.push(slice1(&self.bias));
    }

    pub(crate) fn push_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice1_mut(&mut self.gain));
        out.push(slice1_mut(&mut self.bias));
    }
}

impl ParamSet for LayerNorm {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        self.push_params(&mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.push_params_mut(&mut v);
        v
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward of a row-wise softmax given its output `p`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let dot = (p * dp).sum_axis(Axis(1));
    let mut out = dp - &dot.view().insert_axis(Axis(1));
    out *= p;
    out
}
