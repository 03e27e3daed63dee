use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam over the flat parameter order of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    config: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: OptimConfig, num_params: usize) -> Self {
        Self { config, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let mut idx = 0;
        for (p, g) in params.params_mut().into_iter().zip(grads.params()) {
            for (w, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = c.beta1 * *m + (1.0 - c.beta1) * gi;
                *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                *w -= c.lr * (update + c.weight_decay * *w);
                idx += 1;
            }
        }
        debug_assert_eq!(idx, self.m.len());
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.params().iter().flat_map(|p| p.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for p in grads.params_mut() {
            p.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Linear;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Linear::init(2, 1, &mut rng);
        let before = p.clone();
        let g = Linear { weight: array![[0.5], [-3.0]], bias: Array1::from_elem(1, 1e-3) };
        let mut adam = Adam::new(OptimConfig::default(), p.num_params());
        adam.step(&mut p, &g);
        assert!((before.weight[[0, 0]] - p.weight[[0, 0]] - 1e-3).abs() < 1e-9);
        assert!((before.weight[[1, 0]] - p.weight[[1, 0]] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = Linear { weight: array![[3.0], [4.0]], bias: Array1::zeros(1) };
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.weight[[0, 0]] - 0.6).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut g, 10.0), 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Linear { weight: array![[4.0]], bias: array![-2.0] };
        let mut adam = Adam::new(OptimConfig { lr: 0.05, ..Default::default() }, 2);
        for _ in 0..2000 {
            let g = Linear { weight: &p.weight * 2.0, bias: &p.bias * 2.0 };
            adam.step(&mut p, &g);
        }
        assert!(p.weight[[0, 0]].abs() < 1e-3 && p.bias[0].abs() < 1e-3);
    }
}
