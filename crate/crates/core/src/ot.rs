//! Cosine transport costs, the closed-form one-source transport and an
//! entropic (Sinkhorn) solver for general marginals.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::OtError;

/// Norm floor used by every cosine computation.
pub const COSINE_EPS: f64 = 1e-8;

/// Cosine similarity with both norms floored at [`COSINE_EPS`].
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt().max(COSINE_EPS);
    let nb = b.dot(&b).sqrt().max(COSINE_EPS);
    a.dot(&b) / (na * nb)
}

/// `1 - cos(z, beta_k)` for every prototype row.
pub fn cosine_cost(z: ArrayView1<f64>, prototypes: &Array2<f64>) -> Result<Array1<f64>, OtError> {
    if z.len() != prototypes.ncols() {
        return Err(OtError::ShapeMismatch(format!(
            "representation width {} vs prototype width {}",
            z.len(),
            prototypes.ncols()
        )));
    }
    Ok(prototypes.rows().into_iter().map(|b| 1.0 - cosine(z, b)).collect())
}

/// Row-wise [`cosine_cost`] for a batch: an `n x K` matrix.
pub fn cosine_cost_matrix(z: &Array2<f64>, prototypes: &Array2<f64>) -> Result<Array2<f64>, OtError> {
    if z.ncols() != prototypes.ncols() {
        return Err(OtError::ShapeMismatch(format!(
            "representation width {} vs prototype width {}",
            z.ncols(),
            prototypes.ncols()
        )));
    }
    let zn = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(COSINE_EPS));
    let bn = prototypes.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(COSINE_EPS));
    let mut cos = z.dot(&prototypes.t());
    cos /= &zn.view().insert_axis(Axis(1));
    cos /= &bn.view().insert_axis(Axis(0));
    Ok(cos.mapv(|c| 1.0 - c))
}

fn check_simplex(name: &str, w: ArrayView1<f64>) -> Result<(), OtError> {
    if w.is_empty() {
        return Err(OtError::NotOnSimplex(format!("{name} is empty")));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(OtError::NotOnSimplex(format!("{name} has negative or non-finite entries")));
    }
    let sum = w.sum();
    if (sum - 1.0).abs() > 1e-9 * w.len() as f64 {
        return Err(OtError::NotOnSimplex(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Transport cost from a single unit-mass source to targets weighted by `r`.
///
/// With one source the only feasible plan sends `r_k` to target `k`, so the
/// optimum is `sum_k r_k * cost_k`.
pub fn singleton_ot(r: ArrayView1<f64>, cost: ArrayView1<f64>) -> Result<f64, OtError> {
    if r.len() != cost.len() {
        return Err(OtError::ShapeMismatch(format!("{} weights vs {} costs", r.len(), cost.len())));
    }
    check_simplex("r", r)?;
    Ok(r.dot(&cost))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub reg: f64,
    pub max_iter: usize,
    /// Stop once the L1 violation of the source marginal falls below this.
    pub tol: f64,
    /// `None` picks log-domain updates when `max(C) / reg` is large.
    pub log_domain: Option<bool>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { reg: 0.01, max_iter: 500, tol: 1e-6, log_domain: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornResult {
    pub plan: Array2<f64>,
    /// `<plan, C>` (the entropy term is not included).
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// L1 violation of the source marginal for the returned plan.
    pub marginal_error: f64,
    pub log_domain: bool,
}

const LOG_DOMAIN_THRESHOLD: f64 = 30.0;

/// Entropic transport between `a` and `b` under `cost`.
///
/// Non-convergence within `max_iter` is not an error: the final iterate is
/// returned with `converged == false`.
pub fn sinkhorn(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    cost: &Array2<f64>,
    config: &SinkhornConfig,
) -> Result<SinkhornResult, OtError> {
    if cost.dim() != (a.len(), b.len()) {
        return Err(OtError::ShapeMismatch(format!(
            "cost is {:?}, marginals are {} and {}",
            cost.dim(),
            a.len(),
            b.len()
        )));
    }
    check_simplex("a", a)?;
    check_simplex("b", b)?;
    if !(config.reg > 0.0) || !config.reg.is_finite() {
        return Err(OtError::BadRegularization(config.reg));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(OtError::ShapeMismatch("cost matrix has non-finite entries".into()));
    }
    let cmax = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    let log_domain = config.log_domain.unwrap_or(cmax / config.reg > LOG_DOMAIN_THRESHOLD);
    let result = if log_domain { sinkhorn_log(a, b, cost, config) } else { sinkhorn_plain(a, b, cost, config) };
    if !result.converged {
        log::warn!(
            "sinkhorn did not converge in {} iterations (marginal error {:.3e})",
            result.iterations,
            result.marginal_error
        );
    }
    Ok(result)
}

fn finish(plan: Array2<f64>, a: ArrayView1<f64>, cost: &Array2<f64>, iterations: usize, converged: bool, log_domain: bool) -> SinkhornResult {
    let marginal_error = (&plan.sum_axis(Axis(1)) - &a).mapv(f64::abs).sum();
    let total = (&plan * cost).sum();
    SinkhornResult { plan, cost: total, iterations, converged, marginal_error, log_domain }
}

fn sinkhorn_plain(a: ArrayView1<f64>, b: ArrayView1<f64>, cost: &Array2<f64>, cfg: &SinkhornConfig) -> SinkhornResult {
    let kernel = cost.mapv(|c| (-c / cfg.reg).exp());
    let mut u = Array1::<f64>::ones(a.len());
    let mut v = Array1::<f64>::ones(b.len());
    let plan_of = |u: &Array1<f64>, v: &Array1<f64>| {
        &kernel * &u.view().insert_axis(Axis(1)) * v.view().insert_axis(Axis(0))
    };
    for it in 1..=cfg.max_iter {
        let kv = kernel.dot(&v);
        u = ndarray::Zip::from(&a).and(&kv).map_collect(|&ai, &k| if ai == 0.0 { 0.0 } else { ai / k });
        let ktu = kernel.t().dot(&u);
        v = ndarray::Zip::from(&b).and(&ktu).map_collect(|&bj, &k| if bj == 0.0 { 0.0 } else { bj / k });
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            // Kernel underflow: restart in the log domain.
            return sinkhorn_log(a, b, cost, cfg);
        }
        let err = (&kernel.dot(&v) * &u - a).mapv(f64::abs).sum();
        if err < cfg.tol {
            return finish(plan_of(&u, &v), a, cost, it, true, false);
        }
    }
    finish(plan_of(&u, &v), a, cost, cfg.max_iter, false, false)
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(a: ArrayView1<f64>, b: ArrayView1<f64>, cost: &Array2<f64>, cfg: &SinkhornConfig) -> SinkhornResult {
    let (n, m) = cost.dim();
    let eps = cfg.reg;
    let log_a = a.mapv(f64::ln);
    let log_b = b.mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let plan_of = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((n, m), |(i, j)| {
            let e = (f[i] + g[j] - cost[[i, j]]) / eps;
            if e == f64::NEG_INFINITY || e.is_nan() {
                0.0
            } else {
                e.exp()
            }
        })
    };
    for it in 1..=cfg.max_iter {
        for i in 0..n {
            f[i] = if a[i] == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * log_a[i] - eps * log_sum_exp((0..m).map(|j| (g[j] - cost[[i, j]]) / eps))
            };
        }
        for j in 0..m {
            g[j] = if b[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * log_b[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - cost[[i, j]]) / eps))
            };
        }
        let plan = plan_of(&f, &g);
        let err = (&plan.sum_axis(Axis(1)) - &a).mapv(f64::abs).sum();
        if err < cfg.tol {
            return finish(plan, a, cost, it, true, true);
        }
    }
    finish(plan_of(&f, &g), a, cost, cfg.max_iter, false, true)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn cosine_cost_of_aligned_and_opposite() {
        let b = array![[1.0, 0.0], [0.0, 1.0], [-2.0, 0.0]];
        let c = cosine_cost(array![3.0, 0.0].view(), &b).unwrap();
        assert!((c[0] - 0.0).abs() < 1e-15);
        assert!((c[1] - 1.0).abs() < 1e-15);
        assert!((c[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vectors_use_the_norm_floor() {
        let c = cosine_cost(array![0.0, 0.0].view(), &array![[1.0, 0.0]]).unwrap();
        assert_eq!(c[0], 1.0);
    }

    #[test]
    fn matrix_form_matches_rows() {
        let z = array![[1.0, 2.0, -1.0], [0.5, -0.5, 3.0]];
        let b = array![[1.0, 1.0, 1.0], [-1.0, 0.0, 2.0]];
        let m = cosine_cost_matrix(&z, &b).unwrap();
        for i in 0..2 {
            let row = cosine_cost(z.row(i), &b).unwrap();
            for k in 0..2 {
                assert!((m[[i, k]] - row[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singleton_closed_form() {
        let v = singleton_ot(array![0.2, 0.3, 0.5].view(), array![1.0, 0.0, 2.0].view()).unwrap();
        assert!((v - 1.2).abs() < 1e-15);
        assert!(matches!(singleton_ot(array![0.5, 0.6].view(), array![1.0, 1.0].view()), Err(OtError::NotOnSimplex(_))));
        assert!(matches!(singleton_ot(array![1.0].view(), array![1.0, 1.0].view()), Err(OtError::ShapeMismatch(_))));
    }

    #[test]
    fn sinkhorn_respects_marginals() {
        let a = array![0.5, 0.5];
        let b = array![0.25, 0.75];
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        for log_domain in [false, true] {
            let cfg = SinkhornConfig { reg: 0.1, max_iter: 10_000, tol: 1e-12, log_domain: Some(log_domain) };
            let res = sinkhorn(a.view(), b.view(), &c, &cfg).unwrap();
            assert!(res.converged);
            assert!((&res.plan.sum_axis(Axis(0)) - &b).mapv(f64::abs).sum() < 1e-10);
            assert!(res.marginal_error < 1e-12);
            // The LP optimum moves 0.25 mass at unit cost.
            assert!((res.cost - 0.25).abs() < 0.05);
        }
    }

    #[test]
    fn tiny_regularization_switches_to_log_domain() {
        let a = array![0.3, 0.7];
        let c = array![[0.0, 5.0], [5.0, 0.0]];
        let res = sinkhorn(a.view(), a.view(), &c, &SinkhornConfig { reg: 1e-3, ..Default::default() }).unwrap();
        assert!(res.log_domain);
        assert!(res.cost < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = array![1.0];
        let c = array![[1.0]];
        let bad = SinkhornConfig { reg: 0.0, ..Default::default() };
        assert!(matches!(sinkhorn(a.view(), a.view(), &c, &bad), Err(OtError::BadRegularization(_))));
        assert!(matches!(
            sinkhorn(array![0.5].view(), a.view(), &c, &SinkhornConfig::default()),
            Err(OtError::NotOnSimplex(_))
        ));
    }
}
