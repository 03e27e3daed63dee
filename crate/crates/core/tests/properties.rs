//! Property-based invariants.

mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use protab::data::{make_synthetic, split_indices, Task};
use protab::eval::wilcoxon_signed_rank;
use protab::losses::{diversifying_loss, make_pairs, orthogonalization_loss, projecting_loss, DiversifyConfig, PairConfig};
use protab::nn::{Activation, CoordinateEstimator};
use protab::ot::{sinkhorn, singleton_ot, SinkhornConfig};
use protab::pspace::{choose_k, LogBase};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn simplex(k: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let a = Array1::from(v);
        let s = a.sum();
        a / s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orthogonalization_is_at_least_one(b in (2usize..6, 2usize..6).prop_flat_map(|(k, d)| matrix(k, d))) {
        prop_assume!(b.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let (v, _) = orthogonalization_loss(&b).unwrap();
        prop_assert!(v >= 1.0 - 1e-12);
    }

    #[test]
    fn projecting_loss_ignores_representation_scale(
        z in matrix(4, 3),
        b in matrix(2, 3),
        r in simplex(2),
        s in prop::collection::vec(0.1f64..10.0, 4),
    ) {
        prop_assume!(z.rows().into_iter().all(|r| r.dot(&r) > 1e-4));
        let coords = Array2::from_shape_fn((4, 2), |(_, k)| r[k]);
        let scaled = Array2::from_shape_fn((4, 3), |(i, j)| z[[i, j]] * s[i]);
        let a = projecting_loss(&z, &coords, &b).unwrap().value;
        let c = projecting_loss(&scaled, &coords, &b).unwrap().value;
        prop_assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn diversifying_is_permutation_invariant(
        logits in matrix(6, 3),
        labels in prop::collection::vec(0usize..2, 6),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let coords = protab::nn::softmax_rows(&logits);
        let y = Array1::from_iter(labels.iter().map(|&l| l as f64));
        let cfg = DiversifyConfig { sample_fraction: 1.0, ..Default::default() };
        let pairs = make_pairs(y.view(), Task::Binclass, &PairConfig::default());
        let a = diversifying_loss(&coords, &pairs, &cfg, 0).unwrap().value;
        let pc = coords.select(ndarray::Axis(0), &perm);
        let py = y.select(ndarray::Axis(0), &perm);
        let ppairs = make_pairs(py.view(), Task::Binclass, &PairConfig::default());
        let b = diversifying_loss(&pc, &ppairs, &cfg, 0).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn estimator_outputs_lie_on_simplex(z in matrix(5, 4), seed in 0u64..1000, k in 2usize..6) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let est = CoordinateEstimator::init(4, 6, k, Activation::Relu, &mut rng);
        let (r, _) = est.forward(&(z * 50.0));
        for row in r.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_ot_is_a_convex_combination(r in simplex(4), c in prop::collection::vec(0.0f64..2.0, 4)) {
        let c = Array1::from(c);
        let v = singleton_ot(r.view(), c.view()).unwrap();
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn sinkhorn_plan_has_requested_marginals(a in simplex(3), b in simplex(4), c in matrix(3, 4), reg in 0.05f64..1.0) {
        let res = sinkhorn(a.view(), b.view(), &c, &SinkhornConfig { reg, max_iter: 5000, tol: 1e-10, ..Default::default() }).unwrap();
        prop_assert!(res.converged);
        for (row, ai) in res.plan.rows().into_iter().zip(a.iter()) {
            prop_assert!((row.sum() - ai).abs() < 1e-8);
        }
        for (col, bj) in res.plan.columns().into_iter().zip(b.iter()) {
            prop_assert!((col.sum() - bj).abs() < 1e-8);
        }
    }

    #[test]
    fn wilcoxon_is_symmetric(x in prop::collection::vec(-5.0f64..5.0, 6..15), shift in -1.0f64..1.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.7 + shift + 0.01 * i as f64).collect();
        if let (Ok(a), Ok(b)) = (wilcoxon_signed_rank(&x, &y), wilcoxon_signed_rank(&y, &x)) {
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        }
    }

    #[test]
    fn choose_k_is_monotone(n in 1usize..10_000) {
        let k = choose_k(n, LogBase::Natural);
        prop_assert!(k >= 2);
        prop_assert!(choose_k(n + 1, LogBase::Natural) >= k);
        prop_assert_eq!(k, ((n as f64).ln().ceil() as usize).max(2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_is_a_partition(n in 20usize..300, seed in 0u64..100) {
        let data = make_synthetic(n, 3, Task::Binclass, 1).unwrap().dataset;
        let s = split_indices(&data, [0.6, 0.2, 0.2], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.clone(), split_indices(&data, [0.6, 0.2, 0.2], seed).unwrap());
    }
}
