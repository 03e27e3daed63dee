//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1-3 train on the full Adult and California housing tables and take
//! a while on one core. Set `PROTAB_ACCEPTANCE_SKIP_DATASETS=1` to report them
//! as SKIP during development.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{array, Array2, Axis};
use rand::Rng;

use common::*;
use protab::eval::{run_ablation_grid, wilcoxon_signed_rank, GridSpec, MetricRecord};
use protab::losses::orthogonalization_loss;
use protab::ot::{sinkhorn, singleton_ot, SinkhornConfig};
use protab::pspace::{kmeans, KMeansConfig};
use protab::train::{prepare_data, run_pipeline, NoopObserver, TrainConfig, TrainObserver, Variant};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(pass: bool, detail: String) -> Outcome {
    Outcome { pass: Some(pass), detail }
}

fn report(id: &str, name: &str, o: &Outcome) {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("[{tag}] {id:>4} {name}: {}", o.detail);
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mean_of(records: &[MetricRecord], v: Variant) -> f64 {
    let vals: Vec<f64> = records.iter().filter(|r| r.variant == v).map(|r| r.value).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn seconds_of(records: &[MetricRecord], v: Variant) -> f64 {
    records.iter().filter(|r| r.variant == v).map(|r| r.seconds).sum()
}

fn grid(preset: &str, variants: &[Variant]) -> Result<(Vec<MetricRecord>, f64), String> {
    let mut cfg = TrainConfig::default();
    cfg.data.preset = preset.into();
    cfg.data.data_dir = data_dir();
    let data = prepare_data(&cfg.data).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..5).collect();
    let spec = GridSpec { data: &data, config: &cfg, seeds: &seeds, variants, artifacts: None, threads: 1 };
    let start = Instant::now();
    let records = run_ablation_grid(&spec, None).map_err(|e| e.to_string())?;
    Ok((records, start.elapsed().as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let (records, secs) = match grid("CA", &[Variant::Full, Variant::Baseline]) {
        Ok(r) => r,
        Err(e) => return pass_if(false, format!("could not run: {e}")),
    };
    let base = mean_of(&records, Variant::Baseline);
    let full = mean_of(&records, Variant::Full);
    let ok_base = (base - 0.518).abs() <= 0.04;
    let ok_full = (full - 0.489).abs() <= 0.04;
    let ok_gain = base - full >= 0.015;
    let ok_time = secs <= 1800.0;
    pass_if(
        ok_base && ok_full && ok_gain && ok_time,
        format!(
            "baseline RMSE {base:.4} (0.518 +/- 0.04: {}), full {full:.4} (0.489 +/- 0.04: {}), gain {:.4} (>= 0.015: {}), {secs:.0} s (<= 1800: {})",
            ok_base,
            ok_full,
            base - full,
            ok_gain,
            ok_time
        ),
    )
}

fn criteria_2_3() -> (Outcome, Outcome) {
    let (records, secs) = match grid("AD", &Variant::ALL) {
        Ok(r) => r,
        Err(e) => {
            let o = || pass_if(false, format!("could not run: {e}"));
            return (o(), o());
        }
    };
    let base = mean_of(&records, Variant::Baseline);
    let full = mean_of(&records, Variant::Full);
    let no_o = mean_of(&records, Variant::NoO);
    let no_od = mean_of(&records, Variant::NoOD);
    // Baseline records carry phase-1 time, full records phase-2 time.
    let pipeline_secs = seconds_of(&records, Variant::Baseline) + seconds_of(&records, Variant::Full);
    let ok_base = (base - 0.825).abs() <= 0.02;
    let ok_gain = full >= base + 0.015;
    let ok_time = pipeline_secs <= 2700.0;
    let c2 = pass_if(
        ok_base && ok_gain && ok_time,
        format!(
            "baseline acc {base:.4} (0.825 +/- 0.02: {ok_base}), full {full:.4} (>= baseline + 0.015: {ok_gain}), {pipeline_secs:.0} s for baseline + full (<= 2700: {ok_time}); whole grid {secs:.0} s"
        ),
    );
    let ordered = full >= no_o && no_o >= no_od && no_od >= base;
    let c3 = pass_if(
        ordered && full - base >= 0.015,
        format!(
            "full {full:.4} >= no_o {no_o:.4} >= no_o_d {no_od:.4} >= baseline {base:.4}: {ordered}; full - baseline {:.4} (>= 0.015: {})",
            full - base,
            full - base >= 0.015
        ),
    );
    (c2, c3)
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = r.random_range(2..9);
        let w = simplex(k, &mut r);
        let cost = Array2::from_shape_fn((1, k), |_| r.random_range(0.0..2.0));
        let closed = singleton_ot(w.view(), cost.row(0)).unwrap();
        let cfg = SinkhornConfig { reg: 1e-3, ..Default::default() };
        match sinkhorn(array![1.0].view(), w.view(), &cost, &cfg) {
            Ok(res) => worst = worst.max((closed - res.cost).abs()),
            Err(e) => return pass_if(false, format!("sinkhorn failed: {e}")),
        }
    }
    pass_if(worst < 1e-3, format!("max |singleton - sinkhorn| = {worst:.3e} over 100 instances (< 1e-3)"))
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let (mut worst_cost, mut worst_marg) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let a = simplex(3, &mut r);
        let b = simplex(3, &mut r);
        let c = Array2::from_shape_fn((3, 3), |_| r.random_range(0.0..1.0));
        let exact = exact_lp_3x3(&[a[0], a[1], a[2]], &[b[0], b[1], b[2]], &c);
        let cfg = SinkhornConfig { reg: 0.01, max_iter: 20_000, tol: 1e-8, ..Default::default() };
        let res = match sinkhorn(a.view(), b.view(), &c, &cfg) {
            Ok(res) => res,
            Err(e) => return pass_if(false, format!("sinkhorn failed: {e}")),
        };
        worst_cost = worst_cost.max((res.cost - exact).abs());
        let rows = res.plan.sum_axis(Axis(1));
        let cols = res.plan.sum_axis(Axis(0));
        let marg = rows.iter().zip(a.iter()).chain(cols.iter().zip(b.iter())).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_marg = worst_marg.max(marg);
    }
    pass_if(
        worst_cost < 1e-2 && worst_marg < 1e-5,
        format!("max |sinkhorn - LP| = {worst_cost:.3e} (< 1e-2), max marginal violation {worst_marg:.3e} (< 1e-5)"),
    )
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst_orth = 0.0f64;
    for i in 0..50 {
        let k = 2 + i % 5;
        let d = k + r.random_range(0..4);
        let g = DMatrix::from_fn(d, k, |_, _| r.random_range(-1.0..1.0));
        let q = g.qr().q();
        let b = Array2::from_shape_fn((k, d), |(row, col)| q[(col, row)]);
        let scales: Vec<f64> = (0..k).map(|_| r.random_range(0.1..10.0)).collect();
        let b = Array2::from_shape_fn((k, d), |(row, col)| b[[row, col]] * scales[row]);
        let (v, _) = orthogonalization_loss(&b).unwrap();
        worst_orth = worst_orth.max((v - 1.0).abs());
    }
    let mut min_other = f64::INFINITY;
    for i in 0..200 {
        let k = 2 + i % 5;
        let b = gaussian(k, k + 2, &mut r);
        min_other = min_other.min(orthogonalization_loss(&b).unwrap().0);
    }
    pass_if(
        worst_orth < 1e-6 && min_other > 1.0,
        format!("orthogonal sets: max |loss - 1| = {worst_orth:.3e} (< 1e-6); random sets: min loss {min_other:.6} (> 1)"),
    )
}

fn criterion_7() -> Outcome {
    let mut worst = [0.0f64; 4];
    let mut vacuous = Vec::new();
    for seed in 0..10 {
        let inst = grad_instance(100 + seed);
        for (term, w) in worst.iter_mut().enumerate() {
            for (group, err, norm) in gradient_check(&inst, term) {
                if norm == 0.0 {
                    vacuous.push(format!("{}/{group}", TERM_NAMES[term]));
                }
                *w = w.max(err);
            }
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let parts: Vec<String> = TERM_NAMES.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    pass_if(
        max < 1e-4 && vacuous.is_empty(),
        format!("worst relative error per term over 10 instances: {} (< 1e-4){}", parts.join(", "), if vacuous.is_empty() { String::new() } else { format!("; zero gradients: {vacuous:?}") }),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let mut misses = 0;
    let mut worst = 0.0f64;
    for case in 0..30u64 {
        let n = r.random_range(2..=8);
        let k = r.random_range(1..=n.min(4));
        let pts = gaussian(n, 2, &mut r);
        let best = exhaustive_kmeans(&pts, k);
        let got = kmeans(&pts, k, &KMeansConfig { seed: case, ..Default::default() }).unwrap().inertia;
        let gap = got - best;
        worst = worst.max(gap);
        if gap > 1e-9 * best.max(1.0) {
            misses += 1;
        }
    }
    pass_if(misses == 0, format!("{misses} of 30 instances above the exhaustive optimum; worst gap {worst:.3e}"))
}

#[derive(Default)]
struct SimplexWatch {
    vectors: usize,
    worst: f64,
}

impl TrainObserver for SimplexWatch {
    fn on_coordinates(&mut self, _epoch: usize, _step: usize, coords: &Array2<f64>) {
        for row in coords.rows() {
            self.vectors += 1;
            let neg = row.iter().fold(0.0f64, |m, &v| m.max(-v));
            self.worst = self.worst.max(neg).max((row.sum() - 1.0).abs());
        }
    }
}

fn synthetic_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data.preset = "synthetic".into();
    cfg
}

fn criterion_9() -> Outcome {
    let mut watch = SimplexWatch::default();
    match run_pipeline(&synthetic_config(), 0, &mut watch) {
        Ok(_) => pass_if(
            watch.vectors > 0 && watch.worst < 1e-6,
            format!("{} coordinate vectors, max simplex violation {:.3e} (< 1e-6)", watch.vectors, watch.worst),
        ),
        Err(e) => pass_if(false, format!("run failed: {e}")),
    }
}

fn criterion_10() -> Outcome {
    let run = || run_pipeline(&synthetic_config(), 0, &mut NoopObserver).map(|r| r.report.test.value);
    match (run(), run()) {
        (Ok(a), Ok(b)) => pass_if(a.to_bits() == b.to_bits(), format!("test metric {a:?} vs {b:?}")),
        (a, b) => pass_if(false, format!("run failed: {:?} / {:?}", a.err(), b.err())),
    }
}

fn criterion_11() -> Outcome {
    let mut r = rng(11);
    let mut mismatches = Vec::new();
    for i in 0..20 {
        let n = 5 + i % 8;
        let ties = i % 3 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let v: f64 = r.random_range(-2.0..2.0);
            if ties { (v * 4.0).round() / 4.0 } else { v }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        match (wilcoxon_enumerated(&x, &y), wilcoxon_signed_rank(&x, &y)) {
            (Some((m, stat, p)), Ok(res)) => {
                if m != res.n || (stat - res.statistic).abs() > 1e-9 || (p - res.p_value).abs() > 1e-12 {
                    mismatches.push(format!("n={n}: oracle ({stat}, {p}) vs ({}, {})", res.statistic, res.p_value));
                }
            }
            (None, Err(_)) => {}
            (a, b) => mismatches.push(format!("n={n}: oracle {a:?} vs {b:?}")),
        }
    }
    pass_if(mismatches.is_empty(), format!("20 vectors, n = 5..12, statistic and p-value vs 2^n enumeration; mismatches: {mismatches:?}"))
}

fn main() {
    let skip_datasets = std::env::var("PROTAB_ACCEPTANCE_SKIP_DATASETS").is_ok_and(|v| v == "1");
    let mut outcomes: Vec<(&str, &str, Outcome)> = Vec::new();

    let start = Instant::now();
    outcomes.push(("4", "singleton OT equals point-source Sinkhorn", criterion_4()));
    outcomes.push(("5", "Sinkhorn vs exact LP (3x3, reg 0.01)", criterion_5()));
    outcomes.push(("6", "orthogonalization loss minimum", criterion_6()));
    outcomes.push(("7", "gradient checks for every term and group", criterion_7()));
    outcomes.push(("8", "K-Means vs exhaustive partitions", criterion_8()));
    outcomes.push(("9", "coordinates stay on the simplex", criterion_9()));
    outcomes.push(("10", "determinism of run_pipeline", criterion_10()));
    outcomes.push(("11", "Wilcoxon vs sign-pattern enumeration", criterion_11()));
    let fast_secs = start.elapsed().as_secs_f64();
    let fast_ok = outcomes.iter().all(|(_, _, o)| o.pass == Some(true));
    outcomes.push((
        "4-11",
        "property criteria runtime",
        pass_if(fast_ok && fast_secs < 300.0, format!("{fast_secs:.1} s (< 300 s, all passing: {fast_ok})")),
    ));

    if skip_datasets {
        let skipped = || Outcome { pass: None, detail: "PROTAB_ACCEPTANCE_SKIP_DATASETS=1".into() };
        outcomes.insert(0, ("3", "AD ablation ordering", skipped()));
        outcomes.insert(0, ("2", "AD MLP accuracy", skipped()));
        outcomes.insert(0, ("1", "CA MLP RMSE", skipped()));
    } else {
        let c1 = criterion_1();
        let (c2, c3) = criteria_2_3();
        outcomes.insert(0, ("3", "AD ablation ordering", c3));
        outcomes.insert(0, ("2", "AD MLP accuracy", c2));
        outcomes.insert(0, ("1", "CA MLP RMSE", c1));
    }

    println!("\nacceptance criteria");
    for (id, name, o) in &outcomes {
        report(id, name, o);
    }
    let failed = outcomes.iter().filter(|(_, _, o)| o.pass == Some(false)).count();
    println!("{} passed, {failed} failed, {} skipped", outcomes.iter().filter(|(_, _, o)| o.pass == Some(true)).count(), outcomes.iter().filter(|(_, _, o)| o.pass.is_none()).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
