//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use protab::data::{preset, Task};
use protab::eval::{aggregate, run_ablation_grid, GridSpec, RecordStore};
use protab::nn::{load_checkpoint, save_checkpoint, BackboneKind, Batch};
use protab::pspace::choose_k;
use protab::report::{plot_k_sweep, plot_representations, render_summary, write_manifest, OutputLock, SweepPoint};
use protab::train::{prepare_data, run_pipeline, JsonLinesObserver, NoopObserver, TrainConfig, Variant};
use protab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "protab", version, about = "Prototype-space training for tabular deep models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset preset (AD, HI, HE, JA, AL, CA, synthetic, ...).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Backbone kind: mlp, residual or feature_attention.
    #[arg(long, global = true)]
    backbone: Option<BackboneKind>,
    /// Output directory (default: $PROTAB_OUT_ROOT/<command>-<preset>-<backbone>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the dataset CSV files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, split and preprocess a dataset; write the split and fitted state.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Run both phases for one seed and save models, prototypes and logs.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// full, no_o, no_o_d or baseline.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run every ablation variant over several seeds and record test metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma list or half-open range, e.g. `0,1,2` or `0..5`.
        #[arg(long, default_value = "0..5")]
        seeds: String,
    },
    /// Summarize recorded metrics into CSV and Markdown tables.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// PCA plots of test representations of a trained run.
    Plot {
        #[command(flatten)]
        common: Common,
    },
    /// Test metric as a function of the number of prototypes.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0..3")]
        seeds: String,
        /// Comma list or range of K values (default: 2 ..= 2 * default K).
        #[arg(long)]
        ks: Option<String>,
    },
}

fn parse_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
        if b <= a {
            return Err(format!("empty range `{s}`"));
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad number `{p}` in `{s}`"))).collect()
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = &common.preset {
        cfg.data.preset = p.clone();
    }
    if let Some(b) = common.backbone {
        cfg.model.kind = b;
        if b == BackboneKind::FeatureAttention {
            cfg.model.depth = 1;
            cfg.model.embedding_dim = Some(cfg.model.embedding_dim.unwrap_or(8).max(32));
        }
    }
    if let Some(d) = &common.data_dir {
        cfg.data.data_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, command: &str, cfg: &TrainConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("PROTAB_OUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{command}-{}-{}", cfg.data.preset, cfg.model.kind))
    })
}

fn threads() -> usize {
    std::env::var("PROTAB_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(1)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn config_json(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn prepare(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "prepare", &cfg);
    let _lock = OutputLock::acquire(&dir)?;
    let data = prepare_data(&cfg.data)?;
    write_json(&dir.join("split.json"), &data.split)?;
    write_json(&dir.join("preprocess.json"), &data.preprocess)?;
    let summary = serde_json::json!({
        "dataset": data.name,
        "task": data.task,
        "num_features": data.num_features,
        "rows": { "train": data.train.n_rows(), "val": data.val.n_rows(), "test": data.test.n_rows() },
        "default_k": choose_k(data.num_features, cfg.prototypes.log_base),
        "constant_columns": data.preprocess.constant_columns,
    });
    write_json(&dir.join("dataset.json"), &summary)?;
    write_manifest(&dir, "prepare", &[], config_json(&cfg))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn train(common: &Common, seed: u64, variant: Option<Variant>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    let dir = out_dir(common, "train", &cfg);
    let _lock = OutputLock::acquire(&dir)?;
    let log_path = dir.join("steps.jsonl");
    let log = std::fs::File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?;
    let mut observer = JsonLinesObserver::new(std::io::BufWriter::new(log));
    let result = run_pipeline(&cfg, seed, &mut observer)?;
    drop(observer);
    save_checkpoint(&result.model, dir.join("model.json"))?;
    save_checkpoint(&result.phase1_model, dir.join("phase1_model.json"))?;
    if let Some(space) = &result.model.prototypes {
        space.write_csv(dir.join("prototypes.csv"))?;
    }
    write_json(&dir.join("split.json"), &result.data.split)?;
    write_json(&dir.join("report.json"), &result.report)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?).map_err(|e| Error::io("writing config.toml", e))?;
    write_manifest(&dir, "train", &[seed], config_json(&cfg))?;
    let r = &result.report;
    println!(
        "{} {} seed {}: baseline {} {:.4}, {} {:.4} (K = {})",
        r.dataset, r.backbone, seed, r.test.metric, r.baseline_test.value, r.variant, r.test.value, r.k
    );
    Ok(())
}

fn ablate(common: &Common, seeds: &[u64]) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "ablate", &cfg);
    let _lock = OutputLock::acquire(&dir)?;
    let data = prepare_data(&cfg.data)?;
    let artifacts = dir.join("prototypes");
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::io("creating prototypes dir", e))?;
    let store = RecordStore::new(dir.join("metrics.ndjson"));
    let spec = GridSpec { data: &data, config: &cfg, seeds, variants: &Variant::ALL, artifacts: Some(&artifacts), threads: threads() };
    let records = run_ablation_grid(&spec, Some(&store))?;
    let (csv, md) = render_summary(&records)?;
    std::fs::write(dir.join("summary.csv"), csv).map_err(|e| Error::io("writing summary.csv", e))?;
    std::fs::write(dir.join("summary.md"), &md).map_err(|e| Error::io("writing summary.md", e))?;
    write_manifest(&dir, "ablate", seeds, config_json(&cfg))?;
    print!("{md}");
    Ok(())
}

fn report(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = common.out.clone().unwrap_or_else(|| out_dir(common, "ablate", &cfg));
    let store = RecordStore::new(dir.join("metrics.ndjson"));
    let records = store.load()?;
    let (csv, md) = render_summary(&records)?;
    let _lock = OutputLock::acquire(&dir)?;
    std::fs::write(dir.join("summary.csv"), csv).map_err(|e| Error::io("writing summary.csv", e))?;
    std::fs::write(dir.join("summary.md"), &md).map_err(|e| Error::io("writing summary.md", e))?;
    let aggs = aggregate(&records)?;
    write_json(&dir.join("aggregate.json"), &aggs)?;
    print!("{md}");
    Ok(())
}

fn plot(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = common.out.clone().unwrap_or_else(|| out_dir(common, "train", &cfg));
    let final_model = load_checkpoint(dir.join("model.json"))?;
    let phase1 = load_checkpoint(dir.join("phase1_model.json"))?;
    let data = prepare_data(&cfg.data)?;
    let batch = Batch::from_dataset(&data.test);
    let groups: Vec<usize> = match data.task {
        Task::Regression => {
            let y = &data.test.labels;
            let (lo, hi) = y.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            y.iter().map(|&v| (((v - lo) / (hi - lo).max(1e-12) * 4.0) as usize).min(3)).collect()
        }
        _ => data.test.labels.iter().map(|&v| v as usize).collect(),
    };
    let _lock = OutputLock::acquire(&dir)?;
    let plots = dir.join("plots");
    let reps = phase1.represent(&batch)?;
    plot_representations(&reps, &groups, None, &format!("{} phase 1 representations", data.name), &plots.join("phase1_representations"))?;
    let reps = final_model.represent(&batch)?;
    let protos = final_model.prototypes.as_ref().map(|p| &p.prototypes);
    plot_representations(&reps, &groups, protos, &format!("{} final representations", data.name), &plots.join("final_representations"))?;
    if let (Some(est), Some(space)) = (&final_model.estimator, &final_model.prototypes) {
        let projected = est.forward(&reps).0.dot(&space.prototypes);
        plot_representations(
            &projected,
            &groups,
            Some(&space.prototypes),
            &format!("{} projected representations", data.name),
            &plots.join("projected_representations"),
        )?;
    }
    write_manifest(&dir, "plot", &[final_model.seed], config_json(&cfg))?;
    println!("plots written to {}", plots.display());
    Ok(())
}

fn sweep_k(common: &Common, seeds: &[u64], ks: Option<&str>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "sweep-k", &cfg);
    let _lock = OutputLock::acquire(&dir)?;
    let p = preset(&cfg.data.preset)?;
    let default_k = choose_k(p.num_features(), cfg.prototypes.log_base);
    let ks: Vec<u64> = match ks {
        Some(s) => parse_list(s).map_err(Error::Config)?,
        None => (2..=(2 * default_k) as u64).collect(),
    };
    let mut points = Vec::new();
    let mut metric = String::new();
    for &k in &ks {
        let mut run_cfg = cfg.clone();
        run_cfg.prototypes.k = Some(k as usize);
        let mut values = Vec::new();
        for &seed in seeds {
            let r = run_pipeline(&run_cfg, seed, &mut NoopObserver)?.report;
            metric = r.test.metric.to_string();
            values.push(r.test.value);
        }
        let v = ndarray::Array1::from(values);
        let mean = v.mean().unwrap_or(f64::NAN);
        let std = v.std_axis(Axis(0), 0.0).into_scalar();
        log::info!("K = {k}: {metric} {mean:.4} +/- {std:.4}");
        points.push(SweepPoint { k: k as usize, mean, std });
    }
    plot_k_sweep(&points, default_k, &metric, &format!("{} {}: K sweep", cfg.data.preset, cfg.model.kind), &dir.join("k_sweep"))?;
    write_manifest(&dir, "sweep-k", seeds, config_json(&cfg))?;
    println!("K sweep written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { common } => prepare(&common),
        Command::Train { common, seed, variant } => train(&common, seed, variant),
        Command::Ablate { common, seeds } => ablate(&common, &parse_list(&seeds).map_err(Error::Config)?),
        Command::Report { common } => report(&common),
        Command::Plot { common } => plot(&common),
        Command::SweepK { common, seeds, ks } => sweep_k(&common, &parse_list(&seeds).map_err(Error::Config)?, ks.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
