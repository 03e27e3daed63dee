//! PCA scatter plots and line plots (SVG, each with a CSV twin holding the
//! plotted numbers), result summaries, run manifests and output-directory locks.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ReportError};
use crate::eval::{aggregate, win_counts, wilcoxon_signed_rank, MetricRecord};
use crate::train::Variant;

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Two-component principal axes of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `2 x d`, rows sorted by decreasing variance.
    pub components: Array2<f64>,
    pub explained_variance: [f64; 2],
}

impl Pca {
    pub fn fit(points: &Array2<f64>) -> Result<Self, ReportError> {
        let (n, d) = points.dim();
        if n < 3 {
            return Err(ReportError::TooFewSamples { n, min: 3 });
        }
        if d < 2 {
            return Err(ReportError::InvalidInput("PCA needs at least two dimensions".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(ReportError::InvalidInput("points contain non-finite values".into()));
        }
        let mean = points.mean_axis(Axis(0)).expect("non-empty");
        let centered = points - &mean;
        let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = Array2::zeros((2, d));
        for (row, &idx) in order.iter().take(2).enumerate() {
            let v = eig.eigenvectors.column(idx);
            // Fix the sign so the largest-magnitude loading is positive.
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                components[[row, j]] = sign * v[j];
            }
        }
        let explained_variance = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
        Ok(Self { mean, components, explained_variance })
    }

    pub fn transform(&self, points: &Array2<f64>) -> Array2<f64> {
        (points - &self.mean).dot(&self.components.t())
    }
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            let pad = if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
            (lo - pad, hi + pad)
        };
        Self { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    for (v, anchor) in [(frame.x.0, "start"), (frame.x.1, "end")] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#, frame.px(v), b + 14.0, tick(v));
    }
    for v in [frame.y.0, frame.y.1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, frame.py(v) + 4.0, tick(v));
    }
    s
}

fn tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.svg` and `<stem>.csv`; returns both paths.
fn write_pair(stem: &Path, svg: &str, csv: &str) -> Result<(PathBuf, PathBuf), Error> {
    let svg_path = stem.with_extension("svg");
    let csv_path = stem.with_extension("csv");
    write_file(&svg_path, svg)?;
    write_file(&csv_path, csv)?;
    Ok((svg_path, csv_path))
}

/// 2-D PCA scatter of representations coloured by label group, with optional
/// prototypes projected onto the same axes and drawn as crosses.
pub fn plot_representations(
    reps: &Array2<f64>,
    groups: &[usize],
    prototypes: Option<&Array2<f64>>,
    title: &str,
    stem: &Path,
) -> Result<(PathBuf, PathBuf), Error> {
    if groups.len() != reps.nrows() {
        return Err(ReportError::InvalidInput(format!("{} groups for {} points", groups.len(), reps.nrows())).into());
    }
    let mut distinct = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ReportError::SingleClass.into());
    }
    let pca = Pca::fit(reps)?;
    let xy = pca.transform(reps);
    let proto_xy = prototypes.map(|p| pca.transform(p));
    let all_x = xy.column(0).to_vec().into_iter().chain(proto_xy.iter().flat_map(|p| p.column(0).to_vec()));
    let all_y = xy.column(1).to_vec().into_iter().chain(proto_xy.iter().flat_map(|p| p.column(1).to_vec()));
    let frame = Frame::new(all_x.clone().collect::<Vec<_>>().into_iter(), all_y.clone().collect::<Vec<_>>().into_iter());
    let mut svg = svg_open(title, "PC 1", "PC 2", &frame);
    let mut csv = String::from("kind,x,y,group\n");
    for (i, row) in xy.rows().into_iter().enumerate() {
        let color = PALETTE[groups[i] % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#,
            frame.px(row[0]),
            frame.py(row[1])
        );
        let _ = writeln!(csv, "point,{},{},{}", row[0], row[1], groups[i]);
    }
    if let Some(p) = &proto_xy {
        for (k, row) in p.rows().into_iter().enumerate() {
            let (x, y) = (frame.px(row[0]), frame.py(row[1]));
            let _ = writeln!(
                svg,
                r#"<path d="M{} {} L{} {} M{} {} L{} {}" stroke="black" stroke-width="2.5"/>"#,
                x - 7.0,
                y - 7.0,
                x + 7.0,
                y + 7.0,
                x - 7.0,
                y + 7.0,
                x + 7.0,
                y - 7.0
            );
            let _ = writeln!(csv, "prototype,{},{},{k}", row[0], row[1]);
        }
    }
    for (slot, g) in distinct.iter().enumerate() {
        let y = MARGIN + 14.0 + slot as f64 * 16.0;
        let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, WIDTH - MARGIN - 60.0, y - 4.0, PALETTE[g % PALETTE.len()]);
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">group {g}</text>"#, WIDTH - MARGIN - 50.0);
    }
    svg.push_str("</svg>\n");
    write_pair(stem, &svg, &csv)
}

/// One point of a K sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// Metric against K with error bars; the default K is marked with a dashed line.
pub fn plot_k_sweep(points: &[SweepPoint], default_k: usize, metric: &str, title: &str, stem: &Path) -> Result<(PathBuf, PathBuf), Error> {
    if points.len() < 2 {
        return Err(ReportError::TooFewSamples { n: points.len(), min: 2 }.into());
    }
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.k);
    let frame = Frame::new(
        pts.iter().map(|p| p.k as f64).chain(std::iter::once(default_k as f64)).collect::<Vec<_>>().into_iter(),
        pts.iter().flat_map(|p| [p.mean - p.std, p.mean + p.std]).collect::<Vec<_>>().into_iter(),
    );
    let mut svg = svg_open(title, "K (number of prototypes)", metric, &frame);
    let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", frame.px(p.k as f64), frame.py(p.mean))).collect();
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), PALETTE[0]);
    let mut csv = String::from("k,mean,std,is_default\n");
    for p in &pts {
        let x = frame.px(p.k as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}"/>"#,
            frame.py(p.mean - p.std),
            frame.py(p.mean + p.std),
            PALETTE[0]
        );
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="{}"/>"#, frame.py(p.mean), PALETTE[0]);
        let _ = writeln!(csv, "{},{},{},{}", p.k, p.mean, p.std, p.k == default_k);
    }
    let x = frame.px(default_k as f64);
    let _ = writeln!(
        svg,
        r#"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{}" stroke="{}" stroke-dasharray="5,4"/>"#,
        HEIGHT - MARGIN,
        PALETTE[3]
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" fill="{}">default K = {default_k}</text>"#, x + 4.0, MARGIN + 14.0, PALETTE[3]);
    svg.push_str("</svg>\n");
    write_pair(stem, &svg, &csv)
}

/// Mean/std table plus per-variant comparisons against the baseline, as CSV
/// and Markdown.
pub fn render_summary(records: &[MetricRecord]) -> Result<(String, String), Error> {
    let aggs = aggregate(records)?;
    let mut csv = String::from("dataset,backbone,variant,metric,n,mean,std\n");
    let mut md = String::from("| dataset | backbone | variant | metric | n | mean | std |\n|---|---|---|---|---|---|---|\n");
    for a in &aggs {
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", a.dataset, a.backbone, a.variant, a.metric, a.n, a.mean, a.std);
        let _ = writeln!(md, "| {} | {} | {} | {} | {} | {:.4} | {:.4} |", a.dataset, a.backbone, a.variant, a.metric, a.n, a.mean, a.std);
    }
    let mut groups: Vec<(String, String)> = records.iter().map(|r| (r.dataset.clone(), r.backbone.clone())).collect();
    groups.sort();
    groups.dedup();
    md.push_str("\n| dataset | backbone | variant | wins vs baseline | losses | ties | Wilcoxon p |\n|---|---|---|---|---|---|---|\n");
    for (dataset, backbone) in &groups {
        let subset: Vec<MetricRecord> =
            records.iter().filter(|r| &r.dataset == dataset && &r.backbone == backbone).cloned().collect();
        for variant in [Variant::Full, Variant::NoO, Variant::NoOD] {
            if !subset.iter().any(|r| r.variant == variant) {
                continue;
            }
            let wc = win_counts(&subset, variant, Variant::Baseline);
            let mut pairs: Vec<(f64, f64)> = Vec::new();
            for r in subset.iter().filter(|r| r.variant == variant) {
                if let Some(b) = subset.iter().find(|b| b.variant == Variant::Baseline && b.seed == r.seed) {
                    pairs.push((r.value, b.value));
                }
            }
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let p = match wilcoxon_signed_rank(&x, &y) {
                Ok(w) => format!("{:.4}", w.p_value),
                Err(e) => format!("n/a ({e})"),
            };
            let _ = writeln!(md, "| {dataset} | {backbone} | {variant} | {} | {} | {} | {p} |", wc.a - wc.ties, wc.b - wc.ties, wc.ties);
        }
    }
    Ok((csv, md))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub created: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".protab.lock";

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io("listing output directory", e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) && path != root.join(LOCK_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes every file under `dir` and writes `manifest.json` next to them.
pub fn write_manifest(dir: &Path, command: &str, seeds: &[u64], config: serde_json::Value) -> Result<Manifest, Error> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::metadata(&f).map_err(|e| Error::io(format!("stat {}", f.display()), e))?.len();
        let rel = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        entries.push(ManifestEntry { path: rel, sha256: sha256_file(&f)?, bytes });
    }
    let manifest = Manifest {
        tool: "protab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created: chrono::Utc::now().to_rfc3339(),
        command: command.into(),
        seeds: seeds.to_vec(),
        config,
        files: entries,
    };
    write_file(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, Error> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ReportError::Locked(dir.to_path_buf()).into()),
            Err(e) => Err(Error::io(format!("creating {}", path.display()), e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
