//! Image-quality metrics and run reports.
//!
//! A run directory holds one subdirectory per sample under `samples/`, each
//! with the ground truth in `truth/` and one subdirectory per method:
//!
//! ```text
//! <run>/samples/<sample>/truth/{pet.jrg, mri.jrg}
//! <run>/samples/<sample>/<method>/{pet.jrg, mri.jrg}   (either or both)
//! ```
//!
//! PET is scored on activity divided by the ground-truth maximum, MRI on
//! magnitude divided by the ground-truth maximum magnitude, so the peak is 1
//! for both.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::io;
use crate::sampler::Modality;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;

/// `10 log10(peak² / MSE)`, capped at 99 dB.
pub fn psnr(x: &RealGrid, reference: &RealGrid, peak: f64) -> Result<f64> {
    x.shape().ensure_eq(reference.shape(), "psnr")?;
    if !(peak > 0.0) {
        return Err(Error::param("psnr peak must be positive"));
    }
    let mse = x.sub(reference)?.norm_sqr() / x.len() as f64;
    if mse < peak * peak * 10f64.powf(-9.9) {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// `‖x − ref‖ / ‖ref‖`.
pub fn nrmse(x: &RealGrid, reference: &RealGrid) -> Result<f64> {
    x.shape().ensure_eq(reference.shape(), "nrmse")?;
    let n = reference.norm();
    if n == 0.0 {
        return Err(Error::param("nrmse needs a nonzero reference"));
    }
    Ok(x.sub(reference)?.norm() / n)
}

/// Mean SSIM over all fully contained 7×7 windows, with sample
/// (co)variances and constants from the dynamic range of `reference`.
pub fn ssim(x: &RealGrid, reference: &RealGrid) -> Result<f64> {
    x.shape().ensure_eq(reference.shape(), "ssim")?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} images, got {}",
            x.shape()
        )));
    }
    let range = reference.max() - reference.min();
    let l = if range > 0.0 { range } else { 1.0 };
    ssim_with_range(x, reference, l)
}

/// [`ssim`] with an explicit dynamic range.
pub fn ssim_with_range(x: &RealGrid, y: &RealGrid, range: f64) -> Result<f64> {
    let (h, w) = (x.height(), x.width());
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + k {
                for j in c..c + k {
                    let a = x.get(i, j);
                    let b = y.get(i, j);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx - n * mx * mx) / (n - 1.0);
            let vy = (syy - n * my * my) / (n - 1.0);
            let cxy = (sxy - n * mx * my) / (n - 1.0);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample: String,
    pub method: String,
    pub modality: Modality,
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
}

/// Scores `x` against `reference` after dividing both by the reference maximum.
pub fn score_images(x: &RealGrid, reference: &RealGrid) -> Result<(f64, f64, f64)> {
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::Report("reference image has no positive values".into()));
    }
    let xn = x.scaled(1.0 / peak);
    let rn = reference.scaled(1.0 / peak);
    Ok((psnr(&xn, &rn, 1.0)?, ssim(&xn, &rn)?, nrmse(&xn, &rn)?))
}

/// The image a metric is computed on: PET activity or MRI magnitude.
pub fn load_scored(path: &Path, modality: Modality) -> Result<RealGrid> {
    match modality {
        Modality::Pet => io::load_real(path),
        Modality::Mri => Ok(io::load_complex(path)?.magnitude()),
    }
}

fn file_name(modality: Modality) -> &'static str {
    match modality {
        Modality::Pet => "pet.jrg",
        Modality::Mri => "mri.jrg",
    }
}

/// Sample → method → modality → image path.
type Inventory = BTreeMap<String, BTreeMap<String, BTreeMap<Modality, PathBuf>>>;

fn sorted_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn inventory(runs: &[PathBuf]) -> Result<Inventory> {
    let mut inv = Inventory::new();
    for run in runs {
        if !run.is_dir() {
            return Err(Error::MissingInput(format!("run directory {} not found", run.display())));
        }
        let samples = run.join("samples");
        if !samples.is_dir() {
            continue;
        }
        for (sample, sdir) in sorted_dirs(&samples)? {
            let methods = inv.entry(sample.clone()).or_default();
            for (method, mdir) in sorted_dirs(&sdir)? {
                for modality in [Modality::Pet, Modality::Mri] {
                    let p = mdir.join(file_name(modality));
                    if !p.exists() {
                        continue;
                    }
                    let slot = methods.entry(method.clone()).or_default();
                    // Every run carries a copy of the ground truth; the first one wins.
                    if slot.contains_key(&modality) {
                        if method == "truth" {
                            continue;
                        }
                        return Err(Error::Report(format!(
                            "sample {sample} method {method} {} appears in more than one run",
                            modality.as_str()
                        )));
                    }
                    slot.insert(modality, p);
                }
            }
        }
    }
    Ok(inv)
}

/// Computes one [`MetricRow`] per sample × method × modality, sorted.
pub fn collect_metrics(runs: &[PathBuf]) -> Result<Vec<MetricRow>> {
    if runs.is_empty() {
        return Err(Error::Report("no run directories given".into()));
    }
    let inv = inventory(runs)?;
    let mut jobs = Vec::new();
    let mut missing = Vec::new();
    for (sample, methods) in &inv {
        for (method, files) in methods {
            if method == "truth" {
                continue;
            }
            for (&modality, path) in files {
                match methods.get("truth").and_then(|t| t.get(&modality)) {
                    Some(truth) => jobs.push((sample.clone(), method.clone(), modality, path.clone(), truth.clone())),
                    None => missing.push(format!("{sample}/truth/{}", file_name(modality))),
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::Report(format!("missing ground truth: {}", missing.join(", "))));
    }
    if jobs.is_empty() {
        return Err(Error::Report("no method outputs found".into()));
    }
    let mut rows = jobs
        .par_iter()
        .map(|(sample, method, modality, path, truth)| {
            let x = load_scored(path, *modality)?;
            let r = load_scored(truth, *modality)?;
            let (p, s, n) = score_images(&x, &r)?;
            Ok(MetricRow {
                sample: sample.clone(),
                method: method.clone(),
                modality: *modality,
                psnr_db: p,
                ssim: s,
                nrmse: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (&a.sample, &a.method, a.modality).cmp(&(&b.sample, &b.method, b.modality)));
    Ok(rows)
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub modality: Modality,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation per method × modality × metric.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, Modality), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.modality)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((method, modality), rs) in groups {
        type Metric = (&'static str, fn(&MetricRow) -> f64);
        let metrics: [Metric; 3] =
            [("psnr_db", |r| r.psnr_db), ("ssim", |r| r.ssim), ("nrmse", |r| r.nrmse)];
        for (name, get) in metrics {
            let vals: Vec<f64> = rs.iter().map(|r| get(r)).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(SummaryRow {
                method: method.clone(),
                modality,
                metric: name.to_string(),
                mean,
                std,
                n,
            });
        }
    }
    out
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("sample,method,modality,psnr_db,ssim,nrmse\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.sample,
            r.method,
            r.modality.as_str(),
            r.psnr_db,
            r.ssim,
            r.nrmse
        ));
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("method,modality,metric,mean,std,n\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            r.method,
            r.modality.as_str(),
            r.metric,
            r.mean,
            r.std,
            r.n
        ));
    }
    s
}

/// Gap in pixels between montage tiles and around the border.
pub const MONTAGE_GAP: usize = 2;

/// Montage size `(height, width)` for `rows × cols` tiles of `tile × tile`:
/// `rows·tile + (rows + 1)·gap` by `cols·tile + (cols + 1)·gap`.
pub fn montage_size(rows: usize, cols: usize, tile: usize) -> (usize, usize) {
    (
        rows * tile + (rows + 1) * MONTAGE_GAP,
        cols * tile + (cols + 1) * MONTAGE_GAP,
    )
}

/// Display window of one montage panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelWindow {
    pub row: usize,
    pub col: usize,
    pub sample: String,
    pub content: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MontageSidecar {
    pub modality: Modality,
    pub tile: usize,
    pub gap: usize,
    pub rows: Vec<String>,
    pub samples: Vec<String>,
    pub panels: Vec<PanelWindow>,
}

/// Montage for one modality: columns are samples; rows are the ground
/// truth, each method, then `5·|method − truth|` for each method. Every
/// panel is min–max windowed to 8 bits.
fn montage(inv: &Inventory, modality: Modality) -> Result<Option<(GrayImage, MontageSidecar)>> {
    let samples: Vec<&String> = inv
        .iter()
        .filter(|(_, m)| m.get("truth").is_some_and(|t| t.contains_key(&modality)))
        .map(|(s, _)| s)
        .collect();
    let mut methods: Vec<&String> = inv
        .values()
        .flat_map(|m| m.iter().filter(|(name, f)| *name != "truth" && f.contains_key(&modality)).map(|(n, _)| n))
        .collect();
    methods.sort();
    methods.dedup();
    if samples.is_empty() || methods.is_empty() {
        return Ok(None);
    }
    let first = load_scored(&inv[samples[0]]["truth"][&modality], modality)?;
    let tile = first.height().max(first.width());
    let mut row_names = vec!["truth".to_string()];
    row_names.extend(methods.iter().map(|m| m.to_string()));
    row_names.extend(methods.iter().map(|m| format!("error:{m}")));
    let (mh, mw) = montage_size(row_names.len(), samples.len(), tile);
    let mut img = GrayImage::new(mw as u32, mh as u32);
    let mut panels = Vec::new();

    for (col, sample) in samples.iter().enumerate() {
        let files = &inv[*sample];
        let truth = load_scored(&files["truth"][&modality], modality)?;
        let mut place = |row: usize, content: String, g: &RealGrid| {
            let lo = g.min();
            let hi = g.max();
            let y0 = MONTAGE_GAP + row * (tile + MONTAGE_GAP);
            let x0 = MONTAGE_GAP + col * (tile + MONTAGE_GAP);
            for r in 0..g.height() {
                for c in 0..g.width() {
                    let t = if hi > lo { (g.get(r, c) - lo) / (hi - lo) } else { 0.0 };
                    let v = (t * 255.0).round().clamp(0.0, 255.0) as u8;
                    img.put_pixel((x0 + c) as u32, (y0 + r) as u32, Luma([v]));
                }
            }
            panels.push(PanelWindow {
                row,
                col,
                sample: sample.to_string(),
                content,
                lo,
                hi,
            });
        };
        place(0, "truth".into(), &truth);
        for (k, method) in methods.iter().enumerate() {
            let Some(path) = files.get(*method).and_then(|f| f.get(&modality)) else {
                continue;
            };
            let x = load_scored(path, modality)?;
            x.shape().ensure_eq(truth.shape(), "montage panel")?;
            let err = x.sub(&truth)?.map(|v| 5.0 * v.abs());
            place(1 + k, method.to_string(), &x);
            place(1 + methods.len() + k, format!("error:{method}"), &err);
        }
    }
    let sidecar = MontageSidecar {
        modality,
        tile,
        gap: MONTAGE_GAP,
        rows: row_names,
        samples: samples.iter().map(|s| s.to_string()).collect(),
        panels,
    };
    Ok(Some((img, sidecar)))
}

/// Files written by [`make_report`].
#[derive(Clone, Debug)]
pub struct Report {
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Writes `metrics.csv`, `summary.csv` and per-modality montages
/// (`montage_<modality>.png` with a `.json` sidecar) into `out`.
pub fn make_report(runs: &[PathBuf], out: &Path) -> Result<Report> {
    let metrics = collect_metrics(runs)?;
    let summary = summarize(&metrics);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(())
    };
    write("metrics.csv", metrics_csv(&metrics))?;
    write("summary.csv", summary_csv(&summary))?;
    let inv = inventory(runs)?;
    for modality in [Modality::Pet, Modality::Mri] {
        if let Some((img, sidecar)) = montage(&inv, modality)? {
            let png = out.join(format!("montage_{}.png", modality.as_str()));
            img.save(&png)?;
            files.push(png);
            let json = out.join(format!("montage_{}.json", modality.as_str()));
            io::write_json(&sidecar, &json)?;
            files.push(json);
        }
    }
    Ok(Report {
        metrics,
        summary,
        files,
    })
}
