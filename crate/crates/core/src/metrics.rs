//! PSNR and SSIM in unit space (peak value 1) and their per-category
//! aggregation into a CSV report.
//!
//! Report standard deviations are population deviations. Identical pairs
//! have infinite PSNR; those are left out of the mean and counted in
//! `excluded_infinite`. A row with `count = 0` carries mean and std of 0.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::image::{to_grayscale, Image, ImageError, RangeTag};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("image of {height}x{width} is smaller than the {window}x{window} SSIM window")]
    TooSmall { height: usize, width: usize, window: usize },
    #[error("no image pairs to aggregate")]
    Empty,
    #[error("report I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn check_pair(a: &Image, b: &Image) -> Result<(), MetricError> {
    a.require_range(RangeTag::Unit)?;
    b.require_range(RangeTag::Unit)?;
    a.require_same_shape(b)?;
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let sum: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.pixels().len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr, MetricError> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (1.0 / e).log10())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Normalized 1-D Gaussian taps centered on the middle tap.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|j| k[j] * plane[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

fn luma_plane(img: &Image) -> Result<Vec<f64>, ImageError> {
    Ok(if img.channels() == 3 {
        to_grayscale(img)?.into_pixels()
    } else {
        img.pixels().to_vec()
    })
}

/// Per-pixel SSIM over the valid region, row-major `(H−w+1) × (W−w+1)`.
pub fn ssim_map(a: &Image, b: &Image, p: &SsimParams) -> Result<Vec<f64>, MetricError> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < p.window || w < p.window {
        return Err(MetricError::TooSmall {
            height: h,
            width: w,
            window: p.window,
        });
    }
    let x = luma_plane(a)?;
    let y = luma_plane(b)?;
    let k = gaussian_kernel(p.window, p.sigma);
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(s, t)| s * t).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &k);
    let mu_y = filter_valid(&y, h, w, &k);
    let xx = filter_valid(&prod(&x, &x), h, w, &k);
    let yy = filter_valid(&prod(&y, &y), h, w, &k);
    let xy = filter_valid(&prod(&x, &y), h, w, &k);
    Ok((0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            let s = ((2.0 * mx * my + p.c1) * (2.0 * cov + p.c2))
                / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
            s.clamp(-1.0, 1.0)
        })
        .collect())
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, MetricError> {
    let map = ssim_map(a, b, p)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Skin,
    Eyeglasses,
    Enhanced,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Skin, Category::Eyeglasses, Category::Enhanced];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Skin => "skin",
            Category::Eyeglasses => "eyeglasses",
            Category::Enhanced => "enhanced",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?} (expected skin, eyeglasses or enhanced)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryStats {
    pub category: Category,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub excluded_infinite: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub stats: Vec<CategoryStats>,
}

impl MetricsReport {
    pub fn get(&self, category: Category, metric: Metric) -> Option<&CategoryStats> {
        self.stats.iter().find(|s| s.category == category && s.metric == metric)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn row_key(s: &CategoryStats) -> (&'static str, &'static str) {
    (s.metric.as_str(), s.category.as_str())
}

pub fn aggregate(pairs: &[(Image, Image, Category)]) -> Result<MetricsReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut stats = Vec::new();
    for cat in Category::ALL {
        let mut psnrs = Vec::new();
        let mut ssims = Vec::new();
        let mut infinite = 0;
        for (generated, reference, _) in pairs.iter().filter(|p| p.2 == cat) {
            match psnr(generated, reference)? {
                Psnr::Finite(v) => psnrs.push(v),
                Psnr::Infinite => infinite += 1,
            }
            ssims.push(ssim(generated, reference)?);
        }
        if psnrs.is_empty() && ssims.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&psnrs);
        stats.push(CategoryStats {
            category: cat,
            metric: Metric::Psnr,
            mean,
            std,
            count: psnrs.len(),
            excluded_infinite: infinite,
        });
        let (mean, std) = mean_std(&ssims);
        stats.push(CategoryStats {
            category: cat,
            metric: Metric::Ssim,
            mean,
            std,
            count: ssims.len(),
            excluded_infinite: 0,
        });
    }
    stats.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    Ok(MetricsReport { stats })
}

pub const REPORT_HEADER: &str = "category,metric,mean,std,count,excluded_infinite";

pub fn report_to_csv(r: &MetricsReport) -> String {
    let mut rows: Vec<&CategoryStats> = r.stats.iter().collect();
    rows.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            s.category.as_str(),
            s.metric.as_str(),
            s.mean,
            s.std,
            s.count,
            s.excluded_infinite
        );
    }
    out
}

pub fn write_report_csv(r: &MetricsReport, path: impl AsRef<Path>) -> Result<(), MetricError> {
    let path = path.as_ref();
    std::fs::write(path, report_to_csv(r)).map_err(|source| MetricError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reader for [`report_to_csv`] output; values carry its 6-decimal precision.
pub fn parse_report_csv(text: &str) -> Result<MetricsReport, MetricError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => {
            return Err(MetricError::Parse {
                line: 1,
                reason: format!("header must be {REPORT_HEADER:?}"),
            })
        }
    }
    let mut stats = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let bad = |reason: String| MetricError::Parse { line: line_no, reason };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        stats.push(CategoryStats {
            category: f[0].parse().map_err(bad)?,
            metric: f[1].parse().map_err(bad)?,
            mean: num(f[2])?,
            std: num(f[3])?,
            count: int(f[4])?,
            excluded_infinite: int(f[5])?,
        });
    }
    Ok(MetricsReport { stats })
}
