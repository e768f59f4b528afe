//! Attribute frequency statistics, skin-tone lightness histograms and the
//! combined bias report.

use std::fmt::Write as _;
use std::path::Path;

use biasforge_autograd::{Tensor, Var};
use thiserror::Error;

use crate::dataset::AttributeManifest;
use crate::image::{load_image, to_grayscale, Image, ImageError};

pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const TONE_BINS: usize = 8;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("no images to build a tone histogram from")]
    NoImages,
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("image {id}: {source}")]
    Unresolvable {
        id: String,
        #[source]
        source: ImageError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("bias report line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeStat {
    pub name: String,
    pub positive_count: usize,
    pub total: usize,
    pub positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeStats {
    pub attributes: Vec<AttributeStat>,
}

impl AttributeStats {
    pub fn get(&self, name: &str) -> Option<&AttributeStat> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

pub fn attribute_frequencies(m: &AttributeManifest) -> Result<AttributeStats, BiasError> {
    if m.is_empty() {
        return Err(BiasError::EmptyManifest);
    }
    let total = m.len();
    let attributes = m
        .attribute_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let positive_count = m.records.iter().filter(|r| r.values[j] > 0).count();
            AttributeStat {
                name: name.clone(),
                positive_count,
                total,
                positive_rate: positive_count as f64 / total as f64,
            }
        })
        .collect();
    Ok(AttributeStats { attributes })
}

fn check_threshold(threshold: f64) -> Result<(), BiasError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(BiasError::Threshold(threshold))
    }
}

/// Attributes with `rate < threshold`, by ascending rate then name.
pub fn flag_underrepresented(stats: &AttributeStats, threshold: f64) -> Result<Vec<(String, f64)>, BiasError> {
    check_threshold(threshold)?;
    let mut flagged: Vec<(String, f64)> = stats
        .attributes
        .iter()
        .filter(|a| a.positive_rate < threshold)
        .map(|a| (a.name.clone(), a.positive_rate))
        .collect();
    flagged.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(flagged)
}

/// Mean grayscale lightness of the central crop covering `fraction` of each side.
pub fn center_lightness(img: &Image, fraction: f64) -> Result<f64, ImageError> {
    let gray = if img.channels() == 3 { to_grayscale(img)? } else { img.clone() };
    let side = |n: usize| ((n as f64 * fraction).round() as usize).clamp(1, n);
    let (ch, cw) = (side(gray.height()), side(gray.width()));
    let crop = gray.crop((gray.height() - ch) / 2, (gray.width() - cw) / 2, ch, cw)?;
    Ok(crop.pixels().iter().sum::<f64>() / crop.pixels().len() as f64)
}

pub fn tone_bin(lightness: f64) -> usize {
    ((lightness * TONE_BINS as f64).floor().max(0.0) as usize).min(TONE_BINS - 1)
}

/// Normalized 8-bin histogram of central-crop lightness.
pub fn tone_histogram(images: &[Image], face_region: f64) -> Result<[f64; TONE_BINS], BiasError> {
    if images.is_empty() {
        return Err(BiasError::NoImages);
    }
    let mut counts = [0usize; TONE_BINS];
    for img in images {
        counts[tone_bin(center_lightness(img, face_region)?)] += 1;
    }
    let n = images.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

/// A tone bin is flagged when its mass falls below `threshold` times the
/// uniform share `1/8`.
pub fn flag_tone_bins(histogram: &[f64; TONE_BINS], threshold: f64) -> Result<Vec<usize>, BiasError> {
    check_threshold(threshold)?;
    let cut = threshold / TONE_BINS as f64;
    Ok((0..TONE_BINS).filter(|&i| histogram[i] < cut).collect())
}

/// Fixed-dimension image embedding. `embed_batch` takes `[N, 3, H, W]` and
/// returns `[N, dim]` as a differentiable graph node.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn embed(&self, img: &Image) -> Vec<f64>;
    fn embed_batch(&self, x: &Var) -> Var;
}

/// Mean RGB of the four image quadrants, ordered top-left, top-right,
/// bottom-left, bottom-right. Quadrants split at `H/2` and `W/2` (integer
/// division), so the left and right halves match only for even widths.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubExtractor;

pub fn stub_extractor() -> StubExtractor {
    StubExtractor
}

/// `(start, len)` of the two halves of an axis; a length-1 axis is shared.
fn halves(n: usize) -> [(usize, usize); 2] {
    if n == 1 {
        [(0, 1), (0, 1)]
    } else {
        [(0, n / 2), (n / 2, n - n / 2)]
    }
}

fn quadrants(h: usize, w: usize) -> [(usize, usize, usize, usize); 4] {
    let [(t, th), (b, bh)] = halves(h);
    let [(l, lw), (r, rw)] = halves(w);
    [(t, th, l, lw), (t, th, r, rw), (b, bh, l, lw), (b, bh, r, rw)]
}

impl FeatureExtractor for StubExtractor {
    fn dim(&self) -> usize {
        12
    }

    fn embed(&self, img: &Image) -> Vec<f64> {
        let img = img.to_rgb();
        let mut out = Vec::with_capacity(12);
        for (top, rows, left, cols) in quadrants(img.height(), img.width()) {
            for k in 0..3 {
                let mut s = 0.0;
                for r in top..top + rows {
                    for c in left..left + cols {
                        s += img.get(r, c, k);
                    }
                }
                out.push(s / (rows * cols) as f64);
            }
        }
        out
    }

    fn embed_batch(&self, x: &Var) -> Var {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let parts: Vec<Var> = quadrants(h, w)
            .iter()
            .map(|&(top, rows, left, cols)| {
                x.narrow(2, top, rows)
                    .narrow(3, left, cols)
                    .sum_axes(&[true, true, false, false])
                    .scale(1.0 / (rows * cols) as f64)
            })
            .collect();
        let out = Var::concat(&parts, 1);
        debug_assert_eq!(out.shape(), &[n, 12]);
        out
    }
}

/// Planar `[1, C, H, W]` tensor of an image.
pub fn image_to_tensor(img: &Image) -> Tensor {
    let (h, w, c) = img.dims();
    let mut data = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            for k in 0..c {
                data[(k * h + r) * w + col] = img.get(r, col, k);
            }
        }
    }
    Tensor::new(vec![1, c, h, w], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub stats: AttributeStats,
    pub threshold: f64,
    pub flagged_attributes: Vec<(String, f64)>,
    pub tone_histogram: [f64; TONE_BINS],
    pub flagged_tone_bins: Vec<usize>,
    pub embedding_dim: usize,
    pub embedding_mean: Vec<f64>,
}

/// Bias report from a manifest and its already-loaded images (same order).
pub fn build_report(
    m: &AttributeManifest,
    images: &[Image],
    threshold: f64,
    extractor: &dyn FeatureExtractor,
) -> Result<BiasReport, BiasError> {
    let stats = attribute_frequencies(m)?;
    let flagged_attributes = flag_underrepresented(&stats, threshold)?;
    let tone_histogram = tone_histogram(images, 0.5)?;
    let flagged_tone_bins = flag_tone_bins(&tone_histogram, threshold)?;
    let mut embedding_mean = vec![0.0; extractor.dim()];
    for img in images {
        for (acc, v) in embedding_mean.iter_mut().zip(extractor.embed(img)) {
            *acc += v;
        }
    }
    for v in &mut embedding_mean {
        *v /= images.len() as f64;
    }
    Ok(BiasReport {
        stats,
        threshold,
        flagged_attributes,
        tone_histogram,
        flagged_tone_bins,
        embedding_dim: extractor.dim(),
        embedding_mean,
    })
}

/// Loads `<image_root>/<image_id>` for every record and builds the report
/// with the stub extractor.
pub fn analyze_dataset(m: &AttributeManifest, image_root: &Path, threshold: f64) -> Result<BiasReport, BiasError> {
    check_threshold(threshold)?;
    if m.is_empty() {
        return Err(BiasError::EmptyManifest);
    }
    let images = m
        .records
        .iter()
        .map(|r| {
            load_image(image_root.join(&r.image_id)).map_err(|source| BiasError::Unresolvable {
                id: r.image_id.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_report(m, &images, threshold, &stub_extractor())
}

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join(",")
}

impl BiasReport {
    /// Line-oriented `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "threshold = {:.6}", self.threshold);
        let _ = writeln!(out, "records = {}", self.stats.attributes.first().map_or(0, |a| a.total));
        let _ = writeln!(
            out,
            "flagged_attributes = {}",
            join(&self.flagged_attributes, |(n, r)| format!("{n}:{r:.6}"))
        );
        let _ = writeln!(out, "tone_histogram = {}", join(&self.tone_histogram, |v| format!("{v:.6}")));
        let _ = writeln!(out, "flagged_tone_bins = {}", join(&self.flagged_tone_bins, |b| b.to_string()));
        let _ = writeln!(out, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(out, "embedding_mean = {}", join(&self.embedding_mean, |v| format!("{v:.6}")));
        for a in &self.stats.attributes {
            let _ = writeln!(out, "rate.{} = {:.6}", a.name, a.positive_rate);
        }
        out
    }

    /// `attribute,positive_count,total,rate`, one row per attribute in manifest order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute,positive_count,total,rate\n");
        for a in &self.stats.attributes {
            let _ = writeln!(out, "{},{},{},{:.6}", a.name, a.positive_count, a.total, a.positive_rate);
        }
        out
    }
}

/// Flagged attribute names recorded in a report produced by [`BiasReport::to_text`].
pub fn flagged_attributes_from_text(text: &str) -> Result<Vec<String>, BiasError> {
    for (i, line) in text.lines().enumerate() {
        let Some((key, value)) = line.split_once('=') else { continue };
        if key.trim() != "flagged_attributes" {
            continue;
        }
        return value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                item.split_once(':').map(|(n, _)| n.to_string()).ok_or_else(|| BiasError::Parse {
                    line: i + 1,
                    reason: format!("malformed flagged entry {item:?}"),
                })
            })
            .collect();
    }
    Err(BiasError::Parse {
        line: 0,
        reason: "no flagged_attributes entry".into(),
    })
}
