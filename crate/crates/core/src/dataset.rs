//! Attribute manifests in the CelebA `list_attr` layout, seeded splitting,
//! augmentation and the synthetic face fixtures used in place of real data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::image::{horizontal_flip, rotate, Image, ImageError, RangeTag};

/// The 40 CelebA attribute names in file order.
pub const CELEBA_ATTRIBUTES: [&str; 40] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: missing or invalid record count")]
    BadCount { line: usize },
    #[error("line {line}: missing attribute name header")]
    MissingHeader { line: usize },
    #[error("line {line}: duplicate attribute name {name:?}")]
    DuplicateAttribute { line: usize, name: String },
    #[error("declared {declared} records, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("line {line}: attribute value {token:?} is not 1 or -1")]
    InvalidValue { line: usize, token: String },
    #[error("line {line}: expected {expected} attribute values, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeRecord {
    pub image_id: String,
    /// Each entry is `1` or `-1`.
    pub values: Vec<i8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeManifest {
    pub attribute_names: Vec<String>,
    pub records: Vec<AttributeRecord>,
}

impl AttributeManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    /// `list_attr` text: count line, names line, one record per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n{}\n", self.records.len(), self.attribute_names.join(" "));
        for r in &self.records {
            out.push_str(&r.image_id);
            for v in &r.values {
                out.push(' ');
                out.push_str(if *v > 0 { "1" } else { "-1" });
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_attribute_manifest(text: &str) -> Result<AttributeManifest, ManifestError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let declared: usize = match lines.next() {
        Some((_, l)) => l.trim().parse().map_err(|_| ManifestError::BadCount { line: 1 })?,
        None => return Err(ManifestError::BadCount { line: 1 }),
    };
    let header = lines.next().ok_or(ManifestError::MissingHeader { line: 2 })?.1;
    let attribute_names: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    if attribute_names.is_empty() {
        return Err(ManifestError::MissingHeader { line: 2 });
    }
    for (i, name) in attribute_names.iter().enumerate() {
        if attribute_names[..i].contains(name) {
            return Err(ManifestError::DuplicateAttribute {
                line: 2,
                name: name.clone(),
            });
        }
    }
    let mut records = Vec::with_capacity(declared.min(1 << 20));
    for (line, l) in lines {
        let mut tokens = l.split_whitespace();
        let Some(image_id) = tokens.next() else { continue };
        let tokens: Vec<&str> = tokens.collect();
        if tokens.len() != attribute_names.len() {
            return Err(ManifestError::ColumnCount {
                line,
                expected: attribute_names.len(),
                found: tokens.len(),
            });
        }
        let values = tokens
            .iter()
            .map(|t| match *t {
                "1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(ManifestError::InvalidValue {
                    line,
                    token: other.to_string(),
                }),
            })
            .collect::<Result<Vec<i8>, _>>()?;
        records.push(AttributeRecord {
            image_id: image_id.to_string(),
            values,
        });
    }
    if records.len() != declared {
        return Err(ManifestError::CountMismatch {
            declared,
            found: records.len(),
        });
    }
    Ok(AttributeManifest {
        attribute_names,
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Partition sizes `(⌊0.7N⌋, ⌊0.1N⌋, rest)`, in integer arithmetic.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let eval = n / 10;
    (train, eval, n - train - eval)
}

pub fn split_dataset(m: &AttributeManifest, seed: u64) -> SplitSpec {
    let mut ids: Vec<String> = m.records.iter().map(|r| r.image_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, eval, _) = split_sizes(ids.len());
    let test_ids = ids.split_off(train + eval);
    let eval_ids = ids.split_off(train);
    SplitSpec {
        train_ids: ids,
        eval_ids,
        test_ids,
        seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub max_angle_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip: 0.5,
            max_angle_deg: 10.0,
        }
    }
}

/// Random flip then random rotation, fully determined by `seed`.
pub fn augment(img: &Image, seed: u64, policy: &AugmentConfig) -> Result<Image, ImageError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.gen::<f64>() < policy.p_flip;
    let angle = if policy.max_angle_deg > 0.0 {
        rng.gen_range(-policy.max_angle_deg..=policy.max_angle_deg)
    } else {
        0.0
    };
    let out = if flip { horizontal_flip(img) } else { img.clone() };
    rotate(&out, angle)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFaceSpec {
    pub skin_rgb: [f64; 3],
    pub has_glasses: bool,
    /// Face disc radius as a fraction of `min(h, w)`, in `(0, 0.5]`.
    pub face_radius_frac: f64,
    /// Horizontal distance of each eye from the vertical midline, as a
    /// fraction of the width.
    pub eye_offset_frac: f64,
    pub background_rgb: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticFaceSpec {
    fn default() -> Self {
        SyntheticFaceSpec {
            skin_rgb: [0.87, 0.72, 0.60],
            has_glasses: false,
            face_radius_frac: 0.42,
            eye_offset_frac: 0.17,
            background_rgb: [0.35, 0.45, 0.55],
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("synthetic faces need at least 16x16 pixels, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("invalid synthetic face parameter: {0}")]
    InvalidSpec(&'static str),
}

/// Inclusive-exclusive pixel rectangle: rows `[top, bottom)`, cols `[left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PixelBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom && col >= self.left && col < self.right
    }
}

const EYE_ROW_FRAC: f64 = 0.40;
const LENS_HALF_WIDTH_FRAC: f64 = 0.12;
const LENS_HALF_HEIGHT_FRAC: f64 = 0.07;
const GLASSES_RGB: [f64; 3] = [0.06, 0.06, 0.08];
const EYE_RGB: [f64; 3] = [0.10, 0.07, 0.05];

/// Rows `[⌈0.30H⌉, ⌈0.55H⌉)`, the band glasses may occupy.
pub fn eye_band_rows(h: usize) -> (usize, usize) {
    ((30 * h).div_ceil(100), (55 * h).div_ceil(100))
}

/// Half-open pixel span of the centers lying in `[center − half, center + half]`.
fn span(center: f64, half: f64, limit: usize) -> (usize, usize) {
    let lo = (center - half - 0.5).ceil().max(0.0) as usize;
    let hi = ((center + half - 0.5).floor() + 1.0).clamp(0.0, limit as f64) as usize;
    (lo.min(hi), hi)
}

fn validate_face(spec: &SyntheticFaceSpec, h: usize, w: usize) -> Result<(), SyntheticError> {
    if h < 16 || w < 16 {
        return Err(SyntheticError::TooSmall(h, w));
    }
    let unit = |v: &[f64; 3]| v.iter().all(|c| (0.0..=1.0).contains(c));
    if !unit(&spec.skin_rgb) || !unit(&spec.background_rgb) {
        return Err(SyntheticError::InvalidSpec("colors must lie in [0, 1]"));
    }
    if !(spec.face_radius_frac > 0.0 && spec.face_radius_frac <= 0.5) {
        return Err(SyntheticError::InvalidSpec("face_radius_frac must lie in (0, 0.5]"));
    }
    if !(spec.eye_offset_frac > 0.0 && spec.eye_offset_frac + LENS_HALF_WIDTH_FRAC < 0.5) {
        return Err(SyntheticError::InvalidSpec("eye_offset_frac leaves no room for the lenses"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SyntheticError::InvalidSpec("noise_sigma must be finite and nonnegative"));
    }
    Ok(())
}

/// Lens rectangles (left, right) and the bridge between them.
pub fn glasses_boxes(spec: &SyntheticFaceSpec, h: usize, w: usize) -> Result<[PixelBox; 3], SyntheticError> {
    validate_face(spec, h, w)?;
    let m = h.min(w) as f64;
    let (band_top, band_bottom) = eye_band_rows(h);
    let (top, bottom) = span(EYE_ROW_FRAC * h as f64, LENS_HALF_HEIGHT_FRAC * m, h);
    let (top, bottom) = (top.max(band_top), bottom.min(band_bottom));
    let cx = w as f64 / 2.0;
    let off = spec.eye_offset_frac * w as f64;
    let half = LENS_HALF_WIDTH_FRAC * w as f64;
    let (l0, l1) = span(cx - off, half, w);
    let (r0, r1) = span(cx + off, half, w);
    let eye_row = (EYE_ROW_FRAC * h as f64) as usize;
    Ok([
        PixelBox { top, bottom, left: l0, right: l1 },
        PixelBox { top, bottom, left: r0, right: r1 },
        PixelBox {
            top: eye_row.max(top),
            bottom: (eye_row + 1).min(bottom),
            left: l1.min(r0),
            right: r0,
        },
    ])
}

/// Cartoon face: background, skin disc, two eyes, optional glasses, noise.
pub fn generate_synthetic_face(spec: &SyntheticFaceSpec, h: usize, w: usize) -> Result<Image, SyntheticError> {
    let boxes = glasses_boxes(spec, h, w)?;
    let m = h.min(w) as f64;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let face_r2 = (spec.face_radius_frac * m).powi(2);
    let eye_r2 = (0.06 * m).max(1.0).powi(2);
    let eye_y = EYE_ROW_FRAC * h as f64;
    let eyes = [cx - spec.eye_offset_frac * w as f64, cx + spec.eye_offset_frac * w as f64];

    let mut pixels = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut rgb = spec.background_rgb;
            if (y - cy).powi(2) + (x - cx).powi(2) <= face_r2 {
                rgb = spec.skin_rgb;
            }
            if eyes.iter().any(|ex| (y - eye_y).powi(2) + (x - ex).powi(2) <= eye_r2) {
                rgb = EYE_RGB;
            }
            if spec.has_glasses && boxes.iter().any(|b| b.contains(r, c)) {
                rgb = GLASSES_RGB;
            }
            pixels.extend_from_slice(&rgb);
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in &mut pixels {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(Image::new(h, w, 3, pixels, RangeTag::Unit).expect("raster within unit range"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlassesStyle {
    /// Blend weight of the frame; the lens interior uses `0.7·alpha`.
    pub alpha: f64,
    pub color: [f64; 3],
}

impl Default for GlassesStyle {
    fn default() -> Self {
        GlassesStyle {
            alpha: 0.85,
            color: GLASSES_RGB,
        }
    }
}

pub fn composite_glasses(img: &Image, seed: u64) -> Result<Image, ImageError> {
    composite_glasses_with(img, seed, &GlassesStyle::default())
}

/// Alpha-blends a pair of dark lenses with a bridge over the eye band. The
/// seed jitters lens placement by about a pixel at small sizes; nothing is
/// drawn outside the band rows.
pub fn composite_glasses_with(img: &Image, seed: u64, style: &GlassesStyle) -> Result<Image, ImageError> {
    img.require_range(RangeTag::Unit)?;
    img.require_channels(3)?;
    let (h, w) = (img.height(), img.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (band_top, band_bottom) = eye_band_rows(h);
    let m = h.min(w) as f64;
    let cy = EYE_ROW_FRAC * h as f64 + rng.gen_range(-0.02..=0.02) * h as f64;
    let off = (0.17 + rng.gen_range(-0.015..=0.015)) * w as f64;
    let half_w = (LENS_HALF_WIDTH_FRAC + rng.gen_range(-0.01..=0.01)) * w as f64;
    let half_h = LENS_HALF_HEIGHT_FRAC * m;
    let (top, bottom) = span(cy, half_h, h);
    let (top, bottom) = (top.max(band_top), bottom.min(band_bottom));
    let cx = w as f64 / 2.0;
    let lenses = [span(cx - off, half_w, w), span(cx + off, half_w, w)];
    let bridge_row = (cy as usize).clamp(top, bottom.saturating_sub(1));

    let mut pixels = img.pixels().to_vec();
    let mut blend = |r: usize, c: usize, a: f64| {
        for k in 0..3 {
            let v = &mut pixels[(r * w + c) * 3 + k];
            *v = ((1.0 - a) * *v + a * style.color[k]).clamp(0.0, 1.0);
        }
    };
    for r in top..bottom {
        for &(l, rt) in &lenses {
            for c in l..rt {
                let frame = r == top || r + 1 == bottom || c == l || c + 1 == rt;
                blend(r, c, if frame { style.alpha } else { 0.7 * style.alpha });
            }
        }
        if r == bridge_row {
            for c in lenses[0].1..lenses[1].0 {
                blend(r, c, style.alpha);
            }
        }
    }
    Ok(Image::new(h, w, 3, pixels, RangeTag::Unit).expect("blend stays in range"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of faces drawn with glasses.
    pub glasses_rate: f64,
    /// Fraction of faces with a dark skin tone.
    pub dark_rate: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Synthetic CelebA stand-in: `face_00000.png`-style ids with full 40-column
/// records. `Eyeglasses` and `Pale_Skin` follow the drawn faces; every other
/// attribute is a seeded coin flip.
pub fn synthetic_dataset(spec: &SyntheticDatasetSpec) -> Result<(AttributeManifest, Vec<Image>), SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let glasses_idx = 15;
    let pale_idx = 26;
    debug_assert_eq!(CELEBA_ATTRIBUTES[glasses_idx], "Eyeglasses");
    debug_assert_eq!(CELEBA_ATTRIBUTES[pale_idx], "Pale_Skin");
    let n_glasses = (spec.glasses_rate * spec.count as f64).round() as usize;
    let n_dark = (spec.dark_rate * spec.count as f64).round() as usize;
    let mut records = Vec::with_capacity(spec.count);
    let mut images = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let dark = i < n_dark;
        // Interleave glasses from the far end so the two traits overlap little.
        let glasses = i >= spec.count - n_glasses.min(spec.count);
        let jitter: f64 = rng.gen_range(-0.04..=0.04);
        let skin = if dark {
            [0.42 + jitter, 0.28 + jitter, 0.20 + jitter]
        } else {
            [0.90 + jitter.min(0.0), 0.76 + jitter, 0.64 + jitter]
        };
        let face = SyntheticFaceSpec {
            skin_rgb: skin,
            has_glasses: glasses,
            face_radius_frac: rng.gen_range(0.36..=0.46),
            eye_offset_frac: rng.gen_range(0.15..=0.19),
            background_rgb: [rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7)],
            noise_sigma: spec.noise_sigma,
            seed: rng.gen(),
        };
        images.push(generate_synthetic_face(&face, spec.height, spec.width)?);
        let mut values: Vec<i8> = (0..CELEBA_ATTRIBUTES.len())
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        values[glasses_idx] = if glasses { 1 } else { -1 };
        values[pale_idx] = if dark { -1 } else { 1 };
        records.push(AttributeRecord {
            image_id: format!("face_{i:05}.png"),
            values,
        });
    }
    let manifest = AttributeManifest {
        attribute_names: CELEBA_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        records,
    };
    Ok((manifest, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_attribute_fixture() {
        let m = parse_attribute_manifest("2\nEyeglasses Pale_Skin\nA.jpg 1 -1\nB.jpg -1 -1").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[0].image_id, "A.jpg");
        assert_eq!(m.records[0].values[m.attribute_index("Eyeglasses").unwrap()], 1);
        assert_eq!(parse_attribute_manifest(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn empty_record_section() {
        let m = parse_attribute_manifest("0\nEyeglasses Pale_Skin\n").unwrap();
        assert!(m.is_empty());
        assert_eq!(m.attribute_names.len(), 2);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let names = CELEBA_ATTRIBUTES.join(" ");
        let short = vec!["1"; 39].join(" ");
        let text = format!("1\n{names}\nx.jpg {short}\n");
        assert_eq!(
            parse_attribute_manifest(&text),
            Err(ManifestError::ColumnCount { line: 3, expected: 40, found: 39 })
        );
        assert_eq!(
            parse_attribute_manifest("1\nA B\nx.jpg 1 0\n"),
            Err(ManifestError::InvalidValue { line: 3, token: "0".into() })
        );
        assert_eq!(
            parse_attribute_manifest("3\nA\nx.jpg 1\n"),
            Err(ManifestError::CountMismatch { declared: 3, found: 1 })
        );
        assert_eq!(parse_attribute_manifest("two\nA\n"), Err(ManifestError::BadCount { line: 1 }));
        assert!(matches!(
            parse_attribute_manifest("0\nA A\n"),
            Err(ManifestError::DuplicateAttribute { .. })
        ));
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(10), (7, 1, 2));
        assert_eq!(split_sizes(1), (0, 0, 1));
    }

    #[test]
    fn split_is_seeded() {
        let m = AttributeManifest {
            attribute_names: vec!["A".into()],
            records: (0..100)
                .map(|i| AttributeRecord {
                    image_id: format!("{i}"),
                    values: vec![1],
                })
                .collect(),
        };
        assert_eq!(split_dataset(&m, 3), split_dataset(&m, 3));
        assert_ne!(split_dataset(&m, 3).train_ids, split_dataset(&m, 4).train_ids);
    }

    fn face() -> Image {
        generate_synthetic_face(&SyntheticFaceSpec::default(), 24, 20).unwrap()
    }

    #[test]
    fn augment_degenerate_policies() {
        let img = face();
        let none = AugmentConfig { p_flip: 0.0, max_angle_deg: 0.0 };
        assert_eq!(augment(&img, 9, &none).unwrap(), img);
        let flip = AugmentConfig { p_flip: 1.0, max_angle_deg: 0.0 };
        assert_eq!(augment(&img, 9, &flip).unwrap(), horizontal_flip(&img));
        let d = AugmentConfig::default();
        assert_eq!(augment(&img, 5, &d).unwrap(), augment(&img, 5, &d).unwrap());
    }

    #[test]
    fn face_center_is_skin() {
        let spec = SyntheticFaceSpec::default();
        let img = generate_synthetic_face(&spec, 32, 32).unwrap();
        for k in 0..3 {
            assert_eq!(img.get(16, 16, k), spec.skin_rgb[k]);
        }
        assert_eq!(img, generate_synthetic_face(&spec, 32, 32).unwrap());
    }

    #[test]
    fn glasses_change_only_their_boxes() {
        for (h, w) in [(16, 16), (32, 32), (40, 24), (128, 128)] {
            let plain = SyntheticFaceSpec::default();
            let with = SyntheticFaceSpec { has_glasses: true, ..plain.clone() };
            let a = generate_synthetic_face(&plain, h, w).unwrap();
            let b = generate_synthetic_face(&with, h, w).unwrap();
            let boxes = glasses_boxes(&plain, h, w).unwrap();
            let (band_top, band_bottom) = eye_band_rows(h);
            let mut changed = 0;
            for r in 0..h {
                for c in 0..w {
                    let differs = (0..3).any(|k| a.get(r, c, k) != b.get(r, c, k));
                    if differs {
                        changed += 1;
                        assert!(boxes.iter().any(|bx| bx.contains(r, c)), "{h}x{w} at ({r},{c})");
                        assert!(r >= band_top && r < band_bottom);
                    }
                }
            }
            assert!(changed > 0);
        }
    }

    #[test]
    fn too_small_or_invalid_faces_rejected() {
        let spec = SyntheticFaceSpec::default();
        assert_eq!(generate_synthetic_face(&spec, 15, 32), Err(SyntheticError::TooSmall(15, 32)));
        let bad = SyntheticFaceSpec { face_radius_frac: 0.7, ..spec };
        assert!(matches!(generate_synthetic_face(&bad, 32, 32), Err(SyntheticError::InvalidSpec(_))));
    }

    #[test]
    fn composite_stays_in_eye_band() {
        for (h, w) in [(16, 16), (32, 32), (57, 33)] {
            let img = generate_synthetic_face(&SyntheticFaceSpec::default(), h, w).unwrap();
            let (top, bottom) = eye_band_rows(h);
            for seed in 0..5 {
                let out = composite_glasses(&img, seed).unwrap();
                assert_ne!(out, img);
                for r in 0..h {
                    for c in 0..w {
                        for k in 0..3 {
                            if r < top || r >= bottom {
                                assert_eq!(out.get(r, c, k), img.get(r, c, k));
                            }
                        }
                    }
                }
                let twice = composite_glasses(&out, seed).unwrap();
                assert!(twice.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn composite_alpha_zero_is_identity() {
        let img = face();
        let style = GlassesStyle { alpha: 0.0, ..GlassesStyle::default() };
        assert_eq!(composite_glasses_with(&img, 1, &style).unwrap(), img);
        let model = crate::image::to_model_range(&img).unwrap();
        assert!(composite_glasses(&model, 1).is_err());
    }

    #[test]
    fn eye_band_integer_bounds() {
        assert_eq!(eye_band_rows(16), (5, 9));
        assert_eq!(eye_band_rows(20), (6, 11));
        assert_eq!(eye_band_rows(100), (30, 55));
    }

    #[test]
    fn synthetic_dataset_composition() {
        let spec = SyntheticDatasetSpec {
            count: 20,
            height: 16,
            width: 16,
            glasses_rate: 0.1,
            dark_rate: 0.25,
            noise_sigma: 0.01,
            seed: 4,
        };
        let (m, imgs) = synthetic_dataset(&spec).unwrap();
        assert_eq!(imgs.len(), 20);
        let g = m.attribute_index("Eyeglasses").unwrap();
        let p = m.attribute_index("Pale_Skin").unwrap();
        assert_eq!(m.records.iter().filter(|r| r.values[g] == 1).count(), 2);
        assert_eq!(m.records.iter().filter(|r| r.values[p] == -1).count(), 5);
        assert_eq!(synthetic_dataset(&spec).unwrap().0, m);
    }
}
