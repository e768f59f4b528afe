//! Floating-point rasters with an explicit value-range tag, file I/O, and the
//! geometric and range transforms shared by every stage.
//!
//! Pixels are stored row-major, interleaved by channel: index
//! `(row * width + col) * channels + channel`.

use std::path::Path;

use thiserror::Error;

/// Value interval the pixels of an [`Image`] live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RangeTag {
    /// `[0, 1]`: storage, file I/O and metrics.
    Unit,
    /// `[-1, 1]`: what the networks consume and produce.
    Model,
}

impl RangeTag {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RangeTag::Unit => (0.0, 1.0),
            RangeTag::Model => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("unsupported image format for {0} (expected PNG or JPEG)")]
    UnsupportedFormat(String),
    #[error("corrupt image data in {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected:?} range image, got {actual:?}")]
    WrongRange { expected: RangeTag, actual: RangeTag },
    #[error("pixel value {value} at index {index} outside the {range:?} interval")]
    OutOfRange { value: f64, index: usize, range: RangeTag },
    #[error("invalid image dimensions {height}x{width}x{channels}")]
    InvalidDimensions { height: usize, width: usize, channels: usize },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("rotation angle {0} degrees outside the supported range [-45, 45]")]
    AngleOutOfRange(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    range: RangeTag,
}

impl Image {
    /// Validating constructor: dimensions, buffer length and per-pixel range.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        range: RangeTag,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::InvalidDimensions { height, width, channels });
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        let (lo, hi) = range.bounds();
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(ImageError::OutOfRange { value, index, range });
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
            range,
        })
    }

    /// Constant image.
    pub fn filled(height: usize, width: usize, value: &[f64], range: RangeTag) -> Result<Self, ImageError> {
        let pixels = value
            .iter()
            .copied()
            .cycle()
            .take(height * width * value.len())
            .collect();
        Image::new(height, width, value.len(), pixels, range)
    }

    /// Builds an image from a per-pixel function; values are clamped into the
    /// range interval.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: RangeTag,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let (lo, hi) = range.bounds();
        let mut pixels = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    pixels.push(f(r, c, ch).clamp(lo, hi));
                }
            }
        }
        Image::new(height, width, channels, pixels, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// Same geometry with new pixel values; values are clamped to the range.
    pub(crate) fn with_pixels(&self, mut pixels: Vec<f64>) -> Image {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        let (lo, hi) = self.range.bounds();
        for v in &mut pixels {
            *v = v.clamp(lo, hi);
        }
        Image { pixels, ..self.clone() }
    }

    pub(crate) fn require_range(&self, expected: RangeTag) -> Result<(), ImageError> {
        if self.range != expected {
            return Err(ImageError::WrongRange {
                expected,
                actual: self.range,
            });
        }
        Ok(())
    }

    pub(crate) fn require_channels(&self, expected: usize) -> Result<(), ImageError> {
        if self.channels != expected {
            return Err(ImageError::ChannelCount {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::ShapeMismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Rectangular crop; rows `[top, top+h)`, cols `[left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image, ImageError> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(ImageError::InvalidDimensions {
                height: h,
                width: w,
                channels: self.channels,
            });
        }
        let mut pixels = Vec::with_capacity(h * w * self.channels);
        for r in top..top + h {
            let start = (r * self.width + left) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + w * self.channels]);
        }
        Ok(Image {
            height: h,
            width: w,
            channels: self.channels,
            pixels,
            range: self.range,
        })
    }

    /// Replicates a single channel into three.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            channels: 3,
            pixels,
            ..self.clone()
        }
    }
}

/// Reads an 8-bit PNG or JPEG into a UNIT-range image (gray files stay
/// single-channel, everything else becomes RGB).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    if !path.is_file() {
        return Err(ImageError::NotFound(shown));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|source| ImageError::Io {
            path: shown.clone(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageError::Io {
            path: shown.clone(),
            source,
        })?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        _ => return Err(ImageError::UnsupportedFormat(shown)),
    }
    let decoded = reader.decode().map_err(|e| ImageError::Corrupt {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = if decoded.color().channel_count() <= 2 {
        (1, decoded.into_luma8().into_raw())
    } else {
        (3, decoded.into_rgb8().into_raw())
    };
    let pixels = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, pixels, RangeTag::Unit)
}

/// Writes an 8-bit PNG; values are rounded to the nearest of 256 levels.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    img.require_range(RangeTag::Unit)?;
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(source) => ImageError::Io {
            path: path.display().to_string(),
            source,
        },
        other => ImageError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(other.to_string()),
        },
    })
}

/// `y = 2x − 1`.
pub fn to_model_range(img: &Image) -> Result<Image, ImageError> {
    img.require_range(RangeTag::Unit)?;
    let pixels = img.pixels.iter().map(|&v| 2.0 * v - 1.0).collect();
    Ok(Image {
        pixels,
        range: RangeTag::Model,
        ..img.clone()
    })
}

/// `x = (y + 1) / 2`.
pub fn from_model_range(img: &Image) -> Result<Image, ImageError> {
    img.require_range(RangeTag::Model)?;
    let pixels = img.pixels.iter().map(|&v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    Ok(Image {
        pixels,
        range: RangeTag::Unit,
        ..img.clone()
    })
}

/// Source coordinate and blend weight for half-pixel-center resampling.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear resampling with half-pixel-center alignment.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::InvalidDimensions {
            height: out_h,
            width: out_w,
            channels: img.channels,
        });
    }
    if (out_h, out_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let lo = img.pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ch = img.channels;
    let cols: Vec<_> = (0..out_w).map(|c| sample_axis(c, img.width, out_w)).collect();
    let mut pixels = Vec::with_capacity(out_h * out_w * ch);
    for r in 0..out_h {
        let (r0, r1, fr) = sample_axis(r, img.height, out_h);
        for &(c0, c1, fc) in &cols {
            for k in 0..ch {
                let top = img.get(r0, c0, k) * (1.0 - fc) + img.get(r0, c1, k) * fc;
                let bottom = img.get(r1, c0, k) * (1.0 - fc) + img.get(r1, c1, k) * fc;
                pixels.push((top * (1.0 - fr) + bottom * fr).clamp(lo, hi));
            }
        }
    }
    Ok(Image {
        height: out_h,
        width: out_w,
        channels: ch,
        pixels,
        range: img.range,
    })
}

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel Rec.601 luma.
pub fn to_grayscale(img: &Image) -> Result<Image, ImageError> {
    img.require_channels(3)?;
    let (lo, hi) = img.range.bounds();
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]).clamp(lo, hi))
        .collect();
    Ok(Image {
        channels: 1,
        pixels,
        ..img.clone()
    })
}

/// Reverses column order.
pub fn horizontal_flip(img: &Image) -> Image {
    let ch = img.channels;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for r in 0..img.height {
        for c in (0..img.width).rev() {
            let start = (r * img.width + c) * ch;
            pixels.extend_from_slice(&img.pixels[start..start + ch]);
        }
    }
    Image { pixels, ..img.clone() }
}

/// Bilinear sample at fractional `(y, x)` with coordinates clamped to the
/// border, which replicates edge pixels.
fn sample_clamped(img: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let (r0, c0) = (y.floor() as usize, x.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(img.height - 1), (c0 + 1).min(img.width - 1));
    let (fy, fx) = (y - r0 as f64, x - c0 as f64);
    let top = img.get(r0, c0, ch) * (1.0 - fx) + img.get(r0, c1, ch) * fx;
    let bottom = img.get(r1, c0, ch) * (1.0 - fx) + img.get(r1, c1, ch) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotation about the image center, counter-clockwise for positive angles.
pub fn rotate(img: &Image, angle_deg: f64) -> Result<Image, ImageError> {
    if angle_deg.is_nan() || angle_deg.abs() > 45.0 {
        return Err(ImageError::AngleOutOfRange(angle_deg));
    }
    if angle_deg == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for r in 0..img.height {
        for c in 0..img.width {
            // Inverse map: rotate the destination point by −angle. Rows grow
            // downward, so a visual counter-clockwise turn flips the sign of
            // the row term.
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            for k in 0..img.channels {
                pixels.push(sample_clamped(img, sy, sx, k));
            }
        }
    }
    Ok(img.with_pixels(pixels))
}
