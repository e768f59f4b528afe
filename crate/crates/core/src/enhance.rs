//! Frame enhancement: edge smoothing and superpixel preprocessing, a
//! two-tail generator normalised with LADE, and two patch discriminators
//! (grayscale texture and colour clarity).

use biasforge_autograd::{AdamConfig, AdamState, Conv2d, ConvGeom, ParamId, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{from_model_range, resize_bilinear, to_grayscale, to_model_range, Image, ImageError, RangeTag, LUMA_WEIGHTS};
use crate::metrics::gaussian_kernel;
use crate::nets::{
    finite_or, images_to_tensor, l1_loss, lsgan_d_loss, lsgan_g_loss, optimize, step_rng, tensor_to_images, NetError,
    PatchDiscriminator,
};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("superpixel count {k} must be between 1 and the pixel count {pixels}")]
    SuperpixelCount { k: usize, pixels: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub const LADE_EPS: f64 = 1e-5;
const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

/// Sobel gradient magnitude of a one-channel image, scaled into `[0, 1]`,
/// with replicated borders.
pub fn sobel_edges(gray: &Image) -> Result<Vec<f64>, ImageError> {
    gray.require_channels(1)?;
    let (h, w) = (gray.height(), gray.width());
    let at = |r: isize, c: isize| gray.get(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize, 0);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.push(((gx * gx + gy * gy).sqrt() / SOBEL_MAX).min(1.0));
        }
    }
    Ok(out)
}

/// 3×3 binary dilation.
pub fn dilate3(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (r.saturating_sub(1)..(r + 2).min(h))
                .any(|rr| (c.saturating_sub(1)..(c + 2).min(w)).any(|cc| mask[rr * w + cc]));
        }
    }
    out
}

/// Separable Gaussian blur with a 5×5 kernel and replicated borders.
pub fn gaussian_blur5(img: &Image, sigma: f64) -> Result<Image, ImageError> {
    let k = gaussian_kernel(5, sigma);
    let (h, w, ch) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w * ch];
    for r in 0..h {
        for c in 0..w {
            for q in 0..ch {
                rows[(r * w + c) * ch + q] = (0..5)
                    .map(|i| k[i] * img.get(r, clamp(c as isize + i as isize - 2, w), q))
                    .sum();
            }
        }
    }
    Image::from_fn(h, w, ch, img.range(), |r, c, q| {
        (0..5)
            .map(|i| k[i] * rows[(clamp(r as isize + i as isize - 2, h) * w + c) * ch + q])
            .sum()
    })
}

/// Replaces pixels on dilated strong edges (magnitude `> t`) by a blurred copy.
pub fn edge_smooth(img: &Image, t: f64, sigma: f64) -> Result<Image, ImageError> {
    img.require_range(RangeTag::Unit)?;
    let gray = if img.channels() == 3 { to_grayscale(img)? } else { img.clone() };
    let (h, w, ch) = img.dims();
    let strong: Vec<bool> = sobel_edges(&gray)?.into_iter().map(|e| e > t).collect();
    let mask = dilate3(&strong, h, w);
    if !mask.contains(&true) {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur5(img, sigma)?;
    let mut pixels = img.pixels().to_vec();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            pixels[i * ch..(i + 1) * ch].copy_from_slice(&blurred.pixels()[i * ch..(i + 1) * ch]);
        }
    }
    Image::new(h, w, ch, pixels, RangeTag::Unit)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superpixels {
    pub height: usize,
    pub width: usize,
    /// Row-major labels, each in `[0, K)`.
    pub labels: Vec<usize>,
    pub recolored: Image,
}

impl Superpixels {
    pub fn label_count(&self) -> usize {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

pub const SLIC_COMPACTNESS: f64 = 10.0 / 255.0;

/// Grid-seeded k-means in `(r, g, b, αx, αy)` space with a fixed iteration
/// count and no connectivity enforcement.
pub fn slic_superpixels(img: &Image, k: usize, iters: usize) -> Result<Superpixels, EnhanceError> {
    img.require_range(RangeTag::Unit)?;
    img.require_channels(3)?;
    let (h, w, _) = img.dims();
    if k == 0 || k > h * w {
        return Err(EnhanceError::SuperpixelCount { k, pixels: h * w });
    }
    let gy = ((k as f64 * h as f64 / w as f64).sqrt().floor() as usize).clamp(1, h);
    let gx = (k / gy).clamp(1, w);
    let step = ((h * w) as f64 / k as f64).sqrt();
    let alpha = (k as f64 / (h * w) as f64).sqrt() * SLIC_COMPACTNESS;
    let px = |r: usize, c: usize| [img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2)];

    // centers: [r, c, red, green, blue]
    let mut centers = Vec::with_capacity(gx * gy);
    for i in 0..gy {
        for j in 0..gx {
            let r = ((i as f64 + 0.5) * h as f64 / gy as f64).floor() as usize;
            let c = ((j as f64 + 0.5) * w as f64 / gx as f64).floor() as usize;
            let [cr, cg, cb] = px(r.min(h - 1), c.min(w - 1));
            centers.push([r as f64, c as f64, cr, cg, cb]);
        }
    }
    let mut labels: Vec<usize> = (0..h * w)
        .map(|p| {
            let (r, c) = (p / w, p % w);
            (r * gy / h) * gx + c * gx / w
        })
        .collect();
    let reach = (2.0 * step).ceil() as isize;
    for _ in 0..iters {
        let mut best = vec![f64::INFINITY; h * w];
        for (id, ctr) in centers.iter().enumerate() {
            let (r0, c0) = (ctr[0].round() as isize, ctr[1].round() as isize);
            for r in (r0 - reach).max(0)..(r0 + reach + 1).min(h as isize) {
                for c in (c0 - reach).max(0)..(c0 + reach + 1).min(w as isize) {
                    let (ru, cu) = (r as usize, c as usize);
                    let col = px(ru, cu);
                    let dc: f64 = (0..3).map(|q| (col[q] - ctr[2 + q]).powi(2)).sum();
                    let ds = (r as f64 - ctr[0]).powi(2) + (c as f64 - ctr[1]).powi(2);
                    let d = dc + alpha * alpha * ds;
                    let p = ru * w + cu;
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = id;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let (r, c) = (p / w, p % w);
            let col = px(r, c);
            let s = &mut sums[l];
            s[0] += r as f64;
            s[1] += c as f64;
            for q in 0..3 {
                s[2 + q] += col[q];
            }
            s[5] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                for q in 0..5 {
                    ctr[q] = s[q] / s[5];
                }
            }
        }
    }
    let recolored = recolor_by_labels(img, &labels, centers.len())?;
    Ok(Superpixels {
        height: h,
        width: w,
        labels,
        recolored,
    })
}

/// Each pixel takes its label's mean colour, clamped to the member range so
/// uniform regions keep their exact value.
pub fn recolor_by_labels(img: &Image, labels: &[usize], n_labels: usize) -> Result<Image, ImageError> {
    let (h, w, ch) = img.dims();
    let mut sum = vec![0.0; n_labels * ch];
    let mut lo = vec![f64::INFINITY; n_labels * ch];
    let mut hi = vec![f64::NEG_INFINITY; n_labels * ch];
    let mut count = vec![0usize; n_labels];
    for (p, &l) in labels.iter().enumerate() {
        count[l] += 1;
        for q in 0..ch {
            let v = img.pixels()[p * ch + q];
            sum[l * ch + q] += v;
            lo[l * ch + q] = lo[l * ch + q].min(v);
            hi[l * ch + q] = hi[l * ch + q].max(v);
        }
    }
    Image::from_fn(h, w, ch, img.range(), |r, c, q| {
        let l = labels[r * w + c];
        let i = l * ch + q;
        (sum[i] / count[l] as f64).clamp(lo[i], hi[i])
    })
}

/// Denormalization whose scale and shift are linear in the per-channel
/// spatial mean and std of the incoming features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lade {
    pub channels: usize,
    /// `[C, 2C]`
    pub w_gamma: ParamId,
    pub b_gamma: ParamId,
    pub w_beta: ParamId,
    pub b_beta: ParamId,
}

fn spatial_keep() -> [bool; 4] {
    [true, true, false, false]
}

impl Lade {
    /// Starts as plain instance normalization: W = 0, b_γ = 1, b_β = 0.
    pub fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        Lade {
            channels,
            w_gamma: params.push(format!("{name}.w_gamma"), Tensor::zeros(&[channels, 2 * channels])),
            b_gamma: params.push(format!("{name}.b_gamma"), Tensor::ones(&[channels])),
            w_beta: params.push(format!("{name}.w_beta"), Tensor::zeros(&[channels, 2 * channels])),
            b_beta: params.push(format!("{name}.b_beta"), Tensor::zeros(&[channels])),
        }
    }

    /// `(centered features, σ [N, C], γ [N, C], β [N, C])`.
    fn parts(&self, vars: &[Var], f: &Var) -> (Var, Var, Var, Var) {
        let s = f.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let area = (s[2] * s[3]) as f64;
        let mu = f.sum_axes(&spatial_keep()).scale(1.0 / area);
        let centered = f.sub(&mu.broadcast_axes(&s, &spatial_keep()));
        let sigma = centered
            .square()
            .sum_axes(&spatial_keep())
            .scale(1.0 / area)
            .add_scalar(LADE_EPS)
            .sqrt();
        let stats = Var::concat(&[mu, sigma.clone()], 1);
        let linear = |w: ParamId, b: ParamId| {
            stats
                .matmul(&vars[w.0].transpose())
                .add(&vars[b.0].broadcast_axes(&[n, c], &[false, true]))
        };
        let gamma = linear(self.w_gamma, self.b_gamma);
        let beta = linear(self.w_beta, self.b_beta);
        (centered, sigma, gamma, beta)
    }

    /// `(γ, β)`, each `[N, C]`.
    pub fn modulation(&self, vars: &[Var], f: &Var) -> (Var, Var) {
        let (_, _, g, b) = self.parts(vars, f);
        (g, b)
    }

    pub fn forward(&self, vars: &[Var], f: &Var) -> Var {
        let s = f.shape().to_vec();
        let (centered, sigma, gamma, beta) = self.parts(vars, f);
        let k = spatial_keep();
        let scale = gamma.mul(&sigma.safe_recip()).broadcast_axes(&s, &k);
        centered.mul(&scale).add(&beta.broadcast_axes(&s, &k))
    }
}

/// 3×3 convolution on a replicate-padded input, then LADE and ReLU.
#[derive(Clone, Copy, Debug)]
struct Block {
    conv: Conv2d,
    lade: Lade,
}

impl Block {
    fn new(params: &mut ParamSet, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Block {
            conv: Conv2d::new(params, &format!("{name}.conv"), cin, cout, 3, ConvGeom::new(stride, 0), rng),
            lade: Lade::new(params, &format!("{name}.lade"), cout),
        }
    }

    fn forward(&self, vars: &[Var], x: &Var) -> Var {
        self.lade.forward(vars, &self.conv.forward(vars, &x.pad_replicate(1))).relu()
    }
}

fn head(conv: &Conv2d, vars: &[Var], x: &Var) -> Var {
    conv.forward(vars, &x.pad_replicate(1)).tanh()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnhanceArch {
    pub support: [usize; 3],
    pub main: [usize; 4],
    pub discriminator: [usize; 3],
}

impl Default for EnhanceArch {
    fn default() -> Self {
        EnhanceArch {
            support: [16, 32, 32],
            main: [32, 32, 32, 32],
            discriminator: [32, 64, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceConfig {
    pub work_size: usize,
    pub superpixels: usize,
    pub edge_threshold: f64,
    pub blur_sigma: f64,
    pub slic_iters: usize,
    pub w_d1: f64,
    pub w_d2: f64,
    pub w_content: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub arch: EnhanceArch,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            work_size: 256,
            superpixels: 256,
            edge_threshold: 0.3,
            blur_sigma: 1.0,
            slic_iters: 10,
            w_d1: 1.0,
            w_d2: 1.0,
            w_content: 10.0,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 4,
            seed: 0,
            arch: EnhanceArch::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.work_size < 16 || !self.work_size.is_multiple_of(4) {
            return bad("enhance.work_size must be a multiple of 4, at least 16");
        }
        if self.superpixels == 0 || self.superpixels > self.work_size * self.work_size {
            return bad("enhance.superpixels must be between 1 and work_size²");
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return bad("enhance.edge_threshold must lie in (0, 1)");
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return bad("enhance.blur_sigma must be positive");
        }
        if [self.w_d1, self.w_d2, self.w_content]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return bad("enhance loss weights must be finite and nonnegative");
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return bad("enhance learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("enhance.batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EnhanceOutput {
    pub coarse: Var,
    pub refined: Var,
}

#[derive(Clone, Debug)]
pub struct EnhanceGenerator {
    pub params: ParamSet,
    support: [Block; 3],
    support_head: Conv2d,
    main: [Block; 4],
    main_head: Conv2d,
}

impl EnhanceGenerator {
    pub fn new(arch: &EnhanceArch, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let s = arch.support;
        let m = arch.main;
        let support = [
            Block::new(&mut params, "support0", 3, s[0], 1, rng),
            Block::new(&mut params, "support1", s[0], s[1], 2, rng),
            Block::new(&mut params, "support2", s[1], s[2], 2, rng),
        ];
        let support_head = Conv2d::new(&mut params, "support.head", s[2], 3, 3, ConvGeom::new(1, 0), rng);
        let main = [
            Block::new(&mut params, "main0", 6, m[0], 1, rng),
            Block::new(&mut params, "main1", m[0], m[1], 1, rng),
            Block::new(&mut params, "main2", m[1], m[2], 1, rng),
            Block::new(&mut params, "main3", m[2], m[3], 1, rng),
        ];
        let main_head = Conv2d::new(&mut params, "main.head", m[3], 3, 3, ConvGeom::new(1, 0), rng);
        EnhanceGenerator {
            params,
            support,
            support_head,
            main,
            main_head,
        }
    }

    pub fn check_input(x: &[usize]) -> Result<(), NetError> {
        if x.len() != 4 || x[1] != 3 || x[2] < 4 || x[3] < 4 || !x[2].is_multiple_of(4) || !x[3].is_multiple_of(4) {
            return Err(NetError::Shape(format!(
                "enhancement generator needs [N, 3, H, W] with H and W divisible by 4, got {x:?}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, vars: &[Var], x: &Var) -> EnhanceOutput {
        self.forward_with(vars, x, false)
    }

    /// `zero_coarse` feeds zeros to the main tail in place of the coarse output.
    pub fn forward_with(&self, vars: &[Var], x: &Var, zero_coarse: bool) -> EnhanceOutput {
        let mut h = x.clone();
        for b in &self.support {
            h = b.forward(vars, &h);
        }
        let coarse = head(&self.support_head, vars, &h.upsample_nearest(4));
        let fed = if zero_coarse {
            Var::constant(Tensor::zeros(coarse.shape()))
        } else {
            coarse.clone()
        };
        let mut h = Var::concat(&[fed, x.clone()], 1);
        for b in &self.main {
            h = b.forward(vars, &h);
        }
        let refined = head(&self.main_head, vars, &h);
        EnhanceOutput { coarse, refined }
    }
}

/// Rec.601 luma of a `[N, 3, H, W]` batch as `[N, 1, H, W]`.
pub fn luma(x: &Var) -> Var {
    let [a, b, c] = LUMA_WEIGHTS;
    x.narrow(1, 0, 1)
        .scale(a)
        .add(&x.narrow(1, 1, 1).scale(b))
        .add(&x.narrow(1, 2, 1).scale(c))
}

/// D1 sees the grayscale projection; D2 sees colour.
#[derive(Clone, Debug)]
pub struct EnhanceDiscriminators {
    pub d1: PatchDiscriminator,
    pub d2: PatchDiscriminator,
}

impl EnhanceDiscriminators {
    pub fn new(arch: &EnhanceArch, rng: &mut impl Rng) -> Self {
        EnhanceDiscriminators {
            d1: PatchDiscriminator::new(1, &arch.discriminator, rng),
            d2: PatchDiscriminator::new(3, &arch.discriminator, rng),
        }
    }
}

pub fn d1_texture_scores(d1: &PatchDiscriminator, x: &Tensor) -> Result<Tensor, NetError> {
    let gray = luma(&Var::constant(x.clone()));
    d1.scores(gray.value())
}

pub fn d2_clarity_scores(d2: &PatchDiscriminator, x: &Tensor) -> Result<Tensor, NetError> {
    d2.scores(x)
}

/// Resize to the working size, smooth strong edges, flatten superpixels.
pub fn preprocess(cfg: &EnhanceConfig, img: &Image) -> Result<Image, EnhanceError> {
    img.require_range(RangeTag::Unit)?;
    let work = resize_bilinear(&img.to_rgb(), cfg.work_size, cfg.work_size)?;
    let smooth = edge_smooth(&work, cfg.edge_threshold, cfg.blur_sigma)?;
    Ok(slic_superpixels(&smooth, cfg.superpixels, cfg.slic_iters)?.recolored)
}

/// Full inference path; the refined output comes back at the input's size.
pub fn enhance_image(cfg: &EnhanceConfig, gen: &EnhanceGenerator, img: &Image) -> Result<Image, EnhanceError> {
    let pre = to_model_range(&preprocess(cfg, img)?)?;
    let x = images_to_tensor(std::slice::from_ref(&pre))?;
    let out = gen.forward(&gen.params.constants(), &Var::constant(x));
    let refined = tensor_to_images(out.refined.value(), RangeTag::Model)?.remove(0);
    let unit = from_model_range(&refined)?;
    Ok(resize_bilinear(&unit, img.height(), img.width())?)
}

#[derive(Clone, Debug)]
pub struct EnhanceLosses {
    pub g_total: Var,
    pub d_total: Var,
    pub adv_d1: Var,
    pub adv_d2: Var,
    pub content: Var,
    pub out: EnhanceOutput,
}

/// Losses for one batch: `input` is preprocessed frames, `real` the target
/// frames, both model range.
#[allow(clippy::too_many_arguments)]
pub fn enhance_losses(
    gen: &EnhanceGenerator,
    g_vars: &[Var],
    discs: &EnhanceDiscriminators,
    d1_vars: &[Var],
    d2_vars: &[Var],
    cfg: &EnhanceConfig,
    input: &Tensor,
    real: &Tensor,
) -> Result<EnhanceLosses, NetError> {
    if input.shape() != real.shape() {
        return Err(NetError::Shape(format!("batch mismatch: {:?} vs {:?}", input.shape(), real.shape())));
    }
    EnhanceGenerator::check_input(input.shape())?;
    discs.d2.check_input(input.shape())?;
    let x = Var::constant(input.clone());
    let r = Var::constant(real.clone());
    let out = gen.forward(g_vars, &x);
    let fake = out.refined.detach();
    let d_total = lsgan_d_loss(
        &discs.d1.forward(d1_vars, &luma(&r)),
        &discs.d1.forward(d1_vars, &luma(&fake)),
    )
    .add(&lsgan_d_loss(&discs.d2.forward(d2_vars, &r), &discs.d2.forward(d2_vars, &fake)));
    let adv_d1 = lsgan_g_loss(&discs.d1.forward(d1_vars, &luma(&out.refined)));
    let adv_d2 = lsgan_g_loss(&discs.d2.forward(d2_vars, &out.refined));
    let content = l1_loss(&out.refined, &x);
    let g_total = adv_d1
        .scale(cfg.w_d1)
        .add(&adv_d2.scale(cfg.w_d2))
        .add(&content.scale(cfg.w_content));
    Ok(EnhanceLosses {
        g_total,
        d_total,
        adv_d1,
        adv_d2,
        content,
        out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceDiagnostics {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub adv_d1: f64,
    pub adv_d2: f64,
    pub content: f64,
}

#[derive(Clone, Debug)]
pub struct EnhanceTrainer {
    pub cfg: EnhanceConfig,
    pub generator: EnhanceGenerator,
    pub discriminators: EnhanceDiscriminators,
    pub g_adam: AdamState,
    pub d1_adam: AdamState,
    pub d2_adam: AdamState,
    pub iteration: u64,
    inputs: Vec<Image>,
    reals: Vec<Image>,
}

impl EnhanceTrainer {
    /// Frames are UNIT range; each is paired with its own preprocessed copy.
    pub fn new(cfg: EnhanceConfig, frames: &[Image]) -> Result<Self, EnhanceError> {
        cfg.validate()?;
        if frames.is_empty() {
            return Err(NetError::EmptyBatch.into());
        }
        let mut inputs = Vec::with_capacity(frames.len());
        let mut reals = Vec::with_capacity(frames.len());
        for f in frames {
            inputs.push(to_model_range(&preprocess(&cfg, f)?)?);
            reals.push(to_model_range(&resize_bilinear(&f.to_rgb(), cfg.work_size, cfg.work_size)?)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = EnhanceGenerator::new(&cfg.arch, &mut rng);
        let discriminators = EnhanceDiscriminators::new(&cfg.arch, &mut rng);
        Ok(EnhanceTrainer {
            g_adam: AdamState::for_params(&generator.params),
            d1_adam: AdamState::for_params(&discriminators.d1.params),
            d2_adam: AdamState::for_params(&discriminators.d2.params),
            cfg,
            generator,
            discriminators,
            iteration: 0,
            inputs,
            reals,
        })
    }

    pub fn train_step(&mut self) -> Result<EnhanceDiagnostics, NetError> {
        let step = self.iteration;
        let mut rng = step_rng(self.cfg.seed, step);
        let idx: Vec<usize> = (0..self.cfg.batch_size).map(|_| rng.gen_range(0..self.inputs.len())).collect();
        let input = images_to_tensor(&idx.iter().map(|&i| self.inputs[i].clone()).collect::<Vec<_>>())?;
        let real = images_to_tensor(&idx.iter().map(|&i| self.reals[i].clone()).collect::<Vec<_>>())?;
        let d_cfg = AdamConfig::new(self.cfg.lr_discriminator, self.cfg.adam_beta1, self.cfg.adam_beta2);
        let g_cfg = AdamConfig::new(self.cfg.lr_generator, self.cfg.adam_beta1, self.cfg.adam_beta2);

        let g_const = self.generator.params.constants();
        let d1_vars = self.discriminators.d1.params.vars();
        let d2_vars = self.discriminators.d2.params.vars();
        let l = enhance_losses(
            &self.generator,
            &g_const,
            &self.discriminators,
            &d1_vars,
            &d2_vars,
            &self.cfg,
            &input,
            &real,
        )?;
        let loss_d = finite_or(l.d_total.value().item(), step, "discriminator loss")?;
        let mut all = d1_vars.clone();
        all.extend(d2_vars.iter().cloned());
        let grads = biasforge_autograd::grad(&l.d_total, &all);
        let (g1, g2) = grads.split_at(d1_vars.len());
        let g1: Vec<Tensor> = g1.iter().map(|g| g.value().clone()).collect();
        let g2: Vec<Tensor> = g2.iter().map(|g| g.value().clone()).collect();
        apply(&mut self.discriminators.d1.params, &g1, &mut self.d1_adam, &d_cfg, step)?;
        apply(&mut self.discriminators.d2.params, &g2, &mut self.d2_adam, &d_cfg, step)?;

        let g_vars = self.generator.params.vars();
        let d1c = self.discriminators.d1.params.constants();
        let d2c = self.discriminators.d2.params.constants();
        let l = enhance_losses(&self.generator, &g_vars, &self.discriminators, &d1c, &d2c, &self.cfg, &input, &real)?;
        let loss_g = finite_or(l.g_total.value().item(), step, "generator loss")?;
        optimize(&l.g_total, &g_vars, &mut self.generator.params, &mut self.g_adam, &g_cfg).map_err(|e| match e {
            biasforge_autograd::AutogradError::NonFiniteGradient(i) => NetError::NonFinite {
                step,
                what: format!("generator gradient {i}"),
            },
            other => other.into(),
        })?;
        self.iteration += 1;
        Ok(EnhanceDiagnostics {
            iteration: self.iteration,
            loss_d,
            loss_g,
            adv_d1: l.adv_d1.value().item(),
            adv_d2: l.adv_d2.value().item(),
            content: l.content.value().item(),
        })
    }
}

fn apply(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig, step: u64) -> Result<(), NetError> {
    biasforge_autograd::adam_update(params.tensors_mut(), grads, state, cfg).map_err(|e| match e {
        biasforge_autograd::AutogradError::NonFiniteGradient(i) => NetError::NonFinite {
            step,
            what: format!("discriminator gradient {i}"),
        },
        other => other.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::normal_tensor;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(h, w, 1, RangeTag::Unit, |r, c, _| f(r, c)).unwrap()
    }

    fn tiny_arch() -> EnhanceArch {
        EnhanceArch {
            support: [3, 4, 4],
            main: [4, 4, 3, 3],
            discriminator: [3, 3, 4],
        }
    }

    #[test]
    fn sobel_cases() {
        assert!(sobel_edges(&gray(6, 6, |_, _| 0.4)).unwrap().iter().all(|&e| e == 0.0));
        let step = gray(6, 8, |_, c| if c >= 4 { 1.0 } else { 0.0 });
        let e = sobel_edges(&step).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                let v = e[r * 8 + c];
                if c == 3 || c == 4 {
                    assert!((v - 4.0 / SOBEL_MAX).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let img = gray(5, 7, |r, c| ((r * 7 + c * 3) % 5) as f64 / 4.0);
        let flipped = crate::image::horizontal_flip(&img);
        let (a, b) = (sobel_edges(&img).unwrap(), sobel_edges(&flipped).unwrap());
        for r in 0..5 {
            for c in 0..7 {
                assert!((a[r * 7 + c] - b[r * 7 + 6 - c]).abs() < 1e-12);
            }
        }
        assert!(sobel_edges(&Image::filled(2, 2, &[0.0; 3], RangeTag::Unit).unwrap()).is_err());
    }

    #[test]
    fn edge_smooth_cases() {
        let flat = Image::filled(8, 8, &[0.2, 0.5, 0.7], RangeTag::Unit).unwrap();
        assert_eq!(edge_smooth(&flat, 0.3, 1.0).unwrap(), flat);
        let step = Image::from_fn(8, 12, 3, RangeTag::Unit, |_, c, _| if c >= 6 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(edge_smooth(&step, 1.0, 1.0).unwrap(), step);
        let smooth = edge_smooth(&step, 0.3, 1.0).unwrap();
        let slope = |img: &Image| {
            (0..11)
                .map(|c| (img.get(4, c + 1, 0) - img.get(4, c, 0)).abs())
                .fold(0.0, f64::max)
        };
        assert!(slope(&smooth) < slope(&step));
        for r in 0..8 {
            for c in (0..3).chain(9..12) {
                assert_eq!(smooth.get(r, c, 1), step.get(r, c, 1));
            }
        }
    }

    #[test]
    fn slic_degenerate_and_two_colour() {
        let img = Image::from_fn(4, 4, 3, RangeTag::Unit, |r, c, k| ((r * 4 + c) * 3 + k) as f64 / 48.0).unwrap();
        let sp = slic_superpixels(&img, 16, 10).unwrap();
        assert_eq!(sp.label_count(), 16);
        assert_eq!(sp.recolored, img);
        assert!(matches!(
            slic_superpixels(&img, 17, 10),
            Err(EnhanceError::SuperpixelCount { k: 17, pixels: 16 })
        ));

        let flat = Image::filled(9, 7, &[0.1, 0.3, 0.7], RangeTag::Unit).unwrap();
        assert_eq!(slic_superpixels(&flat, 5, 10).unwrap().recolored, flat);

        let (a, b) = ([0.9, 0.2, 0.1], [0.1, 0.4, 0.8]);
        let two = Image::from_fn(8, 8, 3, RangeTag::Unit, |_, c, k| if c < 4 { a[k] } else { b[k] }).unwrap();
        let sp = slic_superpixels(&two, 2, 10).unwrap();
        assert_eq!(sp.label_count(), 2);
        for k in 0..3 {
            assert!((sp.recolored.get(0, 0, k) - a[k]).abs() < 1e-6);
            assert!((sp.recolored.get(0, 7, k) - b[k]).abs() < 1e-6);
        }
    }

    fn lade_fixture(c: usize) -> (ParamSet, Lade) {
        let mut p = ParamSet::new();
        let l = Lade::new(&mut p, "l", c);
        (p, l)
    }

    #[test]
    fn lade_reduces_to_instance_norm() {
        let (p, l) = lade_fixture(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = normal_tensor(&[2, 3, 5, 6], &mut rng).map(|v| 3.0 * v + 1.5);
        let out = l.forward(&p.constants(), &Var::constant(f.clone()));
        let d = out.value().data();
        for plane in d.chunks(30) {
            let mean = plane.iter().sum::<f64>() / 30.0;
            let std = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0).sqrt();
            assert!(mean.abs() < 1e-4 && (std - 1.0).abs() < 1e-4);
        }
        let shifted = l.forward(&p.constants(), &Var::constant(f.map(|v| v + 4.0)));
        assert!(shifted.value().max_abs_diff(out.value()) < 1e-12);
    }

    #[test]
    fn lade_gamma_linear_in_mean() {
        let (mut p, l) = lade_fixture(2);
        // γ_c = μ_c
        let mut w = Tensor::zeros(&[2, 4]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[4 + 1] = 1.0;
        *p.get_mut(l.w_gamma) = w;
        *p.get_mut(l.b_gamma) = Tensor::zeros(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = normal_tensor(&[1, 2, 4, 4], &mut rng).map(|v| v + 2.0);
        let (g1, _) = l.modulation(&p.constants(), &Var::constant(f.clone()));
        let (g2, _) = l.modulation(&p.constants(), &Var::constant(f.map(|v| 2.0 * v)));
        assert!(g2.value().max_abs_diff(&g1.value().map(|v| 2.0 * v)) < 1e-12);
        assert!(g1.value().data()[0].abs() > 0.5);
    }

    #[test]
    fn generator_shapes_and_coarse_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = EnhanceGenerator::new(&tiny_arch(), &mut rng);
        let x = Var::constant(normal_tensor(&[1, 3, 16, 12], &mut rng).map(f64::tanh));
        let k = g.params.constants();
        let out = g.forward(&k, &x);
        assert_eq!(out.coarse.shape(), x.shape());
        assert_eq!(out.refined.shape(), x.shape());
        assert!(out.refined.value().data().iter().all(|v| v.abs() < 1.0));
        let cut = g.forward_with(&k, &x, true);
        assert!(cut.refined.value().max_abs_diff(out.refined.value()) > 0.0);
        assert!(EnhanceGenerator::check_input(&[1, 3, 18, 16]).is_err());
    }

    #[test]
    fn d1_ignores_chroma_with_equal_luma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = EnhanceDiscriminators::new(&tiny_arch(), &mut rng);
        let base = normal_tensor(&[1, 1, 16, 16], &mut rng).map(|v| 0.3 * v.tanh());
        // Same luma, different colour: move along a direction with zero luma weight.
        let [wr, wg, _] = LUMA_WEIGHTS;
        let dir = [wg, -wr, 0.0];
        let colour = |s: f64| {
            let planes: Vec<Tensor> = (0..3).map(|k| base.map(|v| v + s * dir[k] * v)).collect();
            Tensor::concat(&planes.iter().collect::<Vec<_>>(), 1)
        };
        let (a, b) = (colour(0.0), colour(0.8));
        assert!(a.max_abs_diff(&b) > 0.01);
        let (sa, sb) = (d1_texture_scores(&d.d1, &a).unwrap(), d1_texture_scores(&d.d1, &b).unwrap());
        assert!(sa.max_abs_diff(&sb) < 1e-12);
        assert!(d2_clarity_scores(&d.d2, &a).unwrap().max_abs_diff(&d2_clarity_scores(&d.d2, &b).unwrap()) > 0.0);
        let dup = d2_clarity_scores(&d.d2, &Tensor::concat(&[&a, &a], 0)).unwrap();
        let n = dup.numel() / 2;
        assert_eq!(dup.data()[..n], dup.data()[n..]);
    }

    fn tiny_cfg() -> EnhanceConfig {
        EnhanceConfig {
            work_size: 16,
            superpixels: 16,
            batch_size: 2,
            arch: tiny_arch(),
            ..EnhanceConfig::default()
        }
    }

    #[test]
    fn constant_frame_stays_constant() {
        let cfg = EnhanceConfig { work_size: 32, ..tiny_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = EnhanceGenerator::new(&cfg.arch, &mut rng);
        let img = Image::filled(20, 28, &[0.3, 0.6, 0.2], RangeTag::Unit).unwrap();
        let out = enhance_image(&cfg, &g, &img).unwrap();
        assert_eq!((out.height(), out.width()), (20, 28));
        for k in 0..3 {
            let v = out.get(0, 0, k);
            for r in 0..20 {
                for c in 0..28 {
                    assert!((out.get(r, c, k) - v).abs() < 1e-12);
                }
            }
        }
        assert_eq!(out, enhance_image(&cfg, &g, &img).unwrap());
    }

    #[test]
    fn zero_weights_leave_generator_unchanged() {
        let frames: Vec<Image> = (0..3)
            .map(|i| {
                Image::from_fn(16, 16, 3, RangeTag::Unit, |r, c, k| ((r * 5 + c * 3 + k + i) % 11) as f64 / 10.0)
                    .unwrap()
            })
            .collect();
        let cfg = EnhanceConfig { w_d1: 0.0, w_d2: 0.0, w_content: 0.0, ..tiny_cfg() };
        let mut t = EnhanceTrainer::new(cfg, &frames).unwrap();
        let before = t.generator.params.tensors().to_vec();
        let d1_before = t.discriminators.d1.params.tensors().to_vec();
        let diag = t.train_step().unwrap();
        assert_eq!(t.generator.params.tensors(), &before[..]);
        assert_ne!(t.discriminators.d1.params.tensors(), &d1_before[..]);
        assert!(diag.loss_d.is_finite());

        let mut a = EnhanceTrainer::new(tiny_cfg(), &frames).unwrap();
        let mut b = EnhanceTrainer::new(tiny_cfg(), &frames).unwrap();
        for _ in 0..2 {
            assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
        }
    }
}
