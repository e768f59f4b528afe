//! Eyeglasses removal: a U-Net style generator with an attention mask, a
//! patch discriminator, and least-squares, identity and L1 losses.

use biasforge_autograd::{AdamConfig, AdamState, Conv2d, ConvGeom, ConvTranspose2d, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bias::{stub_extractor, FeatureExtractor};
use crate::dataset::{augment, composite_glasses, eye_band_rows, AugmentConfig};
use crate::image::{from_model_range, resize_bilinear, to_model_range, Image, RangeTag};
use crate::nets::{
    finite_or, images_to_tensor, l1_loss, lsgan_d_loss, lsgan_g_loss, optimize, step_rng, tensor_to_images, NetError,
    PatchDiscriminator,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ErganArch {
    pub encoder: [usize; 4],
    pub discriminator: [usize; 3],
}

impl Default for ErganArch {
    fn default() -> Self {
        ErganArch {
            encoder: [32, 64, 128, 256],
            discriminator: [32, 64, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErganConfig {
    pub image_size: usize,
    pub w_adv: f64,
    pub w_id: f64,
    pub w_rec: f64,
    /// Weight of the optional eye-band mask supervision term; 0 disables it.
    pub w_mask: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub arch: ErganArch,
}

impl Default for ErganConfig {
    fn default() -> Self {
        ErganConfig {
            image_size: 128,
            w_adv: 1.0,
            w_id: 1.0,
            w_rec: 10.0,
            w_mask: 0.0,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 8,
            seed: 0,
            augment: AugmentConfig::default(),
            arch: ErganArch::default(),
        }
    }
}

impl ErganConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.image_size < 32 || !self.image_size.is_multiple_of(16) {
            return bad("ergan.image_size must be a multiple of 16, at least 32");
        }
        if [self.w_adv, self.w_id, self.w_rec, self.w_mask]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return bad("ergan loss weights must be finite and nonnegative");
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return bad("ergan learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("ergan.batch_size must be positive");
        }
        Ok(())
    }
}

/// Test hooks for [`ErganGenerator::forward_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardHooks {
    /// Replace the learned mask with a constant.
    pub mask: Option<f64>,
    /// Zero the skip tensor from encoder stage `i` (0 = finest).
    pub zero_skip: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ErganOutput {
    /// Blended output in model range.
    pub y: Var,
    /// Decoder output before blending.
    pub raw: Var,
    /// `[N, 1, H, W]`, values in `[0, 1]`.
    pub mask: Var,
}

#[derive(Clone, Debug)]
pub struct ErganGenerator {
    pub params: ParamSet,
    image_size: usize,
    enc: [Conv2d; 4],
    dec: [ConvTranspose2d; 4],
    attention: Conv2d,
    head: Conv2d,
}

impl ErganGenerator {
    pub fn new(cfg: &ErganConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.arch.encoder;
        let mut params = ParamSet::new();
        let g = ConvGeom::new(2, 1);
        let enc = [
            Conv2d::new(&mut params, "g.enc0", 3, c[0], 4, g, rng),
            Conv2d::new(&mut params, "g.enc1", c[0], c[1], 4, g, rng),
            Conv2d::new(&mut params, "g.enc2", c[1], c[2], 4, g, rng),
            Conv2d::new(&mut params, "g.enc3", c[2], c[3], 4, g, rng),
        ];
        let dec = [
            ConvTranspose2d::new(&mut params, "g.dec0", c[3], c[2], 4, g, rng),
            ConvTranspose2d::new(&mut params, "g.dec1", 2 * c[2], c[1], 4, g, rng),
            ConvTranspose2d::new(&mut params, "g.dec2", 2 * c[1], c[0], 4, g, rng),
            ConvTranspose2d::new(&mut params, "g.dec3", 2 * c[0], c[0], 4, g, rng),
        ];
        let attention = Conv2d::new(&mut params, "g.attention", c[0], 1, 1, ConvGeom::new(1, 0), rng);
        let head = Conv2d::new(&mut params, "g.head", c[0], 3, 3, ConvGeom::new(1, 1), rng);
        ErganGenerator {
            params,
            image_size: cfg.image_size,
            enc,
            dec,
            attention,
            head,
        }
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn check_input(x: &[usize]) -> Result<(), NetError> {
        if x.len() != 4 || x[1] != 3 || x[2] == 0 || x[3] == 0 || !x[2].is_multiple_of(16) || !x[3].is_multiple_of(16) {
            return Err(NetError::Shape(format!(
                "eyeglasses generator needs [N, 3, H, W] with H and W divisible by 16, got {x:?}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, vars: &[Var], x: &Var) -> ErganOutput {
        self.forward_with(vars, x, ForwardHooks::default())
    }

    pub fn forward_with(&self, vars: &[Var], x: &Var, hooks: ForwardHooks) -> ErganOutput {
        let mut skips = Vec::with_capacity(3);
        let mut h = x.clone();
        for (i, c) in self.enc.iter().enumerate() {
            h = c.forward(vars, &h).relu();
            if i < 3 {
                skips.push(h.clone());
            }
        }
        for (i, d) in self.dec.iter().enumerate() {
            h = d.forward(vars, &h).relu();
            if i < 3 {
                let stage = 2 - i;
                let mut skip = skips[stage].clone();
                if hooks.zero_skip == Some(stage) {
                    skip = Var::constant(Tensor::zeros(skip.shape()));
                }
                h = Var::concat(&[h, skip], 1);
            }
        }
        let raw = self.head.forward(vars, &h).tanh();
        let mask = match hooks.mask {
            Some(m) => {
                let s = x.shape();
                Var::constant(Tensor::full(&[s[0], 1, s[2], s[3]], m))
            }
            None => self.attention.forward(vars, &h).sigmoid(),
        };
        let y = blend(&mask, &raw, x);
        ErganOutput { y, raw, mask }
    }
}

/// `mask ⊙ raw + (1 − mask) ⊙ x` with a one-channel mask broadcast over channels.
pub fn blend(mask: &Var, raw: &Var, x: &Var) -> Var {
    let s = raw.shape();
    let m = mask
        .reshape(&[s[0], s[2], s[3]])
        .broadcast_axes(s, &[true, false, true, true]);
    m.mul(raw).add(&m.neg().add_scalar(1.0).mul(x))
}

/// Model range to unit range, inside the graph.
fn to_unit(x: &Var) -> Var {
    x.add_scalar(1.0).scale(0.5)
}

/// Rows scaled to unit length; zero rows stay zero.
fn normalize_rows(e: &Var) -> Var {
    let inv = e.square().sum_axes(&[true, false]).sqrt().safe_recip();
    e.mul(&inv.broadcast_axes(e.shape(), &[true, false]))
}

/// Mean over the batch of `‖ê(a) − ê(b)‖₂` with unit-normalized embeddings.
pub fn identity_loss_batch(embedder: &dyn FeatureExtractor, a: &Var, b: &Var) -> Var {
    let ea = normalize_rows(&embedder.embed_batch(a));
    let eb = normalize_rows(&embedder.embed_batch(b));
    ea.sub(&eb).square().sum_axes(&[true, false]).sqrt().mean()
}

fn unit_vec(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

/// `‖ê(a) − ê(b)‖₂`, always in `[0, 2]`.
pub fn identity_distance(ea: Vec<f64>, eb: Vec<f64>) -> f64 {
    unit_vec(ea)
        .iter()
        .zip(unit_vec(eb))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn identity_loss(embedder: &dyn FeatureExtractor, a: &Image, b: &Image) -> f64 {
    identity_distance(embedder.embed(a), embedder.embed(b))
}

/// `[N, 1, H, W]` target that is 1 on the compositor's eye band rows.
pub fn eye_band_target(n: usize, h: usize, w: usize) -> Tensor {
    let (top, bottom) = eye_band_rows(h);
    let mut t = Tensor::zeros(&[n, 1, h, w]);
    for i in 0..n {
        for r in top..bottom {
            let start = (i * h + r) * w;
            t.data_mut()[start..start + w].fill(1.0);
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct ErganLosses {
    pub g_total: Var,
    pub d_total: Var,
    pub adv: Var,
    pub id: Var,
    pub rec: Var,
    pub mask_sup: Var,
    pub out: ErganOutput,
}

/// All losses for one paired batch (model range). `L_D` sees the output cut
/// from the generator graph; `L_G` sees it through `d_vars`.
#[allow(clippy::too_many_arguments)]
pub fn ergan_losses(
    gen: &ErganGenerator,
    g_vars: &[Var],
    disc: &PatchDiscriminator,
    d_vars: &[Var],
    cfg: &ErganConfig,
    embedder: &dyn FeatureExtractor,
    x_glasses: &Tensor,
    x_clean: &Tensor,
) -> Result<ErganLosses, NetError> {
    if x_glasses.shape() != x_clean.shape() {
        return Err(NetError::Shape(format!(
            "unpaired batch: {:?} vs {:?}",
            x_glasses.shape(),
            x_clean.shape()
        )));
    }
    if x_glasses.shape().first().copied().unwrap_or(0) == 0 {
        return Err(NetError::EmptyBatch);
    }
    ErganGenerator::check_input(x_glasses.shape())?;
    disc.check_input(x_glasses.shape())?;
    let clean = Var::constant(x_clean.clone());
    let out = gen.forward(g_vars, &Var::constant(x_glasses.clone()));
    let d_real = disc.forward(d_vars, &clean);
    let d_fake_detached = disc.forward(d_vars, &out.y.detach());
    let d_total = lsgan_d_loss(&d_real, &d_fake_detached);
    let adv = lsgan_g_loss(&disc.forward(d_vars, &out.y));
    let id = identity_loss_batch(embedder, &to_unit(&out.y), &to_unit(&clean));
    let rec = l1_loss(&out.y, &clean);
    let s = x_glasses.shape();
    let mask_sup = out
        .mask
        .sub(&Var::constant(eye_band_target(s[0], s[2], s[3])))
        .square()
        .mean();
    let mut g_total = adv.scale(cfg.w_adv).add(&id.scale(cfg.w_id)).add(&rec.scale(cfg.w_rec));
    if cfg.w_mask > 0.0 {
        g_total = g_total.add(&mask_sup.scale(cfg.w_mask));
    }
    Ok(ErganLosses {
        g_total,
        d_total,
        adv,
        id,
        rec,
        mask_sup,
        out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErganDiagnostics {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub adv: f64,
    pub id: f64,
    /// `mean|y − x_clean|` in model range, before this step's update.
    pub rec: f64,
    pub mask_min: f64,
    pub mask_max: f64,
}

#[derive(Clone, Debug)]
pub struct ErganTrainer {
    pub cfg: ErganConfig,
    pub generator: ErganGenerator,
    pub discriminator: PatchDiscriminator,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    pub iteration: u64,
    data: Vec<Image>,
}

impl ErganTrainer {
    /// `data` are clean UNIT-range faces; glasses are composited per draw.
    pub fn new(cfg: ErganConfig, data: &[Image]) -> Result<Self, NetError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let data = data
            .iter()
            .map(|img| {
                img.require_range(RangeTag::Unit)?;
                img.require_channels(3)?;
                resize_bilinear(img, cfg.image_size, cfg.image_size)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = ErganGenerator::new(&cfg, &mut rng);
        let discriminator = PatchDiscriminator::new(3, &cfg.arch.discriminator, &mut rng);
        Ok(ErganTrainer {
            g_adam: AdamState::for_params(&generator.params),
            d_adam: AdamState::for_params(&discriminator.params),
            cfg,
            generator,
            discriminator,
            iteration: 0,
            data,
        })
    }

    /// `(with glasses, clean)` batch in model range.
    pub fn sample_pairs(&self, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor), NetError> {
        let mut glasses = Vec::with_capacity(self.cfg.batch_size);
        let mut clean = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let img = &self.data[rng.gen_range(0..self.data.len())];
            let aug = augment(img, rng.gen(), &self.cfg.augment)?;
            glasses.push(to_model_range(&composite_glasses(&aug, rng.gen())?)?);
            clean.push(to_model_range(&aug)?);
        }
        Ok((images_to_tensor(&glasses)?, images_to_tensor(&clean)?))
    }

    /// One discriminator update, then one generator update.
    pub fn train_step(&mut self) -> Result<ErganDiagnostics, NetError> {
        let step = self.iteration;
        let mut rng = step_rng(self.cfg.seed, step);
        let (xg, xc) = self.sample_pairs(&mut rng)?;
        let embedder = stub_extractor();
        let d_cfg = AdamConfig::new(self.cfg.lr_discriminator, self.cfg.adam_beta1, self.cfg.adam_beta2);
        let g_cfg = AdamConfig::new(self.cfg.lr_generator, self.cfg.adam_beta1, self.cfg.adam_beta2);

        let g_const = self.generator.params.constants();
        let d_vars = self.discriminator.params.vars();
        let l = ergan_losses(&self.generator, &g_const, &self.discriminator, &d_vars, &self.cfg, &embedder, &xg, &xc)?;
        let loss_d = finite_or(l.d_total.value().item(), step, "discriminator loss")?;
        optimize(&l.d_total, &d_vars, &mut self.discriminator.params, &mut self.d_adam, &d_cfg)
            .map_err(|e| nonfinite_at(e, step))?;

        let g_vars = self.generator.params.vars();
        let d_const = self.discriminator.params.constants();
        let l = ergan_losses(&self.generator, &g_vars, &self.discriminator, &d_const, &self.cfg, &embedder, &xg, &xc)?;
        let loss_g = finite_or(l.g_total.value().item(), step, "generator loss")?;
        let mask = l.out.mask.value();
        let mask_min = mask.data().iter().copied().fold(f64::INFINITY, f64::min);
        let mask_max = mask.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        optimize(&l.g_total, &g_vars, &mut self.generator.params, &mut self.g_adam, &g_cfg)
            .map_err(|e| nonfinite_at(e, step))?;
        self.iteration += 1;
        Ok(ErganDiagnostics {
            iteration: self.iteration,
            loss_d,
            loss_g,
            adv: l.adv.value().item(),
            id: l.id.value().item(),
            rec: l.rec.value().item(),
            mask_min,
            mask_max,
        })
    }
}

fn nonfinite_at(e: biasforge_autograd::AutogradError, step: u64) -> NetError {
    match e {
        biasforge_autograd::AutogradError::NonFiniteGradient(i) => NetError::NonFinite {
            step,
            what: format!("gradient of parameter tensor {i}"),
        },
        other => other.into(),
    }
}

/// Removes glasses from one UNIT-range image; returns the output and the
/// attention mask, both at the input's dimensions.
pub fn remove_glasses(gen: &ErganGenerator, img: &Image) -> Result<(Image, Image), NetError> {
    img.require_range(RangeTag::Unit)?;
    let size = gen.image_size;
    let work = to_model_range(&resize_bilinear(&img.to_rgb(), size, size)?)?;
    let x = images_to_tensor(std::slice::from_ref(&work))?;
    let out = gen.forward(&gen.params.constants(), &Var::constant(x));
    let y = from_model_range(&tensor_to_images(out.y.value(), RangeTag::Model)?.remove(0))?;
    let mask = tensor_to_images(out.mask.value(), RangeTag::Unit)?.remove(0);
    Ok((
        resize_bilinear(&y, img.height(), img.width())?,
        resize_bilinear(&mask, img.height(), img.width())?,
    ))
}
