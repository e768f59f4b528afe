//! Pieces shared by the three models: image/tensor batching, per-step RNG
//! derivation, optimizer plumbing, least-squares adversarial losses and the
//! patch discriminator.

use biasforge_autograd::{adam_update, AdamConfig, AdamState, AutogradError, Conv2d, ConvGeom, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{Image, ImageError, RangeTag};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Stacks equally sized images into a planar `[N, C, H, W]` tensor.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor, NetError> {
    let first = images.first().ok_or(NetError::EmptyBatch)?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(NetError::Shape(format!(
                "batch mixes {:?} and {:?} images",
                (h, w, c),
                img.dims()
            )));
        }
        for k in 0..c {
            for r in 0..h {
                for col in 0..w {
                    data.push(img.get(r, col, k));
                }
            }
        }
    }
    Ok(Tensor::new(vec![images.len(), c, h, w], data))
}

/// Splits a `[N, C, H, W]` tensor into images, clamping into `range`.
pub fn tensor_to_images(t: &Tensor, range: RangeTag) -> Result<Vec<Image>, NetError> {
    let &[n, c, h, w] = t.shape() else {
        return Err(NetError::Shape(format!("expected a 4-d tensor, got {:?}", t.shape())));
    };
    (0..n)
        .map(|i| {
            let plane = &t.data()[i * c * h * w..(i + 1) * c * h * w];
            Image::from_fn(h, w, c, range, |r, col, k| plane[(k * h + r) * w + col]).map_err(NetError::from)
        })
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for training step `iteration`. Each step draws from its own
/// stream, so a resumed run needs only the seed and the step counter.
pub fn step_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(iteration)))
}

/// Standard-normal tensor.
pub fn normal_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Differentiates `loss` with respect to `vars` and applies one Adam step to
/// `params`. Returns the global gradient norm.
pub fn optimize(
    loss: &Var,
    vars: &[Var],
    params: &mut ParamSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64, AutogradError> {
    let grads: Vec<Tensor> = biasforge_autograd::grad(loss, vars)
        .into_iter()
        .map(|g| g.value().clone())
        .collect();
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    adam_update(params.tensors_mut(), &grads, state, cfg)?;
    Ok(norm)
}

pub fn finite_or(value: f64, step: u64, what: &str) -> Result<f64, NetError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NetError::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

/// `mean[(D(real) − 1)²] + mean[D(fake)²]`.
pub fn lsgan_d_loss(real: &Var, fake: &Var) -> Var {
    real.add_scalar(-1.0).square().mean().add(&fake.square().mean())
}

/// `mean[(D(fake) − 1)²]`.
pub fn lsgan_g_loss(fake: &Var) -> Var {
    fake.add_scalar(-1.0).square().mean()
}

/// Mean absolute difference.
pub fn l1_loss(a: &Var, b: &Var) -> Var {
    a.sub(b).abs().mean()
}

/// `(kernel, stride, pad)` of one convolution.
pub type LayerGeom = (usize, usize, usize);

/// Input rows `[start, end)` seen by output index `i` of a conv stack; the
/// range can extend into the padding.
pub fn receptive_field(layers: &[LayerGeom], i: usize) -> (isize, isize) {
    let (mut start, mut end) = (i as isize, i as isize + 1);
    for &(k, s, p) in layers.iter().rev() {
        start = start * s as isize - p as isize;
        end = (end - 1) * s as isize - p as isize + k as isize;
    }
    (start, end)
}

/// Three stride-2 4×4 convolutions with leaky ReLU, then a stride-1 4×4
/// convolution to a single score channel.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub params: ParamSet,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

pub const PATCH_SLOPE: f64 = 0.2;

impl PatchDiscriminator {
    pub fn new(in_channels: usize, widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mut stages = Vec::new();
        let mut c = in_channels;
        for (i, &wd) in widths.iter().enumerate() {
            stages.push(Conv2d::new(&mut params, &format!("d.conv{i}"), c, wd, 4, ConvGeom::new(2, 1), rng));
            c = wd;
        }
        let head = Conv2d::new(&mut params, "d.head", c, 1, 4, ConvGeom::new(1, 1), rng);
        PatchDiscriminator { params, stages, head }
    }

    pub fn layers(&self) -> Vec<LayerGeom> {
        self.stages
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|c| (c.kernel, c.geom.stride, c.geom.pad))
            .collect()
    }

    /// Score-map side length for an input side, if at least one patch fits.
    pub fn map_len(&self, input: usize) -> Option<usize> {
        let mut n = input;
        for c in self.stages.iter().chain(std::iter::once(&self.head)) {
            n = c.out_len(n).filter(|&v| v >= 1)?;
        }
        Some(n)
    }

    pub fn check_input(&self, x: &[usize]) -> Result<(), NetError> {
        let in_c = self.params.get(self.stages.first().unwrap_or(&self.head).weight).shape()[1];
        if x.len() != 4 || x[1] != in_c {
            return Err(NetError::Shape(format!("patch discriminator expects [N, {in_c}, H, W], got {x:?}")));
        }
        if self.map_len(x[2]).is_none() || self.map_len(x[3]).is_none() {
            return Err(NetError::Shape(format!("input {}x{} too small for one patch", x[2], x[3])));
        }
        Ok(())
    }

    /// `[N, C, H, W] → [N, 1, h, w]` score map.
    pub fn forward(&self, vars: &[Var], x: &Var) -> Var {
        let mut h = x.clone();
        for c in &self.stages {
            h = c.forward(vars, &h).leaky_relu(PATCH_SLOPE);
        }
        self.head.forward(vars, &h)
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor, NetError> {
        self.check_input(x.shape())?;
        Ok(self.forward(&self.params.constants(), &Var::constant(x.clone())).value().clone())
    }
}
