//! Skin-tone recoloring model trained as a Wasserstein GAN with gradient
//! penalty.
//!
//! The generator encodes the face with two stride-2 convolutions, joins the
//! noise vector to every spatial location and mixes them with a 1×1
//! convolution (a fully connected layer applied per location), then decodes
//! with two stride-2 transposed convolutions and a 3×3 RGB head. The literal
//! flatten-and-concatenate variant is available for small images through
//! [`SkinGanConfig::literal_fc`].

use biasforge_autograd::{grad, AdamConfig, AdamState, Conv2d, ConvGeom, ConvTranspose2d, Linear, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment, AugmentConfig};
use crate::image::{from_model_range, resize_bilinear, to_model_range, Image, RangeTag};
use crate::nets::{finite_or, images_to_tensor, normal_tensor, optimize, step_rng, tensor_to_images, NetError};

/// Largest image side the literal fully connected path accepts.
pub const LITERAL_FC_MAX_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkinArch {
    pub encoder: [usize; 2],
    pub fc: usize,
    pub decoder: [usize; 2],
    pub critic: [usize; 2],
}

impl Default for SkinArch {
    fn default() -> Self {
        SkinArch {
            encoder: [32, 64],
            fc: 128,
            decoder: [64, 32],
            critic: [32, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinGanConfig {
    pub image_size: usize,
    pub z_dim: usize,
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub lr_critic: f64,
    pub lr_generator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub literal_fc: bool,
    pub augment: AugmentConfig,
    pub arch: SkinArch,
}

impl Default for SkinGanConfig {
    fn default() -> Self {
        SkinGanConfig {
            image_size: 128,
            z_dim: 64,
            lambda_gp: 10.0,
            n_critic: 5,
            lr_critic: 1e-4,
            lr_generator: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            batch_size: 64,
            seed: 0,
            literal_fc: false,
            augment: AugmentConfig::default(),
            arch: SkinArch::default(),
        }
    }
}

impl SkinGanConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.image_size < 4 || !self.image_size.is_multiple_of(4) {
            return bad("skin.image_size must be a positive multiple of 4");
        }
        if self.literal_fc && self.image_size > LITERAL_FC_MAX_SIZE {
            return bad("skin.literal_fc supports image sizes up to 16");
        }
        if self.z_dim == 0 {
            return bad("skin.z_dim must be positive");
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return bad("skin.lambda_gp must be finite and nonnegative");
        }
        if !(self.lr_critic > 0.0 && self.lr_generator > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.n_critic == 0 {
            return bad("skin.n_critic must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("skin.batch_size must be at least 2");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

const ENC_SLOPE: f64 = 0.2;

/// 4×4, stride 2, pad 1: halves the spatial extent.
fn down() -> ConvGeom {
    ConvGeom::new(2, 1)
}

#[derive(Clone, Debug)]
enum Mixer {
    PerLocation(Conv2d),
    Literal(Linear),
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamSet,
    image_size: usize,
    z_dim: usize,
    enc: [Conv2d; 2],
    mixer: Mixer,
    fc_channels: usize,
    up: [ConvTranspose2d; 2],
    out: Conv2d,
}

impl Generator {
    pub fn new(cfg: &SkinGanConfig, rng: &mut impl Rng) -> Self {
        let a = cfg.arch;
        let mut params = ParamSet::new();
        let enc = [
            Conv2d::new(&mut params, "g.enc0", 3, a.encoder[0], 4, down(), rng),
            Conv2d::new(&mut params, "g.enc1", a.encoder[0], a.encoder[1], 4, down(), rng),
        ];
        let q = cfg.image_size / 4;
        let mixer = if cfg.literal_fc {
            Mixer::Literal(Linear::new(
                &mut params,
                "g.fc",
                3 * cfg.image_size * cfg.image_size + cfg.z_dim,
                a.fc * q * q,
                rng,
            ))
        } else {
            Mixer::PerLocation(Conv2d::new(
                &mut params,
                "g.fc",
                a.encoder[1] + cfg.z_dim,
                a.fc,
                1,
                ConvGeom::new(1, 0),
                rng,
            ))
        };
        let up = [
            ConvTranspose2d::new(&mut params, "g.up0", a.fc, a.decoder[0], 4, ConvGeom::new(2, 1), rng),
            ConvTranspose2d::new(&mut params, "g.up1", a.decoder[0], a.decoder[1], 4, ConvGeom::new(2, 1), rng),
        ];
        let out = Conv2d::new(&mut params, "g.out", a.decoder[1], 3, 3, ConvGeom::new(1, 1), rng);
        Generator {
            params,
            image_size: cfg.image_size,
            z_dim: cfg.z_dim,
            enc,
            mixer,
            fc_channels: a.fc,
            up,
            out,
        }
    }

    pub fn check_inputs(&self, x: &[usize], z: &[usize]) -> Result<(), NetError> {
        let ok_x = x.len() == 4 && x[1] == 3 && x[2].is_multiple_of(4) && x[3].is_multiple_of(4) && x[2] > 0 && x[3] > 0;
        let literal_ok = !matches!(self.mixer, Mixer::Literal(_)) || (x[2] == self.image_size && x[3] == self.image_size);
        if !ok_x || !literal_ok {
            return Err(NetError::Shape(format!("generator input {x:?} invalid")));
        }
        if z != [x[0], self.z_dim] {
            return Err(NetError::Shape(format!("noise shape {z:?}, expected [{}, {}]", x[0], self.z_dim)));
        }
        Ok(())
    }

    /// `x: [N, 3, H, W]` in model range, `z: [N, z_dim]` → `[N, 3, H, W]` in (−1, 1).
    pub fn forward(&self, vars: &[Var], x: &Var, z: &Var) -> Var {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (qh, qw) = (h / 4, w / 4);
        let mixed = match &self.mixer {
            Mixer::PerLocation(fc) => {
                let mut f = x.clone();
                for c in &self.enc {
                    f = c.forward(vars, &f).leaky_relu(ENC_SLOPE);
                }
                let zmap = z.broadcast_axes(&[n, self.z_dim, qh, qw], &[true, true, false, false]);
                fc.forward(vars, &Var::concat(&[f, zmap], 1))
            }
            Mixer::Literal(fc) => {
                let flat = x.reshape(&[n, 3 * h * w]);
                fc.forward(vars, &Var::concat(&[flat, z.clone()], 1))
                    .reshape(&[n, self.fc_channels, qh, qw])
            }
        };
        let mut y = mixed.relu();
        for u in &self.up {
            y = u.forward(vars, &y).relu();
        }
        self.out.forward(vars, &y).tanh()
    }

    pub fn generate(&self, x: &Tensor, z: &Tensor) -> Result<Tensor, NetError> {
        self.check_inputs(x.shape(), z.shape())?;
        let out = self.forward(&self.params.constants(), &Var::constant(x.clone()), &Var::constant(z.clone()));
        Ok(out.value().clone())
    }

    pub fn uses_literal_fc(&self) -> bool {
        matches!(self.mixer, Mixer::Literal(_))
    }
}

/// Anything that scores a `[N, ...]` batch with one real number per sample.
pub trait CriticNet {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// `[N, ...] → [N]`.
    fn score(&self, vars: &[Var], x: &Var) -> Var;
}

/// Two stride-2 convolutions with leaky ReLU and a linear read-out; no
/// normalization layers.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: ParamSet,
    convs: [Conv2d; 2],
    fc: Linear,
}

pub const CRITIC_SLOPE: f64 = 0.2;

impl Critic {
    pub fn new(cfg: &SkinGanConfig, rng: &mut impl Rng) -> Self {
        let a = cfg.arch;
        let mut params = ParamSet::new();
        let convs = [
            Conv2d::new(&mut params, "d.conv0", 3, a.critic[0], 4, down(), rng),
            Conv2d::new(&mut params, "d.conv1", a.critic[0], a.critic[1], 4, down(), rng),
        ];
        let q = cfg.image_size / 4;
        let fc = Linear::new(&mut params, "d.fc", a.critic[1] * q * q, 1, rng);
        Critic { params, convs, fc }
    }

    pub fn scores(&self, x: &Tensor) -> Tensor {
        self.score(&self.params.constants(), &Var::constant(x.clone())).value().clone()
    }
}

impl CriticNet for Critic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn score(&self, vars: &[Var], x: &Var) -> Var {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(vars, &h).leaky_relu(CRITIC_SLOPE);
        }
        let n = h.shape()[0];
        let flat = h.reshape(&[n, h.value().numel() / n]);
        self.fc.forward(vars, &flat).reshape(&[n])
    }
}

/// `D(x) = w·x + b` over the flattened sample.
#[derive(Clone, Debug)]
pub struct LinearCritic {
    pub params: ParamSet,
}

impl LinearCritic {
    pub fn new(weight: Vec<f64>, bias: f64) -> Self {
        let mut params = ParamSet::new();
        let n = weight.len();
        params.push("w", Tensor::new(vec![n, 1], weight));
        params.push("b", Tensor::new(vec![1], vec![bias]));
        LinearCritic { params }
    }
}

impl CriticNet for LinearCritic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn score(&self, vars: &[Var], x: &Var) -> Var {
        let n = x.shape()[0];
        let flat = x.reshape(&[n, x.value().numel() / n]);
        let y = flat.matmul(&vars[0]);
        y.add(&vars[1].broadcast_axes(&[n, 1], &[false, true])).reshape(&[n])
    }
}

/// Fully connected critic with leaky ReLU hidden layers, for flat or tiny inputs.
///
/// The read-out layer starts at zero. The input gradient is then exactly
/// zero, the penalty has a zero subgradient, and the first updates follow the
/// Wasserstein term alone. A random read-out can start with its slope
/// pointing the wrong way, and in one dimension the penalty's barrier at zero
/// slope then holds the critic in the mirrored optimum.
#[derive(Clone, Debug)]
pub struct MlpCritic {
    pub params: ParamSet,
    layers: Vec<Linear>,
}

impl MlpCritic {
    pub fn new(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let mut c = inputs;
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            layers.push(Linear::new(&mut params, &format!("mlp{i}"), c, h, rng));
            c = h;
        }
        let out = layers[layers.len() - 1];
        for id in [out.weight, out.bias] {
            let t = params.get_mut(id);
            *t = Tensor::zeros(t.shape());
        }
        MlpCritic { params, layers }
    }
}

impl CriticNet for MlpCritic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn score(&self, vars: &[Var], x: &Var) -> Var {
        let n = x.shape()[0];
        let mut h = x.reshape(&[n, x.value().numel() / n]);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(vars, &h);
            if i < last {
                h = h.leaky_relu(CRITIC_SLOPE);
            }
        }
        h.reshape(&[n])
    }
}

/// `x̂ᵢ = εᵢ·xᵢ + (1 − εᵢ)·x'ᵢ` with one ε per sample.
pub fn interpolate(x: &Tensor, x_fake: &Tensor, eps: &[f64]) -> Result<Tensor, NetError> {
    if x.shape() != x_fake.shape() {
        return Err(NetError::Shape(format!("{:?} vs {:?}", x.shape(), x_fake.shape())));
    }
    let n = *x.shape().first().ok_or(NetError::EmptyBatch)?;
    if eps.len() != n {
        return Err(NetError::Shape(format!("{} eps values for batch of {n}", eps.len())));
    }
    if let Some(e) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(NetError::Config(format!("interpolation weight {e} outside [0, 1]")));
    }
    let per = x.numel() / n.max(1);
    let data = x
        .data()
        .iter()
        .zip(x_fake.data())
        .enumerate()
        .map(|(i, (a, b))| {
            let e = eps[i / per];
            e * a + (1.0 - e) * b
        })
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), data))
}

#[derive(Clone, Debug)]
pub struct Penalty {
    /// `λ·mean((‖∇D(x̂ᵢ)‖ − 1)²)`, differentiable in the critic parameters.
    pub value: Var,
    pub grad_norms: Vec<f64>,
}

/// Gradient penalty on interpolates `x_hat`, built through a second-order graph.
pub fn gradient_penalty(
    critic: &dyn CriticNet,
    vars: &[Var],
    x_hat: &Tensor,
    lambda_gp: f64,
) -> Result<Penalty, NetError> {
    let n = *x_hat.shape().first().ok_or(NetError::EmptyBatch)?;
    if n == 0 {
        return Err(NetError::EmptyBatch);
    }
    let xh = Var::param(x_hat.clone());
    let scores = critic.score(vars, &xh);
    let g = grad(&scores.sum(), std::slice::from_ref(&xh)).remove(0);
    if !g.value().is_finite() {
        return Err(NetError::NonFinite {
            step: 0,
            what: "critic input gradient".into(),
        });
    }
    let norms = g.square().sum_per_sample().sqrt();
    let grad_norms = norms.value().data().to_vec();
    let value = norms.add_scalar(-1.0).square().mean().scale(lambda_gp);
    Ok(Penalty { value, grad_norms })
}

/// `mean D(fake) − mean D(real) + gp`.
pub fn wgan_critic_objective(d_real: &Var, d_fake: &Var, gp: &Var) -> Var {
    d_fake.mean().sub(&d_real.mean()).add(gp)
}

/// `−mean D(fake)`.
pub fn wgan_generator_objective(d_fake: &Var) -> Var {
    d_fake.mean().neg()
}

#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub total: Var,
    /// `mean D(real) − mean D(fake)`.
    pub wasserstein: f64,
    pub penalty: f64,
    pub grad_norms: Vec<f64>,
}

pub fn critic_loss(
    critic: &dyn CriticNet,
    vars: &[Var],
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    lambda_gp: f64,
) -> Result<CriticLoss, NetError> {
    if real.shape().first().copied().unwrap_or(0) == 0 {
        return Err(NetError::EmptyBatch);
    }
    let x_hat = interpolate(real, fake, eps)?;
    let pen = gradient_penalty(critic, vars, &x_hat, lambda_gp)?;
    let d_real = critic.score(vars, &Var::constant(real.clone()));
    let d_fake = critic.score(vars, &Var::constant(fake.clone()));
    let wasserstein = d_real.value().sum() / d_real.value().numel() as f64 - d_fake.value().sum() / d_fake.value().numel() as f64;
    Ok(CriticLoss {
        total: wgan_critic_objective(&d_real, &d_fake, &pen.value),
        wasserstein,
        penalty: pen.value.value().item(),
        grad_norms: pen.grad_norms,
    })
}

pub fn generator_loss(critic: &dyn CriticNet, critic_vars: &[Var], fake: &Var) -> Result<Var, NetError> {
    if fake.shape().first().copied().unwrap_or(0) == 0 {
        return Err(NetError::EmptyBatch);
    }
    Ok(wgan_generator_objective(&critic.score(critic_vars, fake)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticStepStats {
    pub loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub mean_grad_norm: f64,
}

/// One Adam update of the critic on a real/fake pair of batches.
pub fn critic_update(
    critic: &mut dyn CriticNet,
    adam: &mut AdamState,
    cfg: &AdamConfig,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    lambda_gp: f64,
) -> Result<CriticStepStats, NetError> {
    let vars = critic.params().vars();
    let loss = critic_loss(&*critic, &vars, real, fake, eps, lambda_gp)?;
    let stats = CriticStepStats {
        loss: loss.total.value().item(),
        wasserstein: loss.wasserstein,
        penalty: loss.penalty,
        mean_grad_norm: loss.grad_norms.iter().sum::<f64>() / loss.grad_norms.len() as f64,
    };
    optimize(&loss.total, &vars, critic.params_mut(), adam, cfg)?;
    Ok(stats)
}

/// Exact 1-D Wasserstein-1 distance between two equal-size empirical samples.
pub fn quantile_w1_1d(a: &[f64], b: &[f64]) -> Result<f64, NetError> {
    if a.len() != b.len() {
        return Err(NetError::Shape(format!("sample counts differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinDiagnostics {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    /// Mean input-gradient norm over this step's critic updates.
    pub grad_norm: f64,
}

/// Full training state. `iteration` counts completed train steps.
#[derive(Clone, Debug)]
pub struct SkinGanTrainer {
    pub cfg: SkinGanConfig,
    pub generator: Generator,
    pub critic: Critic,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    pub iteration: u64,
    pub critic_steps: u64,
    pub generator_steps: u64,
    data: Vec<Image>,
}

impl SkinGanTrainer {
    /// `data` are UNIT-range RGB images; they are resized to the working size.
    pub fn new(cfg: SkinGanConfig, data: &[Image]) -> Result<Self, NetError> {
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
        let generator = Generator::new(&cfg, &mut rng);
        let critic = Critic::new(&cfg, &mut rng);
        Ok(SkinGanTrainer {
            g_adam: AdamState::for_params(&generator.params),
            d_adam: AdamState::for_params(&critic.params),
            cfg,
            generator,
            critic,
            iteration: 0,
            critic_steps: 0,
            generator_steps: 0,
            data,
        })
    }

    fn sample_batch(&self, rng: &mut ChaCha8Rng) -> Result<Tensor, NetError> {
        let batch = (0..self.cfg.batch_size)
            .map(|_| {
                let img = &self.data[rng.gen_range(0..self.data.len())];
                let aug = augment(img, rng.gen(), &self.cfg.augment)?;
                to_model_range(&aug)
            })
            .collect::<Result<Vec<_>, _>>()?;
        images_to_tensor(&batch)
    }

    /// `n_critic` critic updates followed by one generator update.
    pub fn train_step(&mut self) -> Result<SkinDiagnostics, NetError> {
        let step = self.iteration;
        let mut rng = step_rng(self.cfg.seed, step);
        let b = self.cfg.batch_size;
        let d_cfg = AdamConfig::new(self.cfg.lr_critic, self.cfg.adam_beta1, self.cfg.adam_beta2);
        let g_cfg = AdamConfig::new(self.cfg.lr_generator, self.cfg.adam_beta1, self.cfg.adam_beta2);

        let (mut loss_d, mut wasserstein, mut penalty, mut norm_sum) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..self.cfg.n_critic {
            let real = self.sample_batch(&mut rng)?;
            let source = self.sample_batch(&mut rng)?;
            let z = normal_tensor(&[b, self.cfg.z_dim], &mut rng);
            let fake = self.generator.generate(&source, &z)?;
            let eps: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
            let s = critic_update(&mut self.critic, &mut self.d_adam, &d_cfg, &real, &fake, &eps, self.cfg.lambda_gp)
                .map_err(|e| with_step(e, step))?;
            loss_d = finite_or(s.loss, step, "critic loss")?;
            wasserstein = s.wasserstein;
            penalty = s.penalty;
            norm_sum += finite_or(s.mean_grad_norm, step, "critic gradient norm")?;
            self.critic_steps += 1;
        }

        let source = self.sample_batch(&mut rng)?;
        let z = normal_tensor(&[b, self.cfg.z_dim], &mut rng);
        let g_vars = self.generator.params.vars();
        let fake = self.generator.forward(&g_vars, &Var::constant(source), &Var::constant(z));
        let loss = generator_loss(&self.critic, &self.critic.params.constants(), &fake)?;
        let loss_g = finite_or(loss.value().item(), step, "generator loss")?;
        optimize(&loss, &g_vars, &mut self.generator.params, &mut self.g_adam, &g_cfg)
            .map_err(|e| with_step(e.into(), step))?;
        self.generator_steps += 1;
        self.iteration += 1;

        Ok(SkinDiagnostics {
            iteration: self.iteration,
            loss_d,
            loss_g,
            wasserstein,
            penalty,
            grad_norm: norm_sum / self.cfg.n_critic as f64,
        })
    }
}

fn with_step(e: NetError, step: u64) -> NetError {
    match e {
        NetError::NonFinite { what, .. } => NetError::NonFinite { step, what },
        NetError::Autograd(biasforge_autograd::AutogradError::NonFiniteGradient(i)) => NetError::NonFinite {
            step,
            what: format!("gradient of parameter tensor {i}"),
        },
        other => other,
    }
}

/// Recolors one UNIT-range image. The image is resized to the working size,
/// passed through the generator with noise drawn from `z_seed`, and resized
/// back to its original dimensions.
pub fn recolor(generator: &Generator, img: &Image, z_seed: u64) -> Result<Image, NetError> {
    img.require_range(RangeTag::Unit)?;
    let rgb = img.to_rgb();
    let size = generator.image_size;
    let work = to_model_range(&resize_bilinear(&rgb, size, size)?)?;
    let x = images_to_tensor(std::slice::from_ref(&work))?;
    let mut rng = ChaCha8Rng::seed_from_u64(z_seed);
    let z = normal_tensor(&[1, generator.z_dim], &mut rng);
    let y = generator.generate(&x, &z)?;
    let out = tensor_to_images(&y, RangeTag::Model)?.remove(0);
    let unit = from_model_range(&out)?;
    Ok(resize_bilinear(&unit, img.height(), img.width())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(size: usize) -> SkinGanConfig {
        SkinGanConfig {
            image_size: size,
            z_dim: 4,
            batch_size: 2,
            arch: SkinArch {
                encoder: [4, 4],
                fc: 6,
                decoder: [4, 3],
                critic: [3, 4],
            },
            ..SkinGanConfig::default()
        }
    }

    #[test]
    fn generator_shapes_and_range() {
        for size in [16, 32] {
            let cfg = tiny_cfg(size);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let g = Generator::new(&cfg, &mut rng);
            let x = normal_tensor(&[2, 3, size, size], &mut rng).map(f64::tanh);
            let z = normal_tensor(&[2, 4], &mut rng);
            let y = g.generate(&x, &z).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
            assert_eq!(y, g.generate(&x, &z).unwrap());
            assert!(g.generate(&x, &normal_tensor(&[2, 5], &mut rng)).is_err());
        }
    }

    #[test]
    fn default_generator_at_full_size() {
        let cfg = SkinGanConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(&cfg, &mut rng);
        let x = Tensor::zeros(&[1, 3, 128, 128]);
        let z = normal_tensor(&[1, 64], &mut rng);
        assert_eq!(g.generate(&x, &z).unwrap().shape(), &[1, 3, 128, 128]);
    }

    #[test]
    fn literal_path_shapes() {
        let cfg = SkinGanConfig { literal_fc: true, ..tiny_cfg(16) };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::new(&cfg, &mut rng);
        assert!(g.uses_literal_fc());
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let z = normal_tensor(&[2, 4], &mut rng);
        assert_eq!(g.generate(&x, &z).unwrap().shape(), &[2, 3, 16, 16]);
        assert!(SkinGanConfig { literal_fc: true, ..tiny_cfg(32) }.validate().is_err());
    }

    #[test]
    fn critic_scores_per_sample() {
        let cfg = tiny_cfg(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Critic::new(&cfg, &mut rng);
        let one = normal_tensor(&[1, 3, 16, 16], &mut rng);
        let two = Tensor::concat(&[&one, &one, &normal_tensor(&[1, 3, 16, 16], &mut rng)], 0);
        let s = d.scores(&two);
        assert_eq!(s.shape(), &[3]);
        assert_eq!(s.data()[0], s.data()[1]);
        assert!(s.is_finite());
    }

    #[test]
    fn interpolation_endpoints() {
        let x = Tensor::ones(&[2, 1, 2, 2]);
        let f = Tensor::zeros(&[2, 1, 2, 2]);
        assert_eq!(interpolate(&x, &f, &[1.0, 1.0]).unwrap(), x);
        assert_eq!(interpolate(&x, &f, &[0.0, 0.0]).unwrap(), f);
        assert!(interpolate(&x, &f, &[0.25, 0.25]).unwrap().data().iter().all(|&v| v == 0.25));
        assert!(interpolate(&x, &f, &[1.5, 0.0]).is_err());
        assert!(interpolate(&x, &f, &[0.5]).is_err());
    }

    #[test]
    fn linear_critic_penalty_closed_form() {
        let x_hat = Tensor::new(vec![2, 1, 1, 2], vec![0.3, -0.2, 5.0, 1.0]);
        let unit = LinearCritic::new(vec![0.6, 0.8], 0.1);
        let p = gradient_penalty(&unit, &unit.params.vars(), &x_hat, 10.0).unwrap();
        assert!(p.value.value().item().abs() < 1e-12);
        let three = LinearCritic::new(vec![1.8, 2.4], -0.4);
        let p = gradient_penalty(&three, &three.params.vars(), &x_hat, 10.0).unwrap();
        assert!((p.value.value().item() - 40.0).abs() < 1e-9);
        assert!(p.grad_norms.iter().all(|n| (n - 3.0).abs() < 1e-12));
    }

    #[test]
    fn objective_arithmetic() {
        let c = |v: &[f64]| Var::constant(Tensor::new(vec![v.len()], v.to_vec()));
        let l = wgan_critic_objective(&c(&[1.0, 3.0]), &c(&[0.0, 2.0]), &Var::constant(Tensor::scalar(0.4)));
        assert!((l.value().item() + 0.6).abs() < 1e-12);
        assert_eq!(wgan_generator_objective(&c(&[0.0, 2.0])).value().item(), -1.0);
        assert_eq!(wgan_generator_objective(&c(&[0.0, 0.0])).value().item(), 0.0);
        assert_eq!(
            wgan_generator_objective(&c(&[0.5, 2.0])).value().item(),
            wgan_generator_objective(&c(&[0.5, 2.0, 0.5, 2.0])).value().item()
        );
    }

    #[test]
    fn critic_loss_identical_batches_cancel() {
        let cfg = tiny_cfg(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Critic::new(&cfg, &mut rng);
        let x = normal_tensor(&[2, 3, 16, 16], &mut rng);
        let l = critic_loss(&d, &d.params.vars(), &x, &x, &[0.3, 0.7], 0.0).unwrap();
        assert!(l.total.value().item().abs() < 1e-12);
        assert_eq!(l.penalty, 0.0);
        assert!(matches!(
            critic_loss(&d, &d.params.vars(), &Tensor::zeros(&[0, 3, 16, 16]), &Tensor::zeros(&[0, 3, 16, 16]), &[], 1.0),
            Err(NetError::EmptyBatch)
        ));
    }

    #[test]
    fn w1_oracle() {
        assert_eq!(quantile_w1_1d(&[0.5, -1.0], &[-1.0, 0.5]).unwrap(), 0.0);
        assert!((quantile_w1_1d(&[2.0, 3.5, 9.0], &[0.0, 1.5, 7.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(quantile_w1_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(quantile_w1_1d(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn train_step_bookkeeping() {
        let faces: Vec<Image> = (0..4)
            .map(|i| {
                let spec = crate::dataset::SyntheticFaceSpec { seed: i, noise_sigma: 0.02, ..Default::default() };
                crate::dataset::generate_synthetic_face(&spec, 16, 16).unwrap()
            })
            .collect();
        let cfg = SkinGanConfig { n_critic: 2, ..tiny_cfg(16) };
        let mut t = SkinGanTrainer::new(cfg.clone(), &faces).unwrap();
        let before = t.critic.params.clone();
        let g_before = t.generator.params.clone();
        let d = t.train_step().unwrap();
        assert_ne!(t.critic.params, before);
        assert_ne!(t.generator.params, g_before);
        assert_eq!((t.critic_steps, t.generator_steps, t.iteration), (2, 1, 1));
        assert!(d.loss_d.is_finite() && d.loss_g.is_finite());
        let mut again = SkinGanTrainer::new(cfg, &faces).unwrap();
        assert_eq!(again.train_step().unwrap(), d);
    }

    #[test]
    fn recolor_keeps_dimensions() {
        let cfg = tiny_cfg(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Generator::new(&cfg, &mut rng);
        let img = crate::dataset::generate_synthetic_face(&Default::default(), 20, 24).unwrap();
        let out = recolor(&g, &img, 1).unwrap();
        assert_eq!((out.height(), out.width(), out.range()), (20, 24, RangeTag::Unit));
        assert_ne!(out, recolor(&g, &img, 2).unwrap());
    }
}
