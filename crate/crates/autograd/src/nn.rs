//! Parameter storage, the handful of layers the models are built from, and Adam.

use rand::Rng;

use crate::tensor::{ConvGeom, Tensor};
use crate::var::Var;
use crate::AutogradError;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Graph leaves that gradients can be taken with respect to.
    pub fn vars(&self) -> Vec<Var> {
        self.tensors.iter().cloned().map(Var::param).collect()
    }

    /// Graph leaves frozen as constants.
    pub fn constants(&self) -> Vec<Var> {
        self.tensors.iter().cloned().map(Var::constant).collect()
    }

    /// Replace every tensor, keeping names; shapes must match.
    pub fn assign(&mut self, tensors: Vec<Tensor>) -> Result<(), AutogradError> {
        if tensors.len() != self.tensors.len() {
            return Err(AutogradError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&tensors).enumerate() {
            if old.shape() != new.shape() {
                return Err(AutogradError::ShapeMismatch(format!(
                    "parameter {} ({}) has shape {:?}, got {:?}",
                    i,
                    self.names[i],
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crate::codec::encode(self.names.iter().map(String::as_str).zip(&self.tensors))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutogradError> {
        let (names, tensors) = crate::codec::decode(bytes)?.into_iter().unzip();
        Ok(ParamSet { names, tensors })
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Adds a per-channel bias to a `[N, C, ...]` tensor.
pub fn add_channel_bias(x: &Var, bias: &Var) -> Var {
    let mut keep = vec![false; x.shape().len()];
    keep[1] = true;
    x.add(&bias.broadcast_axes(x.shape(), &keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        let weight = params.push(
            format!("{name}.weight"),
            uniform(&[out_channels, in_channels, kernel, kernel], bound, rng),
        );
        let bias = params.push(format!("{name}.bias"), uniform(&[out_channels], bound, rng));
        Conv2d {
            weight,
            bias,
            kernel,
            geom,
        }
    }

    pub fn forward(&self, vars: &[Var], x: &Var) -> Var {
        let y = x.conv2d(&vars[self.weight.0], self.geom);
        add_channel_bias(&y, &vars[self.bias.0])
    }

    pub fn out_len(&self, input: usize) -> Option<usize> {
        self.geom.out_len(input, self.kernel)
    }
}

/// Transposed convolution; output extent is `(in - 1)·stride − 2·pad + kernel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((out_channels * kernel * kernel) as f64).sqrt();
        let weight = params.push(
            format!("{name}.weight"),
            uniform(&[in_channels, out_channels, kernel, kernel], bound, rng),
        );
        let bias = params.push(format!("{name}.bias"), uniform(&[out_channels], bound, rng));
        ConvTranspose2d {
            weight,
            bias,
            kernel,
            geom,
        }
    }

    pub fn out_len(&self, input: usize) -> usize {
        (input - 1) * self.geom.stride + self.kernel - 2 * self.geom.pad
    }

    pub fn forward(&self, vars: &[Var], x: &Var) -> Var {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let y = x.conv_transpose2d(&vars[self.weight.0], self.out_len(h), self.out_len(w), self.geom);
        add_channel_bias(&y, &vars[self.bias.0])
    }
}

/// Fully connected layer on `[N, in]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = params.push(format!("{name}.weight"), uniform(&[inputs, outputs], bound, rng));
        let bias = params.push(format!("{name}.bias"), uniform(&[outputs], bound, rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, vars: &[Var], x: &Var) -> Var {
        let y = x.matmul(&vars[self.weight.0]);
        add_channel_bias(&y, &vars[self.bias.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let step = Tensor::scalar(self.step as f64);
        let items = std::iter::once(("step", &step))
            .chain(self.m.iter().map(|t| ("m", t)))
            .chain(self.v.iter().map(|t| ("v", t)));
        crate::codec::encode(items)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutogradError> {
        let items = crate::codec::decode(bytes)?;
        let mut iter = items.into_iter();
        let step = match iter.next() {
            Some((name, t)) if name == "step" && t.numel() == 1 => t.item() as u64,
            _ => return Err(AutogradError::Decode("missing Adam step counter".into())),
        };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in iter {
            match name.as_str() {
                "m" => m.push(t),
                "v" => v.push(t),
                other => return Err(AutogradError::Decode(format!("unexpected Adam entry {other:?}"))),
            }
        }
        if m.len() != v.len() {
            return Err(AutogradError::Decode("Adam moment counts differ".into()));
        }
        Ok(AdamState { m, v, step })
    }
}

/// One bias-corrected Adam step applied in place.
pub fn adam_update(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutogradError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutogradError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(AutogradError::ShapeMismatch(format!(
                "adam: parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(AutogradError::NonFiniteGradient(i));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
