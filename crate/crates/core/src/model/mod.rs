//! U-Net reconstruction and segmentation networks.
//!
//! Both networks share one architecture: `depth` max-pool stages down,
//! `depth` nearest-upsample stages up with concatenated skips, then a 1x1
//! head. The reconstruction head is linear, the segmentation head is read
//! through a sigmoid. Tensor names start with `encoder.`, `decoder.` or
//! `head.`; only `encoder.` tensors move in a transfer.

mod checkpoint;
mod float;
mod layers;
mod loss;
mod unet;

use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::ImageTensor;
use crate::rng;

pub use checkpoint::{from_bytes, read_checkpoint, to_bytes, write_checkpoint, CHECKPOINT_VERSION};
pub use float::Float;
pub use loss::{reconstruction_loss, seg_loss, ReconLoss};
pub use loss::masked_sq_error;
pub(crate) use loss::seg_loss_grad;
pub use unet::{gradient_check, GradCheckReport};
pub(crate) use unet::{backward, forward};

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Relu,
    LeakyRelu,
    /// Smooth everywhere; used for finite-difference gradient checks.
    Tanh,
}

/// Feature normalization between convolutions. Only the identity is
/// implemented: per-image gradients then stay independent of the batch and
/// inference is exactly the training-time forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub out_channels: usize,
    pub nonlinearity: Nonlinearity,
    pub normalization: Normalization,
    /// 3x3 convolutions per encoder/decoder stage.
    pub convs_per_stage: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 16,
            depth: 3,
            out_channels: 1,
            nonlinearity: Nonlinearity::Relu,
            normalization: Normalization::None,
            convs_per_stage: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("net config: {what}")));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be >= 1");
        }
        if self.base_channels == 0 {
            return bad("base_channels must be >= 1");
        }
        if self.depth == 0 || self.depth > 12 {
            return bad("depth must be in 1..=12");
        }
        if self.convs_per_stage == 0 {
            return bad("convs_per_stage must be >= 1");
        }
        Ok(())
    }

    pub fn stage_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial size of the bottleneck feature map for an `h x w` input.
    pub fn deepest_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let f = 1usize << self.depth;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} is not divisible by 2^depth = {f}"
            )));
        }
        Ok((h / f, w / f))
    }

    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.in_channels {
            return Err(Error::invalid(format!(
                "input has {channels} channels, network expects {}",
                self.in_channels
            )));
        }
        self.deepest_size(h, w).map(|_| ())
    }

    pub fn param_count(&self) -> usize {
        layout(self).iter().map(|c| c.cout * c.cin * c.k * c.k + c.cout).sum()
    }
}

/// One convolution of the architecture, in parameter order.
#[derive(Clone, Debug)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub activated: bool,
}

/// Convolutions in parameter order: encoder stages 0..=depth, decoder
/// stages depth-1 down to 0, head. Weight of conv `i` is tensor `2i`, its
/// bias tensor `2i + 1`.
pub(crate) fn layout(cfg: &NetConfig) -> Vec<ConvSpec> {
    let mut convs = Vec::new();
    for level in 0..=cfg.depth {
        let cout = cfg.stage_channels(level);
        for k in 0..cfg.convs_per_stage {
            let cin = match (level, k) {
                (0, 0) => cfg.in_channels,
                (_, 0) => cfg.stage_channels(level - 1),
                _ => cout,
            };
            convs.push(ConvSpec {
                name: format!("encoder.stage{level}.conv{k}"),
                cin,
                cout,
                k: 3,
                activated: true,
            });
        }
    }
    for level in (0..cfg.depth).rev() {
        let cout = cfg.stage_channels(level);
        for k in 0..cfg.convs_per_stage {
            let cin = if k == 0 {
                cfg.stage_channels(level + 1) + cout
            } else {
                cout
            };
            convs.push(ConvSpec {
                name: format!("decoder.stage{level}.conv{k}"),
                cin,
                cout,
                k: 3,
                activated: true,
            });
        }
    }
    convs.push(ConvSpec {
        name: "head".into(),
        cin: cfg.base_channels,
        cout: cfg.out_channels,
        k: 1,
        activated: false,
    });
    convs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameter tensors of one network plus the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    config: NetConfig,
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Float> ModelWeights<T> {
    /// Assemble from named tensors, which must match the layout of `config`
    /// exactly (names, order, shapes) and be finite.
    pub fn from_tensors(config: NetConfig, tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "config implies {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::invalid(format!(
                    "expected tensor `{name}` {shape:?}, found `{got_name}` {:?}",
                    t.shape()
                )));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("tensor `{name}` has non-finite values")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Float>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    let data = t.data.iter().map(|v| U::from_f64(v.to_f64())).collect();
                    (k.clone(), Tensor { shape: t.shape.clone(), data })
                })
                .collect(),
        }
    }

    /// Zero buffers shaped like every tensor, in parameter order.
    pub(crate) fn zero_grads(&self) -> Vec<Vec<T>> {
        self.tensors.values().map(|t| vec![T::ZERO; t.len()]).collect()
    }

    pub(crate) fn slot(&self, i: usize) -> &[T] {
        &self.tensors[i].data
    }

    pub(crate) fn slot_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.tensors[i].data
    }
}

fn expected_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg)
        .into_iter()
        .flat_map(|c| {
            [
                (format!("{}.weight", c.name), vec![c.cout, c.cin, c.k, c.k]),
                (format!("{}.bias", c.name), vec![c.cout]),
            ]
        })
        .collect()
}

/// Fan-in scaled normal initialization (He for rectifiers, Xavier-style
/// `1/fan_in` for tanh and the linear head); biases start at zero.
pub fn init_weights<T: Float>(config: &NetConfig, seed: u64) -> Result<ModelWeights<T>> {
    config.validate()?;
    let mut tensors = IndexMap::new();
    for (i, conv) in layout(config).into_iter().enumerate() {
        let fan_in = (conv.cin * conv.k * conv.k) as f64;
        let gain = match (conv.activated, config.nonlinearity) {
            (true, Nonlinearity::Relu | Nonlinearity::LeakyRelu) => 2.0,
            _ => 1.0,
        };
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
        let mut rng = rng::rng_from(rng::derive_indexed(seed, "init", i as u64));
        let n = conv.cout * conv.cin * conv.k * conv.k;
        let w: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        tensors.insert(
            format!("{}.weight", conv.name),
            Tensor::new(vec![conv.cout, conv.cin, conv.k, conv.k], w)?,
        );
        tensors.insert(format!("{}.bias", conv.name), Tensor::zeros(vec![conv.cout]));
    }
    ModelWeights::from_tensors(*config, tensors)
}

/// Run the reconstruction network; output has the input's shape.
pub fn reconstruct(masked_image: &ImageTensor, weights: &ModelWeights) -> Result<ImageTensor> {
    let (c, h, w) = masked_image.shape();
    if weights.config().out_channels != c {
        return Err(Error::invalid(format!(
            "reconstruction needs out_channels == input channels ({c}), network has {}",
            weights.config().out_channels
        )));
    }
    let (out, _) = forward(weights, masked_image.data(), h, w)?;
    ImageTensor::new(c, h, w, out)
}

/// Masked reconstruction loss of `weights` on `input` against `target`
/// and its gradient for every weight tensor, in layout order.
pub fn reconstruction_gradients(
    weights: &ModelWeights,
    input: &ImageTensor,
    target: &ImageTensor,
    pixel_mask: &[bool],
) -> Result<(f64, Vec<Tensor>)> {
    let (c, h, w) = input.shape();
    if target.shape() != (c, h, w) || pixel_mask.len() != h * w || weights.config().out_channels != c {
        return Err(Error::invalid("input, target, mask and network channels must agree"));
    }
    let (out, trace) = forward(weights, input.data(), h, w)?;
    let (loss, d_out) = masked_sq_error(&out, target.data(), pixel_mask);
    let mut grads = weights.zero_grads();
    backward(weights, &trace, &d_out, &mut grads, false);
    let tensors = weights
        .tensors()
        .zip(grads)
        .map(|((_, t), g)| Tensor::new(t.shape().to_vec(), g))
        .collect::<Result<_>>()?;
    Ok((loss as f64, tensors))
}

/// Per-pixel lesion probability, shape `(1, H, W)`.
pub fn segment(image: &ImageTensor, weights: &ModelWeights) -> Result<ImageTensor> {
    let (_, h, w) = image.shape();
    if weights.config().out_channels != 1 {
        return Err(Error::invalid("segmentation network must have out_channels == 1"));
    }
    let (logits, _) = forward(weights, image.data(), h, w)?;
    let probs = logits.into_iter().map(sigmoid).collect();
    ImageTensor::new(1, h, w, probs)
}

pub(crate) fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::ZERO {
        T::ONE / (T::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::ONE + e)
    }
}

/// Outcome of copying encoder tensors between networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Transfer<T = f32> {
    pub weights: ModelWeights<T>,
    pub transferred: usize,
    /// Set when the source had no encoder tensors at all.
    pub empty_source: bool,
}

/// Copy every `encoder.` tensor of `pretrained` into `target`. Names and
/// shapes must agree on both sides; otherwise nothing is copied and the
/// error lists every offender, first mismatch first.
pub fn transfer_encoder<T: Float>(pretrained: &ModelWeights<T>, target: &ModelWeights<T>) -> Result<Transfer<T>> {
    let src: Vec<(&str, &Tensor<T>)> = pretrained
        .tensors()
        .filter(|(n, _)| n.starts_with(ENCODER_PREFIX))
        .collect();
    if src.is_empty() {
        log::warn!("transfer source has no encoder tensors; target left unchanged");
        return Ok(Transfer {
            weights: target.clone(),
            transferred: 0,
            empty_source: true,
        });
    }
    let mut offenders = Vec::new();
    for (name, t) in &src {
        match target.get(name) {
            None => offenders.push(format!("{name} (missing in target)")),
            Some(dst) if dst.shape() != t.shape() => offenders.push(format!(
                "{name} (source {:?}, target {:?})",
                t.shape(),
                dst.shape()
            )),
            Some(_) => {}
        }
    }
    for (name, _) in target.tensors().filter(|(n, _)| n.starts_with(ENCODER_PREFIX)) {
        if pretrained.get(name).is_none() {
            offenders.push(format!("{name} (missing in source)"));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Transfer(format!("encoder mismatch: {}", offenders.join(", "))));
    }
    let mut weights = target.clone();
    for (name, t) in &src {
        weights.tensors[*name] = (*t).clone();
    }
    Ok(Transfer {
        weights,
        transferred: src.len(),
        empty_source: false,
    })
}
