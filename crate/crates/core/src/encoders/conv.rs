use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Group, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Zero-mean Gaussian weights with variance `2 / (9·c_in)` for a 3×3 kernel,
/// drawn deterministically from `seed`. Dense layers use [`init_dense_weights`].
pub fn init_conv_weights<S: Scalar>(shape: &[usize], c_in: usize, seed: u64) -> Result<Tensor<S>> {
    if c_in == 0 {
        return Err(Error::Config("convolution needs at least one input channel".into()));
    }
    gaussian(shape, 2.0 / (9.0 * c_in as f64), seed)
}

/// Fan-in variant of [`init_conv_weights`]: variance `2 / fan_in`.
pub fn init_dense_weights<S: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor<S>> {
    if fan_in == 0 {
        return Err(Error::Config("dense layer needs a positive fan-in".into()));
    }
    gaussian(shape, 2.0 / fan_in as f64, seed)
}

pub(crate) fn gaussian<S: Scalar>(shape: &[usize], variance: f64, seed: u64) -> Result<Tensor<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::Config(format!("invalid init variance {variance}: {e}")))?;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| S::of(normal.sample(&mut rng))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    /// Output channels of each conv stage; every stage is conv3×3 → ReLU → maxpool2×2.
    pub channels: Vec<usize>,
    pub out_dim: usize,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: vec![8, 16],
            out_dim: 512,
        }
    }
}

/// Stacked 3×3 convolutions with ReLU and 2×2 max pooling, then global average
/// pooling and an affine map to `out_dim`.
#[derive(Debug, Clone)]
pub struct ToyConvEncoder {
    pub config: ConvEncoderConfig,
    stages: Vec<(ParamId, ParamId)>,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl ToyConvEncoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: ConvEncoderConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.in_channels == 0 || config.out_dim == 0 {
            return Err(Error::Config(format!("invalid conv encoder config {config:?}")));
        }
        let mut stages = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_channels;
        for (l, &c_out) in config.channels.iter().enumerate() {
            let w = init_conv_weights(&[c_out, c_in, 3, 3], c_in, seed.wrapping_add(l as u64))?;
            let w = store.add(format!("visual.conv{l}.weight"), Group::VisualEncoder, w)?;
            let b = store.add(format!("visual.conv{l}.bias"), Group::VisualEncoder, Tensor::zeros(&[c_out]))?;
            stages.push((w, b));
            c_in = c_out;
        }
        let pw = init_dense_weights(&[config.out_dim, c_in], c_in, seed.wrapping_add(101))?;
        let proj_w = store.add("visual.proj.weight", Group::VisualEncoder, pw)?;
        let proj_b = store.add("visual.proj.bias", Group::VisualEncoder, Tensor::zeros(&[config.out_dim]))?;
        Ok(Self {
            config,
            stages,
            proj_w,
            proj_b,
        })
    }

    pub fn min_spatial(&self) -> usize {
        1 << self.stages.len()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.stages
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .chain([self.proj_w, self.proj_b])
            .collect()
    }

    pub fn stage_params(&self, stage: usize) -> Option<(ParamId, ParamId)> {
        self.stages.get(stage).copied()
    }

    /// `images`: `[batch, c, h, w]` → `[batch, out_dim]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, images: Var) -> Result<Var> {
        let shape = tape.value(images).shape().to_vec();
        let [_, c, h, w] = shape[..] else {
            return Err(Error::dim(format!("images must be [batch, c, h, w], got {shape:?}")));
        };
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let min = self.min_spatial();
        if h < min || w < min {
            return Err(Error::dim(format!(
                "spatial size {h}×{w} below the {min}×{min} needed for {} pooling stages",
                self.stages.len()
            )));
        }
        let mut x = images;
        for &(wid, bid) in &self.stages {
            let (wv, bv) = (tape.param(store, wid), tape.param(store, bid));
            let y = tape.conv2d(x, wv, bv)?;
            let y = tape.relu(y);
            x = tape.max_pool2(y)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let (pw, pb) = (tape.param(store, self.proj_w), tape.param(store, self.proj_b));
        tape.affine(pooled, pw, pb)
    }
}

/// Encodes one `[c, h, w]` image into its `out_dim` feature vector.
pub fn conv_encode<S: Scalar>(enc: &ToyConvEncoder, store: &ParamStore<S>, image: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::dim(format!("image must be [c, h, w], got {shape:?}")));
    }
    let mut tape = Tape::new();
    let x = tape.constant(image.clone().reshape(&[1, shape[0], shape[1], shape[2]])?);
    let y = enc.forward(&mut tape, store, x)?;
    tape.value(y).clone().reshape(&[enc.config.out_dim])
}
