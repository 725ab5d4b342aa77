//! Confidence-gated fusion of image and text features.
//!
//! The image feature `I` is projected into the text space (`I' = W_proj·I + b_proj`),
//! a confidence network reads the raw concatenation `[I; T]` and emits
//! `α = σ(W_conf·[I; T] + b_conf)`, and the fused feature is
//! `F = α·T + (1 − α)·I'`. A classifier head maps `F` (and `I'`, for the
//! image-only loss term) to class logits.

use crate::diffcore::{mix_within, Group, ParamId, ParamStore, Tape, Var};
use crate::encoders::init_dense_weights;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the two modality features are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    /// Learned per-sample confidence gate.
    Adaptive,
    /// Constant text weight; the confidence network is unused.
    FixedAlpha(f64),
    /// `W_cat·[I'; T] + b_cat` instead of a convex combination.
    Concat,
    /// Classifier sees only `I'`.
    ImageOnly,
    /// Classifier sees only `T`.
    TextOnly,
}

impl FusionMode {
    pub fn uses_image(self) -> bool {
        !matches!(self, FusionMode::TextOnly)
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, FusionMode::ImageOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrmfConfig {
    pub d_i: usize,
    pub d_t: usize,
    pub classes: usize,
    pub fusion: FusionMode,
    /// Use a separate head for the image-only logits instead of sharing the fused head.
    pub separate_image_head: bool,
}

impl Default for PrmfConfig {
    fn default() -> Self {
        Self {
            d_i: 512,
            d_t: 768,
            classes: 3,
            fusion: FusionMode::Adaptive,
            separate_image_head: false,
        }
    }
}

impl PrmfConfig {
    /// Whether the fused feature is `α·T + (1 − α)·I'` for some `α`.
    pub fn fusion_is_convex(&self) -> bool {
        matches!(self.fusion, FusionMode::Adaptive | FusionMode::FixedAlpha(_))
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles of the fusion block and its classifier.
#[derive(Debug, Clone)]
pub struct PrmfParams {
    pub config: PrmfConfig,
    proj: Head,
    conf: Head,
    cls: Head,
    image_head: Option<Head>,
    concat: Option<Head>,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PrmfVars {
    pub projected: Option<Var>,
    /// `[batch]` (or `[1]`) text weights; absent when fusion is not convex.
    pub alpha: Option<Var>,
    pub fused: Var,
    pub fused_logits: Var,
    pub image_logits: Var,
}

/// Concrete values of a forward pass on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PrmfOutput<S> {
    pub projected: Tensor<S>,
    pub fused: Tensor<S>,
    pub alpha: S,
    pub fused_logits: Tensor<S>,
    pub image_logits: Tensor<S>,
}

impl PrmfParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: PrmfConfig, seed: u64) -> Result<Self> {
        let PrmfConfig { d_i, d_t, classes, .. } = config;
        if d_i == 0 || d_t == 0 || classes < 2 {
            return Err(Error::Config(format!("invalid fusion config {config:?}")));
        }
        if let FusionMode::FixedAlpha(a) = config.fusion {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Domain(format!("fixed text weight {a} outside [0, 1]")));
            }
        }
        let proj = Head {
            w: store.add("prmf.proj.weight", Group::Projection, init_dense_weights(&[d_t, d_i], d_i, seed)?)?,
            b: store.add("prmf.proj.bias", Group::Projection, Tensor::zeros(&[d_t]))?,
        };
        let conf = Head {
            w: store.add("prmf.conf.weight", Group::Confidence, Tensor::zeros(&[1, d_i + d_t]))?,
            b: store.add("prmf.conf.bias", Group::Confidence, Tensor::zeros(&[1]))?,
        };
        let cls = Head {
            w: store.add(
                "classifier.weight",
                Group::Classifier,
                init_dense_weights(&[classes, d_t], d_t, seed.wrapping_add(1))?,
            )?,
            b: store.add("classifier.bias", Group::Classifier, Tensor::zeros(&[classes]))?,
        };
        let image_head = if config.separate_image_head {
            Some(Head {
                w: store.add(
                    "classifier.image.weight",
                    Group::Classifier,
                    init_dense_weights(&[classes, d_t], d_t, seed.wrapping_add(2))?,
                )?,
                b: store.add("classifier.image.bias", Group::Classifier, Tensor::zeros(&[classes]))?,
            })
        } else {
            None
        };
        let concat = if config.fusion == FusionMode::Concat {
            Some(Head {
                w: store.add(
                    "prmf.concat.weight",
                    Group::Confidence,
                    init_dense_weights(&[d_t, 2 * d_t], 2 * d_t, seed.wrapping_add(3))?,
                )?,
                b: store.add("prmf.concat.bias", Group::Confidence, Tensor::zeros(&[d_t]))?,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            proj,
            conf,
            cls,
            image_head,
            concat,
        })
    }

    pub fn projection(&self) -> (ParamId, ParamId) {
        (self.proj.w, self.proj.b)
    }

    pub fn confidence_net(&self) -> (ParamId, ParamId) {
        (self.conf.w, self.conf.b)
    }

    pub fn classifier(&self) -> (ParamId, ParamId) {
        (self.cls.w, self.cls.b)
    }

    /// Parameters the configured fusion mode actually reads.
    pub fn active_params(&self) -> Vec<ParamId> {
        let mode = self.config.fusion;
        let mut v = Vec::new();
        if mode.uses_image() {
            v.extend([self.proj.w, self.proj.b]);
        }
        if mode == FusionMode::Adaptive {
            v.extend([self.conf.w, self.conf.b]);
        }
        if let Some(h) = self.concat {
            v.extend([h.w, h.b]);
        }
        v.extend([self.cls.w, self.cls.b]);
        if let (Some(h), true) = (self.image_head, mode.uses_image()) {
            v.extend([h.w, h.b]);
        }
        v
    }

    fn check_width<S: Scalar>(tape: &Tape<S>, v: Var, want: usize, what: &str) -> Result<()> {
        let got = tape.value(v).rows_cols().1;
        if got != want {
            return Err(Error::dim(format!("{what} feature has width {got}, expected {want}")));
        }
        Ok(())
    }

    fn head<S: Scalar>(tape: &mut Tape<S>, store: &ParamStore<S>, h: Head, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, h.w), tape.param(store, h.b));
        tape.affine(x, w, b)
    }

    pub fn project<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, image: Var) -> Result<Var> {
        Self::check_width(tape, image, self.config.d_i, "image")?;
        Self::head(tape, store, self.proj, image)
    }

    /// `σ(W_conf·[I; T] + b_conf)` on the raw image feature.
    pub fn confidence<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, image: Var, text: Var) -> Result<Var> {
        Self::check_width(tape, image, self.config.d_i, "image")?;
        Self::check_width(tape, text, self.config.d_t, "text")?;
        let cat = tape.concat_cols(image, text)?;
        let z = Self::head(tape, store, self.conf, cat)?;
        Ok(tape.sigmoid(z))
    }

    /// Full forward pass on `[batch, d_i]` / `[batch, d_t]` (or single vectors).
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        image: Option<Var>,
        text: Option<Var>,
    ) -> Result<PrmfVars> {
        let mode = self.config.fusion;
        let need = |v: Option<Var>, what: &str| {
            v.ok_or_else(|| Error::Input(format!("fusion mode {mode:?} needs a {what} feature")))
        };
        let projected = if mode.uses_image() {
            Some(self.project(tape, store, need(image, "image")?)?)
        } else {
            None
        };
        if let Some(t) = text {
            Self::check_width(tape, t, self.config.d_t, "text")?;
        }
        let rows = |tape: &Tape<S>, v: Var| tape.value(v).rows_cols().0;
        let (fused, alpha) = match mode {
            FusionMode::Adaptive => {
                let (i, t) = (need(image, "image")?, need(text, "text")?);
                let a = self.confidence(tape, store, i, t)?;
                let p = projected.expect("image branch active");
                (tape.convex_mix(a, t, p)?, Some(a))
            }
            FusionMode::FixedAlpha(w) => {
                let t = need(text, "text")?;
                let p = projected.expect("image branch active");
                let a = tape.constant(Tensor::full(&[rows(tape, t)], S::of(w)));
                (tape.convex_mix(a, t, p)?, Some(a))
            }
            FusionMode::Concat => {
                let t = need(text, "text")?;
                let p = projected.expect("image branch active");
                let cat = tape.concat_cols(p, t)?;
                let h = self.concat.expect("concat head registered");
                (Self::head(tape, store, h, cat)?, None)
            }
            FusionMode::ImageOnly => (projected.expect("image branch active"), None),
            FusionMode::TextOnly => (need(text, "text")?, None),
        };
        let fused_logits = Self::head(tape, store, self.cls, fused)?;
        let image_logits = match (projected, mode) {
            (_, FusionMode::ImageOnly) | (None, _) => fused_logits,
            (Some(p), _) => Self::head(tape, store, self.image_head.unwrap_or(self.cls), p)?,
        };
        Ok(PrmfVars {
            projected,
            alpha,
            fused,
            fused_logits,
            image_logits,
        })
    }
}

/// `I' = W_proj·I + b_proj`.
pub fn project_image<S: Scalar>(params: &PrmfParams, store: &ParamStore<S>, image: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let i = tape.constant(image.clone());
    let p = params.project(&mut tape, store, i)?;
    Ok(tape.value(p).clone())
}

/// Text confidence `α ∈ (0, 1)` for one sample.
pub fn confidence<S: Scalar>(params: &PrmfParams, store: &ParamStore<S>, image: &Tensor<S>, text: &Tensor<S>) -> Result<S> {
    let mut tape = Tape::new();
    let (i, t) = (tape.constant(image.clone()), tape.constant(text.clone()));
    let a = params.confidence(&mut tape, store, i, t)?;
    Ok(tape.scalar(a))
}

/// `F = α·T + (1 − α)·I'`.
pub fn fuse<S: Scalar>(text: &Tensor<S>, projected: &Tensor<S>, alpha: S) -> Result<Tensor<S>> {
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Domain(format!("text weight {alpha} outside [0, 1]")));
    }
    let one_minus = S::one() - alpha;
    text.zip_map(projected, |t, i| mix_within(alpha, one_minus, t, i))
}

/// Forward pass on a single sample.
pub fn forward_prmf<S: Scalar>(
    params: &PrmfParams,
    store: &ParamStore<S>,
    image: &Tensor<S>,
    text: &Tensor<S>,
) -> Result<PrmfOutput<S>> {
    let mut tape = Tape::new();
    let (i, t) = (tape.constant(image.clone()), tape.constant(text.clone()));
    let vars = params.forward(&mut tape, store, Some(i), Some(t))?;
    let projected = vars
        .projected
        .map(|p| tape.value(p).clone())
        .unwrap_or_else(|| Tensor::zeros(&[params.config.d_t]));
    let alpha = vars.alpha.map_or(S::of(f64::NAN), |a| tape.scalar(a));
    Ok(PrmfOutput {
        projected,
        fused: tape.value(vars.fused).clone(),
        alpha,
        fused_logits: tape.value(vars.fused_logits).clone(),
        image_logits: tape.value(vars.image_logits).clone(),
    })
}
