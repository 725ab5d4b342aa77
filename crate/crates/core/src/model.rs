//! Complete classifier: optional toy encoders in front of the fusion block.

use crate::diffcore::{grad_check_strided, GradCheckReport, ParamId, ParamStore, Tape};
use crate::encoders::{ConvEncoderConfig, EmbeddingRecord, TextEncoderConfig, ToyConvEncoder, ToyTextEncoder};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::prmf::{PrmfConfig, PrmfParams, PrmfVars};
use crate::tensor::{Scalar, Tensor};

/// One sample before feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub label: usize,
    /// `[channels, height, width]`, row-major.
    pub image: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: Vec<usize>,
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Embedded(Vec<EmbeddingRecord>),
    Raw(Vec<RawSample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Embedded(r) => r.len(),
            Dataset::Raw(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> usize {
        match self {
            Dataset::Embedded(r) => r[i].label,
            Dataset::Raw(r) => r[i].label,
        }
    }

    pub fn noisy(&self, i: usize) -> bool {
        match self {
            Dataset::Embedded(r) => r[i].noisy,
            Dataset::Raw(r) => r[i].noisy,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        match self {
            Dataset::Embedded(r) => Dataset::Embedded(idx.iter().map(|&i| r[i].clone()).collect()),
            Dataset::Raw(r) => Dataset::Raw(idx.iter().map(|&i| r[i].clone()).collect()),
        }
    }
}

fn rows<S: Scalar>(vectors: impl ExactSizeIterator<Item = impl AsRef<[f32]>>, width: usize) -> Result<Tensor<S>> {
    let n = vectors.len();
    let mut data = Vec::with_capacity(n * width);
    for v in vectors {
        let v = v.as_ref();
        if v.len() != width {
            return Err(Error::dim(format!("feature of length {} where {width} expected", v.len())));
        }
        data.extend(v.iter().map(|&x| S::of(f64::from(x))));
    }
    Tensor::new(vec![n, width], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub prmf: PrmfConfig,
    /// Present when the model consumes raw images.
    pub visual: Option<ConvEncoderConfig>,
    /// Present when the model consumes token sequences.
    pub text: Option<TextEncoderConfig>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            prmf: PrmfConfig::default(),
            visual: None,
            text: None,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// End-to-end configuration: both encoders feeding the fusion block.
    pub fn raw(visual: ConvEncoderConfig, text: TextEncoderConfig, classes: usize, seed: u64) -> Self {
        Self {
            prmf: PrmfConfig {
                d_i: visual.out_dim,
                d_t: text.out_dim,
                classes,
                ..PrmfConfig::default()
            },
            visual: Some(visual),
            text: Some(text),
            seed,
        }
    }
}

/// Predictions over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Softmax of the fused logits, one row per sample.
    pub probs: Vec<Vec<f64>>,
    pub preds: Vec<usize>,
    /// Text weight per sample when the fusion is a convex combination.
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FusionModel<S> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub visual: Option<ToyConvEncoder>,
    pub text: Option<ToyTextEncoder>,
    pub prmf: PrmfParams,
}

const EVAL_CHUNK: usize = 256;

impl<S: Scalar> FusionModel<S> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let seed = config.seed;
        let visual = match &config.visual {
            Some(c) => {
                if c.out_dim != config.prmf.d_i {
                    return Err(Error::Config(format!(
                        "visual encoder emits {} features, fusion expects {}",
                        c.out_dim, config.prmf.d_i
                    )));
                }
                Some(ToyConvEncoder::new(&mut store, c.clone(), seed.wrapping_add(1000))?)
            }
            None => None,
        };
        let text = match &config.text {
            Some(c) => {
                if c.out_dim != config.prmf.d_t {
                    return Err(Error::Config(format!(
                        "text encoder emits {} features, fusion expects {}",
                        c.out_dim, config.prmf.d_t
                    )));
                }
                Some(ToyTextEncoder::new(&mut store, c.clone(), seed.wrapping_add(2000))?)
            }
            None => None,
        };
        let prmf = PrmfParams::new(&mut store, config.prmf.clone(), seed)?;
        Ok(Self {
            config,
            store,
            visual,
            text,
            prmf,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.prmf.classes
    }

    /// Records the forward pass of samples `idx` on `tape`, reading parameters from `store`.
    pub fn forward_with(&self, tape: &mut Tape<S>, store: &ParamStore<S>, data: &Dataset, idx: &[usize]) -> Result<PrmfVars> {
        let mode = self.config.prmf.fusion;
        let (d_i, d_t) = (self.config.prmf.d_i, self.config.prmf.d_t);
        let (image, text) = match data {
            Dataset::Embedded(recs) => {
                if self.visual.is_some() || self.text.is_some() {
                    return Err(Error::Input("model with encoders needs raw samples".into()));
                }
                let pick = |f: fn(&EmbeddingRecord) -> &Vec<f32>| idx.iter().map(move |&i| f(&recs[i]));
                let image = if mode.uses_image() {
                    Some(tape.constant(rows(pick(|r| &r.image), d_i)?))
                } else {
                    None
                };
                let text = if mode.uses_text() {
                    Some(tape.constant(rows(pick(|r| &r.text), d_t)?))
                } else {
                    None
                };
                (image, text)
            }
            Dataset::Raw(samples) => {
                let (Some(venc), Some(tenc)) = (&self.visual, &self.text) else {
                    return Err(Error::Input("raw samples need both encoders configured".into()));
                };
                let image = if mode.uses_image() {
                    let first = &samples[*idx.first().ok_or_else(|| Error::Input("empty batch".into()))?];
                    let (c, h, w) = (first.channels, first.height, first.width);
                    let imgs = rows(idx.iter().map(|&i| &samples[i].image), c * h * w)?;
                    let x = tape.constant(imgs.reshape(&[idx.len(), c, h, w])?);
                    Some(venc.forward(tape, store, x)?)
                } else {
                    None
                };
                let text = if mode.uses_text() {
                    let seqs: Vec<Vec<usize>> = idx.iter().map(|&i| samples[i].tokens.clone()).collect();
                    Some(tenc.forward(tape, store, &seqs)?)
                } else {
                    None
                };
                (image, text)
            }
        };
        self.prmf.forward(tape, store, image, text)
    }

    pub fn forward(&self, tape: &mut Tape<S>, data: &Dataset, idx: &[usize]) -> Result<PrmfVars> {
        self.forward_with(tape, &self.store, data, idx)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Predictions> {
        let n = data.len();
        let mut probs = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.forward(&mut tape, data, chunk)?;
            let p = tape.softmax_rows(vars.fused_logits);
            let p = tape.value(p);
            for r in 0..chunk.len() {
                probs.push(p.row(r).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>());
            }
            if let Some(a) = vars.alpha {
                alphas.extend(tape.value(a).to_f64_vec());
            }
        }
        let preds = probs.iter().map(|p| metrics::argmax(p)).collect();
        let alphas = self.config.prmf.fusion_is_convex().then_some(alphas);
        Ok(Predictions { probs, preds, alphas })
    }

    /// Accuracy of fused predictions.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let p = self.predict(data)?;
        let correct = p.preds.iter().enumerate().filter(|&(i, &y)| data.label(i) == y).count();
        Ok(correct as f64 / data.len().max(1) as f64)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<(Predictions, MetricsReport)> {
        let p = self.predict(data)?;
        let report = metrics::report(&p.probs, &data.labels(), self.classes())?;
        Ok((p, report))
    }
}

/// Central-difference check of every parameter of `model` through the
/// curriculum loss at weight `lambda` on samples `data`.
///
/// With `max_coords` set, each tensor is visited with a stride that keeps at
/// most that many coordinates per tensor; otherwise every coordinate is checked.
pub fn grad_check_model(
    model: &mut FusionModel<f64>,
    data: &Dataset,
    lambda: f64,
    eps: f64,
    tolerance: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let labels = data.labels();
    let mut store = std::mem::replace(&mut model.store, ParamStore::new());
    let ids: Vec<ParamId> = store.ids().collect();
    let this = &*model;
    let loss = |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
        let v = this.forward_with(tape, s, data, &idx)?;
        crate::curriculum::total_loss_var(tape, v.fused_logits, v.image_logits, &labels, lambda)
    };
    let mut params = Vec::with_capacity(ids.len());
    let mut outcome = Ok(());
    for id in ids {
        let n = store.get(id).len();
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        match grad_check_strided(&mut store, &[id], eps, tolerance, stride, loss) {
            Ok(r) => params.extend(r.params),
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    model.store = store;
    outcome?;
    let pass = params.iter().all(|p| p.max_rel_error < tolerance);
    Ok(GradCheckReport {
        params,
        eps,
        tolerance,
        pass,
    })
}

/// Inputs for [`full_model_grad_check`]: a small instance of the complete
/// architecture (both encoders, fusion block, separate image head).
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub visual: ConvEncoderConfig,
    pub text: TextEncoderConfig,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seq_len: usize,
    /// Curriculum weight; kept strictly inside (0, 1) so both loss terms contribute.
    pub lambda: f64,
    pub eps: f64,
    pub tolerance: f64,
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            visual: ConvEncoderConfig {
                in_channels: 1,
                channels: vec![4, 8],
                out_dim: 24,
            },
            text: TextEncoderConfig {
                vocab: 16,
                max_len: 10,
                d_model: 8,
                heads: 2,
                out_dim: 32,
                positional: true,
            },
            samples_per_class: 2,
            image_size: 8,
            seq_len: 6,
            lambda: 0.6,
            eps: crate::diffcore::DEFAULT_EPS,
            tolerance: crate::diffcore::DEFAULT_TOLERANCE,
            max_coords: None,
            seed: 7,
        }
    }
}

impl GradCheckSetup {
    /// Default encoder widths, visiting at most `max_coords` coordinates per tensor.
    pub fn default_dims(max_coords: usize) -> Self {
        Self {
            visual: ConvEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            samples_per_class: 1,
            max_coords: Some(max_coords),
            ..Self::default()
        }
    }
}

/// Builds the model and raw samples described by `setup` and checks them.
pub fn full_model_grad_check(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    let mut config = ModelConfig::raw(setup.visual.clone(), setup.text.clone(), crate::encoders::NUM_CLASSES, setup.seed);
    config.prmf.separate_image_head = true;
    let mut model = FusionModel::<f64>::new(config)?;
    let raw = crate::synthdata::generate_raw(&crate::synthdata::RawConfig {
        samples_per_class: setup.samples_per_class,
        image_size: setup.image_size,
        seq_len: setup.seq_len,
        vocab: setup.text.vocab,
        seed: setup.seed,
    })?;
    grad_check_model(&mut model, &Dataset::Raw(raw), setup.lambda, setup.eps, setup.tolerance, setup.max_coords)
}
