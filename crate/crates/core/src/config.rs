//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::curriculum::{CurriculumSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::prmf::{FusionMode, PrmfConfig};
use crate::synthdata::SynthConfig;
use crate::tensor::Precision;

/// Everything a `train`, `eval` or `ablate` run needs, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `None` places the boundaries at `E/3` and `2E/3`.
    pub phases: Option<(usize, usize)>,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub synth: SynthConfig,
    pub precision: Precision,
    pub separate_image_head: bool,
    pub fixed_alpha: f64,
    /// Noise level applied to every text vector by the degraded-text ablation.
    pub degraded_text_level: f64,
    pub disable_text_branch: bool,
    pub disable_visual_branch: bool,
    pub disable_prmf: bool,
    pub disable_curriculum: bool,
    pub disable_confidence: bool,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            phases: None,
            lambda_start: 0.3,
            lambda_end: 1.0,
            synth: SynthConfig::default(),
            precision: Precision::F32,
            separate_image_head: false,
            fixed_alpha: 0.5,
            degraded_text_level: 0.3,
            disable_text_branch: false,
            disable_visual_branch: false,
            disable_prmf: false,
            disable_curriculum: false,
            disable_confidence: false,
            data_dir: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean for {key}: {value:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        let (mut p1, mut p2) = (None, None);
        let mut data_seed = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            let t = &mut cfg.train;
            let s = &mut cfg.synth;
            match key {
                "batch_size" => t.batch_size = parse_num(key, value)?,
                "learning_rate" => t.learning_rate = parse_num(key, value)?,
                "beta1" => t.beta1 = parse_num(key, value)?,
                "beta2" => t.beta2 = parse_num(key, value)?,
                "epsilon" => t.epsilon = parse_num(key, value)?,
                "epochs" => t.epochs = parse_num(key, value)?,
                "seed" => t.seed = parse_num(key, value)?,
                "phase1_end" => p1 = Some(parse_num(key, value)?),
                "phase2_end" => p2 = Some(parse_num(key, value)?),
                "lambda_start" => cfg.lambda_start = parse_num(key, value)?,
                "lambda_end" => cfg.lambda_end = parse_num(key, value)?,
                "lambda_shape" => {
                    if value != "linear" {
                        return Err(Error::Config(format!("unsupported lambda_shape {value:?}")));
                    }
                }
                "samples_per_class" => s.samples_per_class = parse_num(key, value)?,
                "d_i" => s.d_i = parse_num(key, value)?,
                "d_t" => s.d_t = parse_num(key, value)?,
                "image_sep" => s.image_sep = parse_num(key, value)?,
                "image_minor_sep" => s.image_minor_sep = parse_num(key, value)?,
                "text_sep" => s.text_sep = parse_num(key, value)?,
                "text_offset" => s.text_offset = parse_num(key, value)?,
                "sigma" => s.sigma = parse_num(key, value)?,
                "latent_dim" => s.latent_dim = parse_num(key, value)?,
                "noise_rate" => s.noise_rate = parse_num(key, value)?,
                "text_degradation" => s.text_degradation = parse_num(key, value)?,
                "val_fraction" => s.val_fraction = parse_num(key, value)?,
                "data_seed" => data_seed = Some(parse_num(key, value)?),
                "precision" => {
                    cfg.precision = Precision::parse(value)
                        .ok_or_else(|| Error::Config(format!("unknown precision {value:?}")))?
                }
                "separate_image_head" => cfg.separate_image_head = parse_bool(key, value)?,
                "fixed_alpha" => cfg.fixed_alpha = parse_num(key, value)?,
                "degraded_text_level" => cfg.degraded_text_level = parse_num(key, value)?,
                "disable_text_branch" => cfg.disable_text_branch = parse_bool(key, value)?,
                "disable_visual_branch" => cfg.disable_visual_branch = parse_bool(key, value)?,
                "disable_prmf" => cfg.disable_prmf = parse_bool(key, value)?,
                "disable_curriculum" => cfg.disable_curriculum = parse_bool(key, value)?,
                "disable_confidence" => cfg.disable_confidence = parse_bool(key, value)?,
                "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        cfg.synth.seed = data_seed.unwrap_or(cfg.train.seed);
        cfg.phases = match (p1, p2) {
            (None, None) => None,
            (Some(a), Some(b)) => Some((a, b)),
            _ => return Err(Error::Config("phase1_end and phase2_end must be given together".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.disable_text_branch && self.disable_visual_branch {
            return Err(Error::Config(
                "disable_text_branch and disable_visual_branch are mutually exclusive".into(),
            ));
        }
        let fusion_flags = [
            self.disable_text_branch,
            self.disable_visual_branch,
            self.disable_prmf,
            self.disable_confidence,
        ];
        if fusion_flags.iter().filter(|&&f| f).count() > 1 {
            return Err(Error::Config("at most one fusion ablation flag may be set".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_alpha) || !(0.0..=1.0).contains(&self.degraded_text_level) {
            return Err(Error::Config("fixed_alpha and degraded_text_level must lie in [0, 1]".into()));
        }
        if !self.disable_curriculum {
            self.schedule()?;
        }
        Ok(())
    }

    pub fn fusion_mode(&self) -> FusionMode {
        if self.disable_text_branch {
            FusionMode::ImageOnly
        } else if self.disable_visual_branch {
            FusionMode::TextOnly
        } else if self.disable_prmf {
            FusionMode::Concat
        } else if self.disable_confidence {
            FusionMode::FixedAlpha(self.fixed_alpha)
        } else {
            FusionMode::Adaptive
        }
    }

    /// `None` when the curriculum is disabled.
    pub fn schedule(&self) -> Result<Option<CurriculumSchedule>> {
        if self.disable_curriculum {
            return Ok(None);
        }
        let mut s = match self.phases {
            Some((a, b)) => CurriculumSchedule::with_phases(self.train.epochs, a, b)?,
            None => CurriculumSchedule::new(self.train.epochs)?,
        };
        s.lambda_start = self.lambda_start;
        s.lambda_end = self.lambda_end;
        s.validate()?;
        Ok(Some(s))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            prmf: PrmfConfig {
                d_i: self.synth.d_i,
                d_t: self.synth.d_t,
                classes: crate::encoders::NUM_CLASSES,
                fusion: self.fusion_mode(),
                separate_image_head: self.separate_image_head,
            },
            visual: None,
            text: None,
            seed: self.train.seed,
        }
    }

    /// Fully resolved configuration in the format [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let t = &self.train;
        kv("batch_size", &t.batch_size);
        kv("learning_rate", &t.learning_rate);
        kv("beta1", &t.beta1);
        kv("beta2", &t.beta2);
        kv("epsilon", &t.epsilon);
        kv("epochs", &t.epochs);
        kv("seed", &t.seed);
        if let Ok(Some(s)) = self.schedule() {
            kv("phase1_end", &s.p1_end);
            kv("phase2_end", &s.p2_end);
        } else if let Some((a, b)) = self.phases {
            kv("phase1_end", &a);
            kv("phase2_end", &b);
        }
        kv("lambda_start", &self.lambda_start);
        kv("lambda_end", &self.lambda_end);
        kv("lambda_shape", &"linear");
        let s = &self.synth;
        kv("samples_per_class", &s.samples_per_class);
        kv("d_i", &s.d_i);
        kv("d_t", &s.d_t);
        kv("image_sep", &s.image_sep);
        kv("image_minor_sep", &s.image_minor_sep);
        kv("text_sep", &s.text_sep);
        kv("text_offset", &s.text_offset);
        kv("sigma", &s.sigma);
        kv("latent_dim", &s.latent_dim);
        kv("noise_rate", &s.noise_rate);
        kv("text_degradation", &s.text_degradation);
        kv("val_fraction", &s.val_fraction);
        kv("data_seed", &s.seed);
        kv("precision", &self.precision.name());
        kv("separate_image_head", &self.separate_image_head);
        kv("fixed_alpha", &self.fixed_alpha);
        kv("degraded_text_level", &self.degraded_text_level);
        kv("disable_text_branch", &self.disable_text_branch);
        kv("disable_visual_branch", &self.disable_visual_branch);
        kv("disable_prmf", &self.disable_prmf);
        kv("disable_curriculum", &self.disable_curriculum);
        kv("disable_confidence", &self.disable_confidence);
        if let Some(p) = &self.data_dir {
            kv("data_dir", &p.display());
        }
        if let Some(p) = &self.out_dir {
            kv("out_dir", &p.display());
        }
        out
    }
}
