//! NBCK: model checkpoint with a text metadata block.
//!
//! ```text
//! "NBCK" | metadata length u32 | metadata (UTF-8) | payload
//! ```
//!
//! The metadata holds `key value` lines describing the model followed by one
//! `tensor <name> <group> <shape>` line per parameter; the payload is every
//! tensor's little-endian values in that order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::Group;
use crate::encoders::{ConvEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::model::{FusionModel, ModelConfig};
use crate::prmf::{FusionMode, PrmfConfig};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"NBCK";
const VERSION: u32 = 1;

/// Hex SHA-256 of a configuration text.
pub fn config_digest(config_text: &str) -> String {
    Sha256::digest(config_text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub precision: Precision,
    pub digest: String,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn fusion_name(mode: FusionMode) -> String {
    match mode {
        FusionMode::Adaptive => "adaptive".into(),
        FusionMode::FixedAlpha(a) => format!("fixed:{a}"),
        FusionMode::Concat => "concat".into(),
        FusionMode::ImageOnly => "image_only".into(),
        FusionMode::TextOnly => "text_only".into(),
    }
}

fn parse_fusion(s: &str) -> Result<FusionMode> {
    Ok(match s {
        "adaptive" => FusionMode::Adaptive,
        "concat" => FusionMode::Concat,
        "image_only" => FusionMode::ImageOnly,
        "text_only" => FusionMode::TextOnly,
        _ => match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(a)) => FusionMode::FixedAlpha(a),
            _ => return Err(Error::Format(format!("unknown fusion mode {s:?}"))),
        },
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn encode_meta(meta: &CheckpointMeta) -> String {
    let mut s = String::new();
    let m = &meta.model;
    let _ = writeln!(s, "version {VERSION}");
    let _ = writeln!(s, "precision {}", meta.precision.name());
    let _ = writeln!(s, "digest {}", meta.digest);
    let _ = writeln!(s, "seed {}", m.seed);
    let _ = writeln!(s, "d_i {}", m.prmf.d_i);
    let _ = writeln!(s, "d_t {}", m.prmf.d_t);
    let _ = writeln!(s, "classes {}", m.prmf.classes);
    let _ = writeln!(s, "fusion {}", fusion_name(m.prmf.fusion));
    let _ = writeln!(s, "separate_image_head {}", m.prmf.separate_image_head);
    match &m.visual {
        Some(v) => {
            let _ = writeln!(s, "visual {} {} {}", v.in_channels, join(&v.channels), v.out_dim);
        }
        None => s.push_str("visual none\n"),
    }
    match &m.text {
        Some(t) => {
            let _ = writeln!(
                s,
                "text {} {} {} {} {} {}",
                t.vocab, t.max_len, t.d_model, t.heads, t.out_dim, t.positional
            );
        }
        None => s.push_str("text none\n"),
    }
    for t in &meta.tensors {
        let _ = writeln!(s, "tensor {} {} {}", t.name, t.group.name(), join(&t.shape));
    }
    s
}

fn bad(line: &str) -> Error {
    Error::Format(format!("malformed checkpoint metadata line {line:?}"))
}

fn num<T: std::str::FromStr>(s: &str, line: &str) -> Result<T> {
    s.parse().map_err(|_| bad(line))
}

fn list(s: &str, line: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| num(x, line)).collect()
}

fn decode_meta(text: &str) -> Result<CheckpointMeta> {
    let mut precision = None;
    let mut digest = String::new();
    let mut prmf = PrmfConfig::default();
    let mut model = ModelConfig::default();
    let mut tensors = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let arg = |i: usize| parts.get(i).copied().ok_or_else(|| bad(line));
        match parts[0] {
            "version" => {
                let v: u32 = num(arg(1)?, line)?;
                if v != VERSION {
                    return Err(Error::UnsupportedVersion(v));
                }
            }
            "precision" => precision = Some(Precision::parse(arg(1)?).ok_or_else(|| bad(line))?),
            "digest" => digest = arg(1)?.to_string(),
            "seed" => model.seed = num(arg(1)?, line)?,
            "d_i" => prmf.d_i = num(arg(1)?, line)?,
            "d_t" => prmf.d_t = num(arg(1)?, line)?,
            "classes" => prmf.classes = num(arg(1)?, line)?,
            "fusion" => prmf.fusion = parse_fusion(arg(1)?)?,
            "separate_image_head" => prmf.separate_image_head = num(arg(1)?, line)?,
            "visual" if arg(1)? == "none" => model.visual = None,
            "visual" => {
                model.visual = Some(ConvEncoderConfig {
                    in_channels: num(arg(1)?, line)?,
                    channels: list(arg(2)?, line)?,
                    out_dim: num(arg(3)?, line)?,
                })
            }
            "text" if arg(1)? == "none" => model.text = None,
            "text" => {
                model.text = Some(TextEncoderConfig {
                    vocab: num(arg(1)?, line)?,
                    max_len: num(arg(2)?, line)?,
                    d_model: num(arg(3)?, line)?,
                    heads: num(arg(4)?, line)?,
                    out_dim: num(arg(5)?, line)?,
                    positional: num(arg(6)?, line)?,
                })
            }
            "tensor" => tensors.push(TensorEntry {
                name: arg(1)?.to_string(),
                group: Group::parse(arg(2)?).ok_or_else(|| bad(line))?,
                shape: list(arg(3)?, line)?,
            }),
            _ => return Err(bad(line)),
        }
    }
    model.prmf = prmf;
    Ok(CheckpointMeta {
        precision: precision.ok_or_else(|| Error::Format("checkpoint metadata lacks precision".into()))?,
        digest,
        model,
        tensors,
    })
}

pub fn encode_checkpoint<S: Scalar>(model: &FusionModel<S>, config_text: &str) -> Vec<u8> {
    let tensors = model
        .store
        .iter()
        .map(|(_, p)| TensorEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
        })
        .collect();
    let meta = CheckpointMeta {
        precision: S::PRECISION,
        digest: config_digest(config_text),
        model: model.config.clone(),
        tensors,
    };
    let text = encode_meta(&meta);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (_, p) in model.store.iter() {
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

fn split(bytes: &[u8]) -> Result<(CheckpointMeta, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected \"NBCK\"".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            found: bytes.len(),
        });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Truncated {
            expected: 8 + len,
            found: bytes.len(),
        });
    }
    let text = std::str::from_utf8(&bytes[8..8 + len])
        .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
    Ok((decode_meta(text)?, &bytes[8 + len..]))
}

/// Reads only the metadata block.
pub fn read_meta(bytes: &[u8]) -> Result<CheckpointMeta> {
    split(bytes).map(|(m, _)| m)
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(FusionModel<S>, CheckpointMeta)> {
    let (meta, payload) = split(bytes)?;
    if meta.precision != S::PRECISION {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {} values, loader expects {}",
            meta.precision.name(),
            S::PRECISION.name()
        )));
    }
    let width = meta.precision.width();
    let expected: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>() * width).sum();
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected: bytes.len() - payload.len() + expected,
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!("{} trailing payload bytes", payload.len() - expected)));
    }
    let mut model = FusionModel::<S>::new(meta.model.clone())?;
    let ids: Vec<_> = model.store.ids().collect();
    if ids.len() != meta.tensors.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint lists {} tensors, model has {}",
            meta.tensors.len(),
            ids.len()
        )));
    }
    let mut at = 0;
    for (id, entry) in ids.into_iter().zip(&meta.tensors) {
        let p = model.store.param(id);
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() || p.group != entry.group {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let data = payload[at..at + n * width].chunks_exact(width).map(S::read_le).collect();
        *model.store.get_mut(id) = Tensor::new(entry.shape.clone(), data)?;
        at += n * width;
    }
    Ok((model, meta))
}

pub fn save_checkpoint<S: Scalar>(path: &Path, model: &FusionModel<S>, config_text: &str) -> Result<()> {
    fs::write(path, encode_checkpoint(model, config_text)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(FusionModel<S>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
