use crate::attention;
use crate::diffcore::{Group, ParamId, ParamStore, Tape, Var};
use crate::encoders::conv::{gaussian, init_dense_weights};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderConfig {
    /// Content symbols; the CLS token takes id `vocab` in the embedding table.
    pub vocab: usize,
    /// Longest accepted sequence, CLS included.
    pub max_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub out_dim: usize,
    pub positional: bool,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            max_len: 32,
            d_model: 32,
            heads: 1,
            out_dim: 768,
            positional: true,
        }
    }
}

/// Token + positional + segment embeddings, one self-attention layer, and an
/// output projection of the CLS position.
#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    pub config: TextEncoderConfig,
    token: ParamId,
    position: Option<ParamId>,
    segment: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl ToyTextEncoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: TextEncoderConfig, seed: u64) -> Result<Self> {
        let d = config.d_model;
        if config.vocab == 0 || d == 0 || config.max_len < 2 || config.out_dim == 0 {
            return Err(Error::Config(format!("invalid text encoder config {config:?}")));
        }
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "d_model {d} not divisible into {} heads",
                config.heads
            )));
        }
        let g = Group::TextEncoder;
        let token = store.add("text.token_embedding", g, gaussian(&[config.vocab + 1, d], 0.25, seed)?)?;
        let position = if config.positional {
            let p = gaussian(&[config.max_len, d], 0.01, seed.wrapping_add(1))?;
            Some(store.add("text.position_embedding", g, p)?)
        } else {
            None
        };
        let segment = store.add("text.segment_embedding", g, gaussian(&[1, d], 0.01, seed.wrapping_add(2))?)?;
        let attn_var = 1.0 / d as f64;
        let w_q = store.add("text.attn.w_q", g, gaussian(&[d, d], attn_var, seed.wrapping_add(3))?)?;
        let w_k = store.add("text.attn.w_k", g, gaussian(&[d, d], attn_var, seed.wrapping_add(4))?)?;
        let w_v = store.add("text.attn.w_v", g, gaussian(&[d, d], attn_var, seed.wrapping_add(5))?)?;
        let out_w = store.add(
            "text.out.weight",
            g,
            init_dense_weights(&[config.out_dim, d], d, seed.wrapping_add(6))?,
        )?;
        let out_b = store.add("text.out.bias", g, Tensor::zeros(&[config.out_dim]))?;
        Ok(Self {
            config,
            token,
            position,
            segment,
            w_q,
            w_k,
            w_v,
            out_w,
            out_b,
        })
    }

    pub fn cls_id(&self) -> usize {
        self.config.vocab
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.token];
        v.extend(self.position);
        v.extend([self.segment, self.w_q, self.w_k, self.w_v, self.out_w, self.out_b]);
        v
    }

    pub fn attention_weights(&self) -> [ParamId; 3] {
        [self.w_q, self.w_k, self.w_v]
    }

    fn ids(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        if tokens.len() + 1 > self.config.max_len {
            return Err(Error::dim(format!(
                "sequence of {} tokens exceeds max length {} (CLS included)",
                tokens.len(),
                self.config.max_len
            )));
        }
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(self.cls_id());
        for &t in tokens {
            if t >= self.config.vocab {
                return Err(Error::Vocabulary {
                    id: t,
                    vocab: self.config.vocab,
                });
            }
            ids.push(t);
        }
        Ok(ids)
    }

    /// Encodes one token sequence (CLS is prepended here) to a `[1, out_dim]` row.
    pub fn forward_one<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, tokens: &[usize]) -> Result<Var> {
        let ids = self.ids(tokens)?;
        let n = ids.len();
        let table = tape.param(store, self.token);
        let mut h = tape.gather_rows(table, &ids)?;
        if let Some(pos) = self.position {
            let pt = tape.param(store, pos);
            let positions: Vec<usize> = (0..n).collect();
            let p = tape.gather_rows(pt, &positions)?;
            h = tape.add(h, p)?;
        }
        let st = tape.param(store, self.segment);
        let s = tape.gather_rows(st, &vec![0; n])?;
        let h = tape.add(h, s)?;

        // Only the CLS query is needed for the pooled representation.
        let cls_in = tape.gather_rows(h, &[0])?;
        let (wq, wk, wv) = (
            tape.param(store, self.w_q),
            tape.param(store, self.w_k),
            tape.param(store, self.w_v),
        );
        let q = tape.matmul(cls_in, wq, true)?;
        let k = tape.matmul(h, wk, true)?;
        let v = tape.matmul(h, wv, true)?;
        let att = attention::multi_head(tape, q, k, v, self.config.heads)?;
        let (ow, ob) = (tape.param(store, self.out_w), tape.param(store, self.out_b));
        tape.affine(att.output, ow, ob)
    }

    /// Encodes a batch of sequences to `[batch, out_dim]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, batch: &[Vec<usize>]) -> Result<Var> {
        let rows = batch
            .iter()
            .map(|tokens| self.forward_one(tape, store, tokens))
            .collect::<Result<Vec<_>>>()?;
        tape.stack_rows(&rows)
    }
}

/// Encodes one token sequence into its `out_dim` feature vector.
pub fn text_encode<S: Scalar>(enc: &ToyTextEncoder, store: &ParamStore<S>, tokens: &[usize]) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let y = enc.forward_one(&mut tape, store, tokens)?;
    tape.value(y).clone().reshape(&[enc.config.out_dim])
}
