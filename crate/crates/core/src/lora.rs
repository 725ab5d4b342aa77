//! Low-rank adaptation of frozen weight matrices.
//!
//! An adapter keeps a frozen base weight `W0 ∈ R^{d×k}` outside the parameter
//! registry and trains only the factors `B ∈ R^{d×r}` and `A ∈ R^{r×k}`. The
//! effective weight is `W0 + B·A`; there is no extra scaling factor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionOutput};
use crate::diffcore::{Group, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `(trainable, full)` scalar counts for a rank-`r` adapter on a `d×k` weight.
pub fn lora_param_count(d: usize, k: usize, r: usize) -> (usize, usize) {
    debug_assert!(d >= 1 && k >= 1 && r <= d.min(k));
    (r * (d + k), d * k)
}

#[derive(Debug, Clone, Copy)]
struct Factors {
    b: ParamId,
    a: ParamId,
}

#[derive(Debug, Clone)]
pub struct LoraAdapter<S> {
    w0: Tensor<S>,
    factors: Option<Factors>,
    rank: usize,
}

impl<S: Scalar> LoraAdapter<S> {
    /// Wraps `w0` with trainable rank-`rank` factors registered in `store`.
    ///
    /// `B` starts at zero and `A` is drawn from `U(−1/√k, 1/√k)`, so the
    /// adapted weight equals `w0` until the first update.
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        w0: Tensor<S>,
        rank: usize,
        seed: u64,
    ) -> Result<Self> {
        let [d, k] = *w0.shape() else {
            return Err(Error::dim(format!("base weight must be 2-D, got {:?}", w0.shape())));
        };
        if rank == 0 {
            return Err(Error::Config(format!(
                "adapter {name}: a trainable update needs rank ≥ 1"
            )));
        }
        if rank > d.min(k) {
            return Err(Error::Config(format!(
                "adapter {name}: rank {rank} exceeds min({d}, {k})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (k as f64).sqrt();
        let a: Vec<S> = (0..rank * k)
            .map(|_| S::of(rng.random_range(-bound..bound)))
            .collect();
        let b = store.add(format!("{name}.lora_b"), Group::Adapter, Tensor::zeros(&[d, rank]))?;
        let a = store.add(format!("{name}.lora_a"), Group::Adapter, Tensor::new(vec![rank, k], a)?)?;
        Ok(Self {
            w0,
            factors: Some(Factors { b, a }),
            rank,
        })
    }

    /// A rank-0 adapter: the base weight with no trainable update.
    pub fn frozen(w0: Tensor<S>) -> Result<Self> {
        if w0.shape().len() != 2 {
            return Err(Error::dim(format!("base weight must be 2-D, got {:?}", w0.shape())));
        }
        Ok(Self {
            w0,
            factors: None,
            rank: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn base(&self) -> &Tensor<S> {
        &self.w0
    }

    /// `(d, k)`
    pub fn dims(&self) -> (usize, usize) {
        (self.w0.shape()[0], self.w0.shape()[1])
    }

    pub fn b(&self) -> Option<ParamId> {
        self.factors.map(|f| f.b)
    }

    pub fn a(&self) -> Option<ParamId> {
        self.factors.map(|f| f.a)
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        self.factors.map(|f| vec![f.b, f.a]).unwrap_or_default()
    }

    pub fn trainable_count(&self, store: &ParamStore<S>) -> usize {
        self.trainable_params()
            .into_iter()
            .map(|id| store.get(id).len())
            .sum()
    }

    /// Records `x·(W0 + B·A)ᵀ` as `x·W0ᵀ + (x·Aᵀ)·Bᵀ` for `x` of shape `[k]` or `[n, k]`.
    pub fn apply(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let (d, k) = self.dims();
        let xv = tape.value(x);
        let (rows, cols) = xv.rows_cols();
        if cols != k || xv.shape().len() > 2 {
            return Err(Error::dim(format!(
                "adapter expects inputs of width {k}, got {:?}",
                xv.shape()
            )));
        }
        let vector_in = xv.shape().len() == 1;
        let x2 = if vector_in { tape.reshape(x, &[1, k])? } else { x };
        let w0 = tape.constant(self.w0.clone());
        let mut y = tape.matmul(x2, w0, true)?;
        if let Some(f) = self.factors {
            let (a, b) = (tape.param(store, f.a), tape.param(store, f.b));
            let ax = tape.matmul(x2, a, true)?;
            let bax = tape.matmul(ax, b, true)?;
            y = tape.add(y, bax)?;
        }
        if vector_in {
            y = tape.reshape(y, &[d])?;
        }
        debug_assert_eq!(tape.value(y).len(), rows * d);
        Ok(y)
    }

    /// Dense `W0 + B·A`; the adapter is left untouched.
    pub fn merge(&self, store: &ParamStore<S>) -> Result<Tensor<S>> {
        let Some(f) = self.factors else {
            return Ok(self.w0.clone());
        };
        let ba = store.get(f.b).matmul(store.get(f.a), false)?;
        self.w0.zip_map(&ba, |w, u| w + u)
    }
}

/// Evaluates the adapted map on `x` without recording gradients.
pub fn lora_apply<S: Scalar>(
    adapter: &LoraAdapter<S>,
    store: &ParamStore<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = adapter.apply(&mut tape, store, xv)?;
    Ok(tape.value(y).clone())
}

pub fn merge_adapter<S: Scalar>(adapter: &LoraAdapter<S>, store: &ParamStore<S>) -> Result<Tensor<S>> {
    adapter.merge(store)
}

/// Attention block whose query, key and value projections carry low-rank adapters
/// over frozen `d×d` weights.
#[derive(Debug, Clone)]
pub struct CrossModalAttentionParams<S> {
    pub q: LoraAdapter<S>,
    pub k: LoraAdapter<S>,
    pub v: LoraAdapter<S>,
    pub heads: usize,
}

impl<S: Scalar> CrossModalAttentionParams<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        weights: [Tensor<S>; 3],
        rank: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        let [wq, wk, wv] = weights;
        let d = wq.shape().first().copied().unwrap_or(0);
        for w in [&wq, &wk, &wv] {
            if w.shape() != [d, d] {
                return Err(Error::dim(format!(
                    "attention projections must be square {d}×{d}, got {:?}",
                    w.shape()
                )));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible into {heads} heads")));
        }
        Ok(Self {
            q: LoraAdapter::new(store, "attn.q", wq, rank, seed)?,
            k: LoraAdapter::new(store, "attn.k", wk, rank, seed.wrapping_add(1))?,
            v: LoraAdapter::new(store, "attn.v", wv, rank, seed.wrapping_add(2))?,
            heads,
        })
    }

    /// Random frozen projections with entries from `U(−1/√d, 1/√d)`.
    pub fn random(store: &mut ParamStore<S>, d: usize, rank: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a77e);
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = || {
            Tensor::new(
                vec![d, d],
                (0..d * d).map(|_| S::of(rng.random_range(-bound..bound))).collect(),
            )
        };
        let weights = [w()?, w()?, w()?];
        Self::new(store, weights, rank, heads, seed)
    }

    pub fn head_dim(&self) -> usize {
        self.q.dims().0 / self.heads
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v]
            .iter()
            .flat_map(|a| a.trainable_params())
            .collect()
    }

    /// The trainable update `{B_m·A_m : m ∈ q, k, v}`.
    pub fn update(&self, store: &ParamStore<S>) -> Result<[Tensor<S>; 3]> {
        let delta = |a: &LoraAdapter<S>| -> Result<Tensor<S>> {
            let merged = a.merge(store)?;
            merged.zip_map(a.base(), |m, w| m - w)
        };
        Ok([delta(&self.q)?, delta(&self.k)?, delta(&self.v)?])
    }
}

/// Queries from `v` (`[n_v, d]`), keys and values from `t` (`[n_t, d]`), through
/// the adapted projections; returns `[n_v, d]`.
pub fn cross_modal_attention<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &CrossModalAttentionParams<S>,
    v: Var,
    t: Var,
) -> Result<AttentionOutput> {
    if tape.value(t).is_empty() {
        return Err(Error::EmptyContext);
    }
    let q = params.q.apply(tape, store, v)?;
    let k = params.k.apply(tape, store, t)?;
    let val = params.v.apply(tape, store, t)?;
    attention::multi_head(tape, q, k, val, params.heads)
}
