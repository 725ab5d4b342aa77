//! Scaled dot-product attention on the tape.

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub struct AttentionOutput {
    /// `[n_q, d_v]`
    pub output: Var,
    /// Row-stochastic `[n_q, n_k]` weights, one per head.
    pub weights: Vec<Var>,
}

/// `softmax(Q·Kᵀ/√d_k)·V` for a single head.
pub fn scaled_dot_product<S: Scalar>(
    tape: &mut Tape<S>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let (nk, dk) = tape.value(k).rows_cols();
    if nk == 0 || tape.value(k).is_empty() {
        return Err(Error::EmptyContext);
    }
    if tape.value(v).rows_cols().0 != nk {
        return Err(Error::dim("keys and values have different row counts"));
    }
    let scores = tape.matmul(q, k, true)?;
    let scaled = tape.scale(scores, S::one() / S::of(dk as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    let out = tape.matmul(weights, v, false)?;
    Ok((out, weights))
}

/// Splits the model width into `heads` equal slices, attends per head and
/// concatenates the head outputs.
pub fn multi_head<S: Scalar>(
    tape: &mut Tape<S>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<AttentionOutput> {
    let (_, d) = tape.value(q).rows_cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "model width {d} is not divisible into {heads} heads"
        )));
    }
    if tape.value(k).rows_cols().0 == 0 || tape.value(k).is_empty() {
        return Err(Error::EmptyContext);
    }
    if heads == 1 {
        let (output, w) = scaled_dot_product(tape, q, k, v)?;
        return Ok(AttentionOutput {
            output,
            weights: vec![w],
        });
    }
    let dk = d / heads;
    let mut output: Option<Var> = None;
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(k, h * dk, dk)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        let (oh, wh) = scaled_dot_product(tape, qh, kh, vh)?;
        weights.push(wh);
        output = Some(match output {
            None => oh,
            Some(acc) => tape.concat_cols(acc, oh)?,
        });
    }
    Ok(AttentionOutput {
        output: output.expect("at least one head"),
        weights,
    })
}
