//! Differentiable primitives, parameter registry and gradient verification.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{
    grad_check, grad_check_strided, relative_error, GradCheckReport, ParamCheck, DEFAULT_EPS,
    DEFAULT_TOLERANCE,
};
pub use params::{Group, Param, ParamId, ParamStore};
pub use tape::{mix_within, Activation, Gradients, Tape, Var};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Evaluates `W·x + b` without recording gradients.
pub fn affine<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let (x, w, b) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.affine(x, w, b)?;
    Ok(tape.value(y).clone())
}

pub fn activation<S: Scalar>(kind: Activation, x: &Tensor<S>) -> Tensor<S> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.activation(kind, v);
    tape.value(y).clone()
}

/// `−log softmax(logits)[label]` together with its gradient `softmax − onehot`.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor<S>, label: usize) -> Result<(S, Tensor<S>)> {
    let mut store = ParamStore::new();
    let id = store.add("logits", Group::Classifier, logits.clone())?;
    let mut tape = Tape::new();
    let z = tape.param(&store, id);
    let ce = tape.cross_entropy(z, &[label])?;
    let loss = tape.sum(ce);
    let grads = tape.backward(loss)?;
    let g = grads.get(id).cloned().expect("registered parameter has a gradient");
    Ok((tape.scalar(loss), g))
}
