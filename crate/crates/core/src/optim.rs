//! Adam with bias correction.

use crate::diffcore::{Gradients, Group, ParamStore};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: i32,
}

/// Per-parameter first/second moment state. Each parameter keeps its own step
/// counter, which only advances when that parameter is actually updated.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    config: AdamConfig,
    state: Vec<Option<Moments<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Applies one update to every parameter that has a gradient and whose group
    /// passes `trainable`. Returns the number of tensors updated.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        grads: &Gradients<S>,
        trainable: impl Fn(Group) -> bool,
    ) -> usize {
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        let lr = S::of(self.config.learning_rate);
        let (b1, b2) = (S::of(self.config.beta1), S::of(self.config.beta2));
        let eps = S::of(self.config.epsilon);
        let one = S::one();
        let mut updated = 0;
        let mut ids: Vec<_> = grads.iter().map(|(id, _)| id).collect();
        ids.sort();
        for id in ids {
            if !trainable(store.group(id)) {
                continue;
            }
            let g = grads.get(id).expect("listed gradient");
            let n = g.len();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![S::zero(); n],
                v: vec![S::zero(); n],
                step: 0,
            });
            st.step += 1;
            let bc1 = one - b1.powi(st.step);
            let bc2 = one - b2.powi(st.step);
            let p = store.get_mut(id).data_mut();
            let moments = st.m.iter_mut().zip(st.v.iter_mut());
            for ((pi, &gi), (mi, vi)) in p.iter_mut().zip(g.data()).zip(moments) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
            updated += 1;
        }
        updated
    }
}
