use std::collections::HashMap;

use crate::param::{ParamId, ParamStore};
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Adam with per-parameter step counters and bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<ParamId, Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient and for which
    /// `lr_for` yields a rate. Parameters mapped to `None` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr_for: impl Fn(ParamId) -> Option<f64>) {
        let mut ids: Vec<ParamId> = grads.params().map(|(id, _)| id).collect();
        ids.sort();
        for id in ids {
            let Some(lr) = lr_for(id) else { continue };
            let g = grads.param(id).expect("gradient present");
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - self.beta1.powi(st.t as i32);
            let bc2 = 1.0 - self.beta2.powi(st.t as i32);
            let w = store.get_mut(id);
            for (((wv, gv), mv), vv) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.data_mut())
                .zip(st.v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *wv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn steps_taken(&self, id: ParamId) -> u64 {
        self.state.get(&id).map_or(0, |s| s.t)
    }
}
