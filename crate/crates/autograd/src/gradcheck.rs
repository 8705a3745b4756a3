//! Central finite-difference checks for tape gradients.

use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison over a set of coordinates.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `|a - n|_2 / max(|a|_2, |n|_2)` over all checked coordinates.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = self.analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = self.numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    pub fn len(&self) -> usize {
        self.analytic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.analytic.is_empty()
    }
}

/// Evenly spaced coordinate subset of a tensor with `len` elements.
fn coordinates(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..max).map(|i| i * len / max + (i * 7919) % (len / max).max(1)).collect();
    out.dedup();
    out
}

/// Compares tape gradients of `f` with central differences for up to
/// `per_param` coordinates of each parameter in `ids`.
pub fn check_params<F>(store: &mut ParamStore, ids: &[ParamId], per_param: usize, eps: f64, f: F) -> GradCheck
where
    F: for<'a> Fn(&'a Tape, &'a ParamStore) -> Var<'a>,
{
    let mut analytic = Vec::new();
    {
        let tape = Tape::new();
        let loss = f(&tape, store);
        let grads = tape.backward(loss);
        for &id in ids {
            let len = store.get(id).len();
            let zero = Tensor::zeros(store.get(id).shape());
            let g = grads.param(id).unwrap_or(&zero);
            analytic.extend(coordinates(len, per_param).into_iter().map(|i| g.data()[i]));
        }
    }
    let eval = |store: &ParamStore| {
        let tape = Tape::new();
        f(&tape, store).item()
    };
    let mut numeric = Vec::new();
    for &id in ids {
        for i in coordinates(store.get(id).len(), per_param) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    GradCheck { analytic, numeric }
}

/// Same comparison for the gradient with respect to an input tensor.
pub fn check_input<F>(input: &Tensor, max_coords: usize, eps: f64, f: F) -> GradCheck
where
    F: for<'a> Fn(&'a Tape, Var<'a>) -> Var<'a>,
{
    let coords = coordinates(input.len(), max_coords);
    let tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let grads = tape.backward(f(&tape, x));
    let g = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let analytic = coords.iter().map(|&i| g.data()[i]).collect();
    let eval = |t: Tensor| {
        let tape = Tape::new();
        let x = tape.leaf(t, false);
        f(&tape, x).item()
    };
    let numeric = coords
        .iter()
        .map(|&i| {
            let mut p = input.clone();
            p.data_mut()[i] += eps;
            let mut m = input.clone();
            m.data_mut()[i] -= eps;
            (eval(p) - eval(m)) / (2.0 * eps)
        })
        .collect();
    GradCheck { analytic, numeric }
}
