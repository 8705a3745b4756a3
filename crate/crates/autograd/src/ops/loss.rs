//! Fused scalar objectives with analytic backward passes.

use crate::tape::Var;
use crate::tensor::{gemm, Tensor};

fn pair_shape(a: &Tensor, b: &Tensor, op: &str) -> (usize, usize) {
    assert!(a.ndim() == 2 && a.shape() == b.shape(), "{op}: shapes {:?} vs {:?}", a.shape(), b.shape());
    (a.shape()[0], a.shape()[1])
}

impl<'t> Var<'t> {
    /// Mean over rows of `log softmax_j(a_i . b_j)` evaluated at `j = i`
    /// (in-batch InfoNCE with inner-product similarity, no temperature).
    /// Always `<= 0`; larger is better.
    pub fn infonce(&self, positives: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), positives.value());
        let (n, d) = pair_shape(&a, &b, "infonce");
        let mut sim = vec![0.0; n * n];
        gemm(n, d, n, 1.0, a.data(), false, b.data(), true, 0.0, &mut sim);
        let mut prob = vec![0.0; n * n];
        let mut total = 0.0;
        for i in 0..n {
            let row = &sim[i * n..(i + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += row[i] - lse;
            for (p, v) in prob[i * n..(i + 1) * n].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let value = Tensor::scalar(total / n as f64);
        self.tape().push(
            value,
            &[*self, positives],
            Box::new(move |args| {
                let g = args.grad.item();
                // dL/dS_ij = g (delta_ij - P_ij) / n
                let mut ds: Vec<f64> = prob.iter().map(|p| -p * g / n as f64).collect();
                for i in 0..n {
                    ds[i * n + i] += g / n as f64;
                }
                let ga = args.needs[0].then(|| {
                    let mut out = vec![0.0; n * d];
                    gemm(n, n, d, 1.0, &ds, false, args.inputs[1].data(), false, 0.0, &mut out);
                    Tensor::from_vec(&[n, d], out).expect("shape")
                });
                let gb = args.needs[1].then(|| {
                    let mut out = vec![0.0; n * d];
                    gemm(n, n, d, 1.0, &ds, true, args.inputs[0].data(), false, 0.0, &mut out);
                    Tensor::from_vec(&[n, d], out).expect("shape")
                });
                vec![ga, gb]
            }),
        )
    }

    /// `(1/n) sum_i |a_i - b_i|^2`: squared distance per row, averaged over rows.
    pub fn mean_row_sq_dist(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (n, _) = pair_shape(&a, &b, "mean_row_sq_dist");
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::scalar(diff.iter().map(|v| v * v).sum::<f64>() / n as f64);
        let shape = a.shape().to_vec();
        self.tape().push(
            value,
            &[*self, other],
            Box::new(move |args| {
                let k = 2.0 * args.grad.item() / n as f64;
                let da: Vec<f64> = diff.iter().map(|v| k * v).collect();
                let gb = args.needs[1].then(|| Tensor::from_vec(&shape, da.iter().map(|v| -v).collect()).expect("shape"));
                vec![args.needs[0].then(|| Tensor::from_vec(&shape, da).expect("shape")), gb]
            }),
        )
    }

    /// `-(1/n) sum_i t_i . log max(y_i, floor)` for probability rows `y` and target rows `t`.
    pub fn cross_entropy(&self, targets: &Tensor, floor: f64) -> Var<'t> {
        let y = self.value();
        let (n, _) = pair_shape(&y, targets, "cross_entropy");
        let total: f64 = y
            .data()
            .iter()
            .zip(targets.data())
            .filter(|(_, t)| **t != 0.0)
            .map(|(p, t)| t * p.max(floor).ln())
            .sum();
        let value = Tensor::scalar(-total / n as f64);
        let targets = targets.clone();
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                let k = args.grad.item() / n as f64;
                let d = args.inputs[0]
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(p, t)| if *t != 0.0 && *p > floor { -k * t / p } else { 0.0 })
                    .collect();
                vec![Some(Tensor::from_vec(targets.shape(), d).expect("shape"))]
            }),
        )
    }
}
