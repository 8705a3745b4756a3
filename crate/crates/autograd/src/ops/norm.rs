use crate::tape::Var;
use crate::tensor::Tensor;

/// Updated running statistics produced by a training-mode batch norm.
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl<'t> Var<'t> {
    /// Batch normalization over every axis except axis 1 (`[n, c]` or `[n, c, ...]`).
    ///
    /// In training mode the batch statistics normalize the input and the returned
    /// running statistics are `(1 - momentum) * old + momentum * batch` (unbiased variance).
    /// In evaluation mode the running statistics normalize and nothing is returned.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        gamma: Var<'t>,
        beta: Var<'t>,
        running_mean: &Tensor,
        running_var: &Tensor,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> (Var<'t>, Option<RunningStats>) {
        let x = self.value();
        let s = x.shape().to_vec();
        assert!(s.len() >= 2, "batch_norm needs at least [n, c]");
        let (n, c) = (s[0], s[1]);
        let sp: usize = s[2..].iter().product();
        let m = (n * sp) as f64;
        let (gv, bv) = (gamma.value(), beta.value());
        assert_eq!(gv.shape(), &[c], "batch_norm gamma");
        assert_eq!(bv.shape(), &[c], "batch_norm beta");

        let idx = move |ni: usize, ci: usize| (ni * c + ci) * sp;
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += x.data()[idx(ni, ci)..idx(ni, ci) + sp].iter().sum::<f64>();
                }
                mean[ci] = acc / m;
                let mut acc2 = 0.0;
                for ni in 0..n {
                    acc2 += x.data()[idx(ni, ci)..idx(ni, ci) + sp]
                        .iter()
                        .map(|v| (v - mean[ci]).powi(2))
                        .sum::<f64>();
                }
                var[ci] = acc2 / m;
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let r = idx(ni, ci)..idx(ni, ci) + sp;
                for ((h, o), v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x.data()[r]) {
                    *h = (v - mean[ci]) * inv_std[ci];
                    *o = gv.data()[ci] * *h + bv.data()[ci];
                }
            }
        }

        let stats = train.then(|| {
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let mean_t = running_mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(r, b)| (1.0 - momentum) * r + momentum * b)
                .collect();
            let var_t = running_var
                .data()
                .iter()
                .zip(&var)
                .map(|(r, b)| (1.0 - momentum) * r + momentum * b * unbiased)
                .collect();
            RunningStats {
                mean: Tensor::from_vec(&[c], mean_t).expect("shape"),
                var: Tensor::from_vec(&[c], var_t).expect("shape"),
            }
        });

        let value = Tensor::from_vec(&s, out).expect("shape");
        let var_out = self.tape().push(
            value,
            &[*self, gamma, beta],
            Box::new(move |args| {
                let g = args.grad.data();
                let gamma = args.inputs[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let r = idx(ni, ci)..idx(ni, ci) + sp;
                        for (gv, hv) in g[r.clone()].iter().zip(&xhat[r]) {
                            dgamma[ci] += gv * hv;
                            dbeta[ci] += gv;
                        }
                    }
                }
                let dx = args.needs[0].then(|| {
                    let mut d = vec![0.0; g.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let r = idx(ni, ci)..idx(ni, ci) + sp;
                            let k = gamma[ci] * inv_std[ci];
                            for ((dv, gv), hv) in d[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                *dv = if train {
                                    k * (gv - dbeta[ci] / m - hv * dgamma[ci] / m)
                                } else {
                                    k * gv
                                };
                            }
                        }
                    }
                    Tensor::from_vec(&s, d).expect("shape")
                });
                vec![
                    dx,
                    args.needs[1].then(|| Tensor::from_vec(&[c], dgamma.clone()).expect("shape")),
                    args.needs[2].then(|| Tensor::from_vec(&[c], dbeta.clone()).expect("shape")),
                ]
            }),
        );
        (var_out, stats)
    }
}
