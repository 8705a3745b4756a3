use crate::tape::Var;
use crate::tensor::{gemm, Tensor};

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

impl<'t> Var<'t> {
    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        same_shape(self, &other, "add");
        let (a, b) = (self.value(), other.value());
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(a.shape(), out).expect("shape");
        self.tape().push(
            value,
            &[*self, other],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        )
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        same_shape(self, &other, "mul");
        let (a, b) = (self.value(), other.value());
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(a.shape(), out).expect("shape");
        self.tape().push(
            value,
            &[*self, other],
            Box::new(|args| {
                let g = args.grad.data();
                let prod = |t: &Tensor| {
                    let d = g.iter().zip(t.data()).map(|(x, y)| x * y).collect();
                    Tensor::from_vec(t.shape(), d).expect("shape")
                };
                vec![
                    args.needs[0].then(|| prod(args.inputs[1])),
                    args.needs[1].then(|| prod(args.inputs[0])),
                ]
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let value = self.value().map(|v| v * factor);
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| vec![Some(args.grad.map(|g| g * factor))]),
        )
    }

    pub fn relu(&self) -> Var<'t> {
        let value = self.value().map(|v| v.max(0.0));
        self.tape().push(
            value,
            &[*self],
            Box::new(|args| {
                let d = args
                    .grad
                    .data()
                    .iter()
                    .zip(args.output.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::from_vec(args.grad.shape(), d).expect("shape"))]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let value = (*self.value()).clone().reshaped(shape).expect("reshape");
        let from = self.shape();
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| vec![Some(args.grad.clone().reshaped(&from).expect("reshape"))]),
        )
    }

    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape();
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| vec![Some(Tensor::full(&shape, args.grad.item()))]),
        )
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut out);
        let value = Tensor::from_vec(&[m, n], out).expect("shape");
        self.tape().push(
            value,
            &[*self, other],
            Box::new(move |args| {
                let g = args.grad.data();
                let ga = args.needs[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, false, args.inputs[1].data(), true, 0.0, &mut d);
                    Tensor::from_vec(&[m, k], d).expect("shape")
                });
                let gb = args.needs[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, args.inputs[0].data(), true, g, false, 0.0, &mut d);
                    Tensor::from_vec(&[k, n], d).expect("shape")
                });
                vec![ga, gb]
            }),
        )
    }

    /// Fully-connected layer: `x [n, in]`, `weight [out, in]`, `bias [out]`.
    pub fn linear(&self, weight: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape().to_vec(), w.shape().to_vec());
        assert!(sx.len() == 2 && sw.len() == 2 && sx[1] == sw[1], "linear {sx:?} with weight {sw:?}");
        let (n, fin, fout) = (sx[0], sx[1], sw[0]);
        let mut out = vec![0.0; n * fout];
        if let Some(b) = &bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[fout], "linear bias shape");
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(n, fin, fout, 1.0, x.data(), false, w.data(), true, 1.0, &mut out);
        let value = Tensor::from_vec(&[n, fout], out).expect("shape");
        let mut parents = vec![*self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.tape().push(
            value,
            &parents,
            Box::new(move |args| {
                let g = args.grad.data();
                let gx = args.needs[0].then(|| {
                    let mut d = vec![0.0; n * fin];
                    gemm(n, fout, fin, 1.0, g, false, args.inputs[1].data(), false, 0.0, &mut d);
                    Tensor::from_vec(&[n, fin], d).expect("shape")
                });
                let gw = args.needs[1].then(|| {
                    let mut d = vec![0.0; fout * fin];
                    gemm(fout, n, fin, 1.0, g, true, args.inputs[0].data(), false, 0.0, &mut d);
                    Tensor::from_vec(&[fout, fin], d).expect("shape")
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.needs[2].then(|| {
                        let mut d = vec![0.0; fout];
                        for row in g.chunks(fout) {
                            for (acc, v) in d.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        Tensor::from_vec(&[fout], d).expect("shape")
                    }));
                }
                grads
            }),
        )
    }

    /// Selects (and possibly repeats) columns of a 2-D tensor: `out[r, j] = x[r, index[j]]`.
    pub fn gather_cols(&self, index: &[usize]) -> Var<'t> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 2, "gather_cols needs a 2-D input");
        let (rows, cols) = (s[0], s[1]);
        assert!(index.iter().all(|&i| i < cols), "gather_cols index out of range");
        let m = index.len();
        let mut out = Vec::with_capacity(rows * m);
        for row in x.data().chunks(cols) {
            out.extend(index.iter().map(|&i| row[i]));
        }
        let value = Tensor::from_vec(&[rows, m], out).expect("shape");
        let index = index.to_vec();
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                let mut d = vec![0.0; rows * cols];
                for (drow, grow) in d.chunks_mut(cols).zip(args.grad.data().chunks(m)) {
                    for (&i, g) in index.iter().zip(grow) {
                        drow[i] += g;
                    }
                }
                vec![Some(Tensor::from_vec(&[rows, cols], d).expect("shape"))]
            }),
        )
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].shape()[0];
        let widths: Vec<usize> = values
            .iter()
            .map(|v| {
                assert!(v.ndim() == 2 && v.shape()[0] == rows, "concat_cols shape {:?}", v.shape());
                v.shape()[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::from_vec(&[rows, total], out).expect("shape");
        parts[0].tape().push(
            value,
            parts,
            Box::new(move |args| {
                let g = args.grad.data();
                let mut offset = 0;
                widths
                    .iter()
                    .zip(&args.needs)
                    .map(|(&w, &need)| {
                        let start = offset;
                        offset += w;
                        need.then(|| {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + start..r * total + start + w]);
                            }
                            Tensor::from_vec(&[rows, w], d).expect("shape")
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Complex elementwise affine map on interleaved `(re, im)` data:
    /// `out = a * x + b` with `a`, `b` constants of the same shape as `x`.
    pub fn complex_affine(&self, a: &Tensor, b: &Tensor) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape(), a.shape(), "complex_affine multiplier shape");
        assert_eq!(x.shape(), b.shape(), "complex_affine offset shape");
        assert_eq!(x.len() % 2, 0, "complex_affine needs interleaved pairs");
        let mut out = vec![0.0; x.len()];
        for (((o, xv), av), bv) in out
            .chunks_mut(2)
            .zip(x.data().chunks(2))
            .zip(a.data().chunks(2))
            .zip(b.data().chunks(2))
        {
            o[0] = av[0] * xv[0] - av[1] * xv[1] + bv[0];
            o[1] = av[1] * xv[0] + av[0] * xv[1] + bv[1];
        }
        let value = Tensor::from_vec(x.shape(), out).expect("shape");
        let a = a.clone();
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                // d/dx of a real loss through a complex product is conj(a) * g.
                let mut d = vec![0.0; a.len()];
                for ((o, g), av) in d.chunks_mut(2).zip(args.grad.data().chunks(2)).zip(a.data().chunks(2)) {
                    o[0] = av[0] * g[0] + av[1] * g[1];
                    o[1] = av[0] * g[1] - av[1] * g[0];
                }
                vec![Some(Tensor::from_vec(a.shape(), d).expect("shape"))]
            }),
        )
    }

    /// Rescales every row of a 2-D tensor to Euclidean norm `target`.
    pub fn row_normalize(&self, target: f64) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "row_normalize needs a 2-D input");
        let d = x.shape()[1];
        let norms: Vec<f64> = x.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut out = Vec::with_capacity(x.len());
        for (row, &n) in x.rows().zip(&norms) {
            assert!(n > 0.0, "row_normalize on a zero row");
            out.extend(row.iter().map(|v| v * target / n));
        }
        let value = Tensor::from_vec(x.shape(), out).expect("shape");
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                // y = t x / |x|  =>  dx = (t / |x|) (g - u (u . g)),  u = x / |x|.
                let mut dx = Vec::with_capacity(args.grad.len());
                for ((g, y), &n) in args.grad.data().chunks(d).zip(args.output.data().chunks(d)).zip(&norms) {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (target * target);
                    dx.extend(g.iter().zip(y).map(|(gv, yv)| (target / n) * (gv - yv * dot)));
                }
                vec![Some(Tensor::from_vec(args.grad.shape(), dx).expect("shape"))]
            }),
        )
    }

    /// Row-wise softmax of a 2-D tensor of logits.
    pub fn softmax(&self) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.ndim(), 2, "softmax needs a 2-D input");
        let c = x.shape()[1];
        let mut out = Vec::with_capacity(x.len());
        for row in x.rows() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / s));
        }
        let value = Tensor::from_vec(x.shape(), out).expect("shape");
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                let mut dx = Vec::with_capacity(args.grad.len());
                for (g, y) in args.grad.data().chunks(c).zip(args.output.data().chunks(c)) {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    dx.extend(g.iter().zip(y).map(|(gv, yv)| yv * (gv - dot)));
                }
                vec![Some(Tensor::from_vec(args.grad.shape(), dx).expect("shape"))]
            }),
        )
    }

    /// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&self) -> Var<'t> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "global_avg_pool needs NCHW");
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let out: Vec<f64> = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let value = Tensor::from_vec(&[n, c], out).expect("shape");
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                let mut d = Vec::with_capacity(n * c * hw);
                for g in args.grad.data() {
                    d.extend(std::iter::repeat(g / hw as f64).take(hw));
                }
                vec![Some(Tensor::from_vec(&s, d).expect("shape"))]
            }),
        )
    }

    /// Max pooling with square window, stride and zero-free padding (padded cells never win).
    pub fn max_pool2d(&self, kernel: usize, stride: usize, pad: usize) -> Var<'t> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "max_pool2d needs NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        let mut out = vec![0.0; n * c * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..kernel {
                        for dj in 0..kernel {
                            let (y, xx) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let idx = y as usize * w + xx as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = plane * oh * ow + i * ow + j;
                    out[o] = best;
                    arg[o] = plane * h * w + best_idx;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], out).expect("shape");
        self.tape().push(
            value,
            &[*self],
            Box::new(move |args| {
                let mut d = vec![0.0; n * c * h * w];
                for (g, &a) in args.grad.data().iter().zip(&arg) {
                    d[a] += g;
                }
                vec![Some(Tensor::from_vec(&s, d).expect("shape"))]
            }),
        )
    }
}
