//! 2-D convolution and its adjoint, both lowered to GEMM through im2col.

use crate::tape::Var;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// `[n, c, h, w]` image -> `[c*kh*kw, n*oh*ow]` patch matrix.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let (p, ncols) = (g.oh * g.ow, g.cols());
    let mut cols = vec![0.0; g.rows() * ncols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oy in 0..g.oh {
                        let y = (oy * g.stride + ki) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[y as usize * g.w..(y as usize + 1) * g.w];
                        let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let xx = (ox * g.stride + kj) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                *d = src_row[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back into an `[n, c, h, w]` image.
fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let (p, ncols) = (g.oh * g.ow, g.cols());
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let dst = &mut x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &src_row[n * p..(n + 1) * p];
                    for oy in 0..g.oh {
                        let y = (oy * g.stride + ki) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[y as usize * g.w..(y as usize + 1) * g.w];
                        for (ox, s) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                            let xx = (ox * g.stride + kj) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                dst_row[xx as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, p]` -> `[c, n*p]`.
fn to_channel_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]
                .copy_from_slice(&x[(ni * c + ci) * p..(ni * c + ci + 1) * p]);
        }
    }
    out
}

/// `[c, n*p]` -> `[n, c, p]`.
fn to_batch_major(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for ni in 0..n {
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p]
                .copy_from_slice(&x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]);
        }
    }
    out
}

fn bias_grad(grad: &[f64], n: usize, c: usize, p: usize) -> Tensor {
    let mut d = vec![0.0; c];
    for ni in 0..n {
        for (ci, acc) in d.iter_mut().enumerate() {
            *acc += grad[(ni * c + ci) * p..(ni * c + ci + 1) * p].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[c], d).expect("shape")
}

impl<'t> Var<'t> {
    /// Cross-correlation of `[n, c, h, w]` with `weight [o, c, kh, kw]`, zero padding.
    pub fn conv2d(&self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, pad: usize) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape().to_vec(), w.shape().to_vec());
        assert!(sx.len() == 4 && sw.len() == 4 && sx[1] == sw[1], "conv2d input {sx:?} weight {sw:?}");
        assert!(stride >= 1, "conv2d stride");
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d kernel larger than padded input");
        let g = Geometry {
            n,
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let p = g.oh * g.ow;
        let cols = im2col(x.data(), &g);
        let mut mat = vec![0.0; o * g.cols()];
        gemm(o, g.rows(), g.cols(), 1.0, w.data(), false, &cols, false, 0.0, &mut mat);
        let mut out = to_batch_major(&mat, n, o, p);
        if let Some(b) = &bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[o], "conv2d bias shape");
            for (i, plane) in out.chunks_mut(p).enumerate() {
                let bias = bv.data()[i % o];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        let value = Tensor::from_vec(&[n, o, g.oh, g.ow], out).expect("shape");
        let mut parents = vec![*self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.tape().push(
            value,
            &parents,
            Box::new(move |args| {
                let gmat = to_channel_major(args.grad.data(), n, o, p);
                let gx = args.needs[0].then(|| {
                    let mut dcols = vec![0.0; g.rows() * g.cols()];
                    gemm(g.rows(), o, g.cols(), 1.0, args.inputs[1].data(), true, &gmat, false, 0.0, &mut dcols);
                    Tensor::from_vec(&[n, c, h, wd], col2im(&dcols, &g)).expect("shape")
                });
                let gw = args.needs[1].then(|| {
                    let mut d = vec![0.0; o * g.rows()];
                    gemm(o, g.cols(), g.rows(), 1.0, &gmat, false, &cols, true, 0.0, &mut d);
                    Tensor::from_vec(&[o, c, kh, kw], d).expect("shape")
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.needs[2].then(|| bias_grad(args.grad.data(), n, o, p)));
                }
                grads
            }),
        )
    }

    /// Transposed convolution (adjoint of [`Var::conv2d`]) with `weight [c_in, c_out, kh, kw]`.
    /// Output side is `(h - 1) * stride - 2 * pad + kh + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape().to_vec(), w.shape().to_vec());
        assert!(sx.len() == 4 && sw.len() == 4 && sx[1] == sw[0], "conv_transpose2d input {sx:?} weight {sw:?}");
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[1], sw[2], sw[3]);
        let oh = (h - 1) * stride + kh + output_pad - 2 * pad;
        let ow = (wd - 1) * stride + kw + output_pad - 2 * pad;
        // Geometry of the forward convolution that maps the output back to the input grid.
        let g = Geometry {
            n,
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: wd,
        };
        debug_assert_eq!((oh + 2 * pad - kh) / stride + 1, h);
        let p_in = h * wd;
        let p_out = oh * ow;
        let xmat = to_channel_major(x.data(), n, cin, p_in);
        let mut cols = vec![0.0; g.rows() * g.cols()];
        gemm(g.rows(), cin, g.cols(), 1.0, w.data(), true, &xmat, false, 0.0, &mut cols);
        let mut out = col2im(&cols, &g);
        if let Some(b) = &bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[cout], "conv_transpose2d bias shape");
            for (i, plane) in out.chunks_mut(p_out).enumerate() {
                let bias = bv.data()[i % cout];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        let value = Tensor::from_vec(&[n, cout, oh, ow], out).expect("shape");
        let mut parents = vec![*self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.tape().push(
            value,
            &parents,
            Box::new(move |args| {
                let dcols = im2col(args.grad.data(), &g);
                let gx = args.needs[0].then(|| {
                    let mut d = vec![0.0; cin * g.cols()];
                    gemm(cin, g.rows(), g.cols(), 1.0, args.inputs[1].data(), false, &dcols, false, 0.0, &mut d);
                    Tensor::from_vec(&[n, cin, h, wd], to_batch_major(&d, n, cin, p_in)).expect("shape")
                });
                let gw = args.needs[1].then(|| {
                    let mut d = vec![0.0; cin * g.rows()];
                    gemm(cin, g.cols(), g.rows(), 1.0, &xmat, false, &dcols, true, 0.0, &mut d);
                    Tensor::from_vec(&[cin, cout, kh, kw], d).expect("shape")
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.needs[2].then(|| bias_grad(args.grad.data(), n, cout, p_out)));
                }
                grads
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn direct_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (s, k) = (x.shape(), w.shape());
        let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
        let (o, kh, kw) = (k[0], k[2], k[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let yy = (y * stride + i) as isize - pad as isize;
                                    let xj = (xx * stride + j) as isize - pad as isize;
                                    if yy < 0 || xj < 0 || yy >= h as isize || xj >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((ni * c + ci) * h + yy as usize) * wd + xj as usize]
                                        * w.data()[((oi * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((ni * o + oi) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, o, oh, ow], out).unwrap()
    }

    fn ramp(shape: &[usize], phase: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * 0.731 + phase).sin()).collect()).unwrap()
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        for &(stride, pad) in &[(1, 1), (2, 1), (2, 0), (1, 0)] {
            let x = ramp(&[2, 3, 7, 6], 0.1);
            let w = ramp(&[4, 3, 3, 3], 0.5);
            let tape = Tape::new();
            let y = tape.constant(x.clone()).conv2d(tape.constant(w.clone()), None, stride, pad);
            let want = direct_conv(&x, &w, stride, pad);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.value().data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for the same kernel laid out as [c_in, c_out, k, k].
        let x = ramp(&[2, 3, 8, 8], 0.2);
        let w = ramp(&[5, 3, 4, 4], 0.9);
        let tape = Tape::new();
        let cx = tape.constant(x.clone()).conv2d(tape.constant(w.clone()), None, 2, 1);
        let y = ramp(&cx.shape(), 1.3);
        let ty = tape.constant(y.clone()).conv_transpose2d(tape.constant(w.clone()), None, 2, 1, 0);
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = ty.value().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
