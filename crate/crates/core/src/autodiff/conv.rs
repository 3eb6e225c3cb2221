//! 2-D cross-correlation on unbatched `[C, H, W]` tensors via im2col.

use super::{Backward, Graph, Tensor, Var};
use crate::linalg::gemm;

#[derive(Clone, Copy, Debug)]
struct Geometry {
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
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds the input into a `[C*kh*kw, oh*ow]` patch matrix.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let n = g.oh * g.ow;
    let mut cols = vec![0.0; g.c * g.kh * g.kw * n];
    for ch in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ch * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(ch * g.h + iy as usize) * g.w..(ch * g.h + iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let n = g.oh * g.ow;
    let mut x = vec![0.0; g.c * g.h * g.w];
    for ch in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ch * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ch * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += cols[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

struct Conv2d {
    geom: Geometry,
    out_channels: usize,
}

impl Backward for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = &self.geom;
        let (x, w) = (inputs[0], inputs[1]);
        let o = self.out_channels;
        let kdim = g.c * g.kh * g.kw;
        let n = g.oh * g.ow;
        let owned;
        let cols: &[f64] = if g.pointwise() {
            &x.data
        } else if needs[1] {
            owned = im2col(&x.data, g);
            &owned
        } else {
            &[]
        };
        let gx = needs[0].then(|| {
            let mut dcols = vec![0.0; kdim * n];
            gemm(kdim, o, n, 1.0, &w.data, true, &grad.data, false, 0.0, &mut dcols);
            let data = if g.pointwise() { dcols } else { col2im(&dcols, g) };
            Tensor { shape: x.shape.clone(), data }
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![0.0; o * kdim];
            gemm(o, n, kdim, 1.0, &grad.data, false, cols, true, 0.0, &mut dw);
            Tensor { shape: w.shape.clone(), data: dw }
        });
        let mut grads = vec![gx, gw];
        if inputs.len() == 3 {
            grads.push(needs[2].then(|| {
                let data = grad.data.chunks(n).map(|row| row.iter().sum()).collect();
                Tensor { shape: vec![o], data }
            }));
        }
        grads
    }
}

impl Graph {
    /// Cross-correlation of `x: [C, H, W]` with `weight: [O, C, kh, kw]`,
    /// optional `bias: [O]`, the given stride and zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        assert_eq!(xs.len(), 3, "conv2d input must be [C, H, W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [O, C, kh, kw], got {ws:?}");
        assert_eq!(xs[0], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
        assert!(stride >= 1, "conv2d stride must be positive");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d kernel larger than padded input");
        let geom = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        if let Some(b) = bias {
            assert_eq!(self.shape(b), [o], "conv2d bias must be [O]");
        }
        let n = geom.oh * geom.ow;
        let kdim = c * kh * kw;
        let xv = &self.value(x).data;
        let owned;
        let cols: &[f64] = if geom.pointwise() {
            xv
        } else {
            owned = im2col(xv, &geom);
            &owned
        };
        let mut out = vec![0.0; o * n];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(n).zip(&self.value(b).data) {
                row.fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(o, kdim, n, 1.0, &self.value(weight).data, false, cols, false, beta, &mut out);
        let out = Tensor { shape: vec![o, geom.oh, geom.ow], data: out };
        let rule = Conv2d { geom, out_channels: o };
        match bias {
            Some(b) => self.push(out, &[x, weight, b], rule),
            None => self.push(out, &[x, weight], rule),
        }
    }
}
