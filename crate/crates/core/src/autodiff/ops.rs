//! Primitive differentiable operations.

use super::{Backward, Graph, Tensor, Var};
use crate::linalg::{exp_nonpos, gemm};

/// Shape that `a` and `b` broadcast to. Ranks must match; each axis must
/// agree or be 1 on one side.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal ranks: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "shapes {a:?} and {b:?} do not broadcast");
            x.max(y)
        })
        .collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside `out`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    strides(shape).into_iter().zip(shape.iter().zip(out)).map(|(s, (&d, &o))| if d == o { s } else { 0 }).collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    // the innermost axis runs in a tight loop
    let (inner, ia_step, ib_step) = match rank {
        0 => (1, 0, 0),
        _ => (out[rank - 1], sa[rank - 1], sb[rank - 1]),
    };
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    loop {
        for t in 0..inner {
            f(o + t, ia + t * ia_step, ib + t * ib_step);
        }
        o += inner;
        if o >= n {
            break;
        }
        let mut ax = rank - 1;
        loop {
            ax -= 1;
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary(BinaryKind);

/// `f(a[i], b[j])` over the broadcast output shape `out`.
fn map2(out: &[usize], a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.shape == out && b.shape == out {
        return a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    }
    let mut buf = vec![0.0; out.iter().product()];
    for_each_broadcast(out, &a.shape, &b.shape, |o, i, j| buf[o] = f(a.data[i], b.data[j]));
    buf
}

/// `f(g[o], a[i], b[j])` over the broadcast output, with a plain loop when
/// no axis broadcasts.
fn map3(out: &[usize], g: &[f64], a: &Tensor, b: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    if a.shape == out && b.shape == out {
        return g.iter().zip(&a.data).zip(&b.data).map(|((&g, &x), &y)| f(g, x, y)).collect();
    }
    let mut buf = vec![0.0; g.len()];
    for_each_broadcast(out, &a.shape, &b.shape, |o, i, j| buf[o] = f(g[o], a.data[i], b.data[j]));
    buf
}

/// Sums an output-shaped gradient over the axes that `target` broadcasts.
fn reduce_to(target: &[usize], out: &[usize], full: Vec<f64>) -> Tensor {
    if target == out {
        return Tensor { shape: target.to_vec(), data: full };
    }
    let mut acc = vec![0.0; target.iter().product()];
    for_each_broadcast(out, target, target, |o, i, _| acc[i] += full[o]);
    Tensor { shape: target.to_vec(), data: acc }
}

impl Backward for Binary {
    fn name(&self) -> &'static str {
        match self.0 {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let os = &out.shape;
        let ga = needs[0].then(|| {
            let full = match self.0 {
                BinaryKind::Add | BinaryKind::Sub => g.data.clone(),
                BinaryKind::Mul => map3(os, &g.data, a, b, |g, _, y| g * y),
                BinaryKind::Div => map3(os, &g.data, a, b, |g, _, y| g / y),
            };
            reduce_to(&a.shape, os, full)
        });
        let gb = needs[1].then(|| {
            let full = match self.0 {
                BinaryKind::Add => g.data.clone(),
                BinaryKind::Sub => g.data.iter().map(|&v| -v).collect(),
                BinaryKind::Mul => map3(os, &g.data, a, b, |g, x, _| g * x),
                BinaryKind::Div => map3(os, &g.data, a, b, |g, x, y| -g * x / (y * y)),
            };
            reduce_to(&b.shape, os, full)
        });
        vec![ga, gb]
    }
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Scale(f64),
    AddScalar,
    Exp,
    Sigmoid,
    Silu,
    Sqrt,
    LogEps(f64),
    ClampMin(f64),
    Acos(f64),
}

struct Unary(UnaryKind);

impl Backward for Unary {
    fn name(&self) -> &'static str {
        match self.0 {
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar => "add_scalar",
            UnaryKind::Exp => "exp",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Silu => "silu",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::LogEps(_) => "log_eps",
            UnaryKind::ClampMin(_) => "clamp_min",
            UnaryKind::Acos(_) => "arccos_safe",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let data = x
            .data
            .iter()
            .zip(&out.data)
            .zip(&g.data)
            .map(|((&x, &y), &g)| {
                g * match self.0 {
                    UnaryKind::Scale(c) => c,
                    UnaryKind::AddScalar => 1.0,
                    UnaryKind::Exp => y,
                    UnaryKind::Sigmoid => y * (1.0 - y),
                    UnaryKind::Silu => {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    }
                    // the subgradient at 0 is taken as 0
                    UnaryKind::Sqrt => {
                        if y > 0.0 {
                            0.5 / y
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::LogEps(eps) => 1.0 / (x + eps),
                    UnaryKind::ClampMin(c) => {
                        if x > c {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::Acos(delta) => {
                        if x.abs() < 1.0 - delta {
                            -1.0 / (1.0 - x * x).sqrt()
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect();
        vec![Some(Tensor { shape: x.shape.clone(), data })]
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = needs[0].then(|| {
            let mut d = vec![0.0; m * k];
            gemm(m, n, k, 1.0, &g.data, false, &inputs[1].data, true, 0.0, &mut d);
            Tensor { shape: vec![m, k], data: d }
        });
        let gb = needs[1].then(|| {
            let mut d = vec![0.0; k * n];
            gemm(k, m, n, 1.0, &inputs[0].data, true, &g.data, false, 0.0, &mut d);
            Tensor { shape: vec![k, n], data: d }
        });
        vec![ga, gb]
    }
}

fn transpose2(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    const B: usize = 32;
    for i0 in (0..rows).step_by(B) {
        for j0 in (0..cols).step_by(B) {
            for i in i0..(i0 + B).min(rows) {
                for j in j0..(j0 + B).min(cols) {
                    out[j * rows + i] = x[i * cols + j];
                }
            }
        }
    }
    out
}

struct Transpose;

impl Backward for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (r, c) = (g.shape[0], g.shape[1]);
        vec![Some(Tensor { shape: vec![c, r], data: transpose2(&g.data, r, c) })]
    }
}

struct Reshape(Vec<usize>);

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor { shape: self.0.clone(), data: g.data.clone() })]
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct Softmax {
    axis: usize,
}

impl Backward for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _inputs: &[&Tensor], y: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, len, inner) = split_axis(&y.shape, self.axis);
        let mut dx = vec![0.0; y.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dot: f64 = (0..len).map(|t| y.data[base + t * inner] * g.data[base + t * inner]).sum();
                for t in 0..len {
                    let p = base + t * inner;
                    dx[p] = y.data[p] * (g.data[p] - dot);
                }
            }
        }
        vec![Some(Tensor { shape: y.shape.clone(), data: dx })]
    }
}

struct Concat {
    axis: usize,
    lens: Vec<usize>,
}

impl Backward for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_axis(&out.shape, self.axis);
        let mut offset = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (x, (&len, &need)) in inputs.iter().zip(self.lens.iter().zip(needs)) {
            if need {
                let mut d = Vec::with_capacity(x.data.len());
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    d.extend_from_slice(&g.data[start..start + len * inner]);
                }
                grads.push(Some(Tensor { shape: x.shape.clone(), data: d }));
            } else {
                grads.push(None);
            }
            offset += len;
        }
        grads
    }
}

struct Slice {
    axis: usize,
    start: usize,
}

impl Backward for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, total, inner) = split_axis(&x.shape, self.axis);
        let len = out.shape[self.axis];
        let mut d = vec![0.0; x.data.len()];
        for o in 0..outer {
            let dst = (o * total + self.start) * inner;
            let src = o * len * inner;
            d[dst..dst + len * inner].copy_from_slice(&g.data[src..src + len * inner]);
        }
        vec![Some(Tensor { shape: x.shape.clone(), data: d })]
    }
}

struct SumAxis {
    axis: usize,
    scale: f64,
}

impl Backward for SumAxis {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, len, inner) = split_axis(&x.shape, self.axis);
        let mut d = vec![0.0; x.data.len()];
        for o in 0..outer {
            for t in 0..len {
                for i in 0..inner {
                    d[(o * len + t) * inner + i] = g.data[o * inner + i] * self.scale;
                }
            }
        }
        vec![Some(Tensor { shape: x.shape.clone(), data: d })]
    }
}

struct SumAll {
    scale: f64,
}

impl Backward for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(&inputs[0].shape, g.data[0] * self.scale))]
    }
}

fn check_chw(shape: &[usize], op: &str) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "{op} expects a [C, H, W] tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

struct Upsample2;

impl Backward for Upsample2 {
    fn name(&self) -> &'static str {
        "upsample2"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (c, h, w) = check_chw(&inputs[0].shape, "upsample2");
        let (oh, ow) = (out.shape[1], out.shape[2]);
        let mut d = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    d[(ch * h + y / 2) * w + x / 2] += g.data[(ch * oh + y) * ow + x];
                }
            }
        }
        vec![Some(Tensor { shape: inputs[0].shape.clone(), data: d })]
    }
}

struct AvgPool2;

impl Backward for AvgPool2 {
    fn name(&self) -> &'static str {
        "avg_pool2"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (c, h, w) = check_chw(&inputs[0].shape, "avg_pool2");
        let (oh, ow) = (out.shape[1], out.shape[2]);
        let mut d = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let cy = if 2 * (y / 2) + 1 < h { 2.0 } else { 1.0 };
                for x in 0..w {
                    let cx = if 2 * (x / 2) + 1 < w { 2.0 } else { 1.0 };
                    d[(ch * h + y) * w + x] = g.data[(ch * oh + y / 2) * ow + x / 2] / (cy * cx);
                }
            }
        }
        vec![Some(Tensor { shape: inputs[0].shape.clone(), data: d })]
    }
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(&ta.shape, &tb.shape);
        let data = match kind {
            BinaryKind::Add => map2(&shape, ta, tb, |x, y| x + y),
            BinaryKind::Sub => map2(&shape, ta, tb, |x, y| x - y),
            BinaryKind::Mul => map2(&shape, ta, tb, |x, y| x * y),
            BinaryKind::Div => map2(&shape, ta, tb, |x, y| x / y),
        };
        self.push(Tensor { shape, data }, &[a, b], Binary(kind))
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Div)
    }

    fn unary(&mut self, x: Var, kind: UnaryKind, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| f(v)).collect() };
        self.push(out, &[x], Unary(kind))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::Scale(c), |v| c * v)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::AddScalar, |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp, f64::exp)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid, sigmoid)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Silu, |v| v * sigmoid(v))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sqrt, f64::sqrt)
    }

    /// `ln(x + eps)`.
    pub fn log_eps(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, UnaryKind::LogEps(eps), move |v| (v + eps).ln())
    }

    /// `max(x, c)`; the gradient flows only where `x > c`.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::ClampMin(c), move |v| v.max(c))
    }

    /// `acos` of the input clamped to `[-1 + delta, 1 - delta]`.
    pub fn arccos_safe(&mut self, x: Var, delta: f64) -> Var {
        self.unary(x, UnaryKind::Acos(delta), move |v| v.clamp(-1.0 + delta, 1.0 - delta).acos())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
    }

    /// Product of `[m, k]` and `[k, n]` matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.rank() == 2 && tb.rank() == 2, "matmul expects matrices, got {:?} and {:?}", ta.shape, tb.shape);
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        assert_eq!(tb.shape[0], k, "matmul inner dimensions differ: {:?} vs {:?}", ta.shape, tb.shape);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &ta.data, false, &tb.data, false, 0.0, &mut data);
        self.push(Tensor { shape: vec![m, n], data }, &[a, b], MatMul { m, k, n })
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert_eq!(t.rank(), 2, "transpose expects a matrix, got {:?}", t.shape);
        let (r, c) = (t.shape[0], t.shape[1]);
        let out = Tensor { shape: vec![c, r], data: transpose2(&t.data, r, c) };
        self.push(out, &[x], Transpose)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x);
        let old = t.shape.clone();
        let out = t.clone().reshaped(shape);
        self.push(out, &[x], Reshape(old))
    }

    /// Softmax along `axis`, computed with the usual max shift.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(&t.shape, axis);
        let mut y = vec![0.0; t.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mx = (0..len).map(|s| t.data[base + s * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in 0..len {
                    let e = exp_nonpos(t.data[base + s * inner] - mx);
                    y[base + s * inner] = e;
                    z += e;
                }
                for s in 0..len {
                    y[base + s * inner] /= z;
                }
            }
        }
        self.push(Tensor { shape: t.shape.clone(), data: y }, &[x], Softmax { axis })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (ax, (&p, &q)) in s.iter().zip(&first).enumerate() {
                assert!(ax == axis || p == q, "concat shape mismatch: {s:?} vs {first:?} on axis {axis}");
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &len) in xs.iter().zip(&lens) {
                let src = &self.value(x).data;
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        self.push(Tensor { shape, data }, xs, Concat { axis, lens })
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Var {
        let t = self.value(x);
        let (outer, total, inner) = split_axis(&t.shape, axis);
        assert!(start < end && end <= total, "slice {start}..{end} out of range for extent {total}");
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&t.data[s..s + len * inner]);
        }
        let mut shape = t.shape.clone();
        shape[axis] = len;
        self.push(Tensor { shape, data }, &[x], Slice { axis, start })
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, keepdim: bool, mean: bool) -> Var {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(&t.shape, axis);
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for s in 0..len {
                let row = &t.data[(o * len + s) * inner..(o * len + s + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        if mean {
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = t.shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        self.push(Tensor { shape, data }, &[x], SumAxis { axis, scale })
    }

    pub fn sum(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        self.reduce_axis(x, axis, keepdim, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        self.reduce_axis(x, axis, keepdim, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), &[x], SumAll { scale: 1.0 })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let scale = 1.0 / t.numel() as f64;
        let s = t.data.iter().sum::<f64>() * scale;
        self.push(Tensor::scalar(s), &[x], SumAll { scale })
    }

    /// Nearest-neighbour ×2 upsampling of a `[C, H, W]` tensor, cropped to
    /// `out_h × out_w` (each at most twice the input extent).
    pub fn upsample2(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let t = self.value(x);
        let (c, h, w) = check_chw(&t.shape, "upsample2");
        assert!(out_h <= 2 * h && out_w <= 2 * w, "upsample2 target {out_h}x{out_w} exceeds 2x of {h}x{w}");
        let mut data = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for y in 0..out_h {
                let row = &t.data[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                data.extend((0..out_w).map(|x| row[x / 2]));
            }
        }
        self.push(Tensor { shape: vec![c, out_h, out_w], data }, &[x], Upsample2)
    }

    /// 2×2 average pooling with stride 2 on `[C, H, W]`. Odd extents keep
    /// their last row/column, averaged over the entries that exist.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = check_chw(&t.shape, "avg_pool2");
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                let cy = if 2 * (y / 2) + 1 < h { 2.0 } else { 1.0 };
                for x in 0..w {
                    let cx = if 2 * (x / 2) + 1 < w { 2.0 } else { 1.0 };
                    data[(ch * oh + y / 2) * ow + x / 2] += t.data[(ch * h + y) * w + x] / (cy * cx);
                }
            }
        }
        self.push(Tensor { shape: vec![c, oh, ow], data }, &[x], AvgPool2)
    }
}
