//! Composite operations with hand-written backward rules: the channel-wise
//! wavelet transform, the diagonal state-space scan and the dual-softmax
//! attention. Each would be expensive in memory if expressed through
//! primitives.

use super::ops::sigmoid;
use super::{Backward, Graph, Tensor, Var};
use crate::linalg::{dot8, exp_nonpos, gemm, min_max, simd_kernel, sum8};
use crate::wavelet::{dwt2_adjoint, dwt2_unchecked, filter_bank, half_len, SubbandSet, WaveletFilterPair, WaveletKind};

struct Dwt2Channels {
    filt: WaveletFilterPair,
}

impl Backward for Dwt2Channels {
    fn name(&self) -> &'static str {
        "dwt2"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (c, h, w) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
        let (h2, w2) = (out.shape[1], out.shape[2]);
        let m = h2 * w2;
        let band = |b: usize, ch: usize| g.data[(b * c + ch) * m..(b * c + ch + 1) * m].to_vec();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let sub = SubbandSet { height: h2, width: w2, ll: band(0, ch), lh: band(1, ch), hl: band(2, ch), hh: band(3, ch) };
            data.extend(dwt2_adjoint(&sub, &self.filt, h, w));
        }
        vec![Some(Tensor { shape: inputs[0].shape.clone(), data })]
    }
}

struct SsmScan;

/// Per-(channel, state) decay `a = exp(-softplus(lambda)) = sigmoid(-lambda)`.
fn decay(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|&l| sigmoid(-l)).collect()
}

impl Backward for SsmScan {
    fn name(&self) -> &'static str {
        "ssm_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, dy: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (u, lam, b, c, d) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (n, dim) = (u.shape[0], u.shape[1]);
        let st = lam.shape[1];
        let ds = dim * st;
        let a = decay(&lam.data);
        // replay the forward recurrence to recover every hidden state
        let mut hs = vec![0.0; n * ds];
        for t in 0..n {
            let ut = &u.data[t * dim..(t + 1) * dim];
            for k in 0..ds {
                let prev = if t > 0 { hs[(t - 1) * ds + k] } else { 0.0 };
                hs[t * ds + k] = a[k] * prev + b.data[k] * ut[k / st];
            }
        }
        let mut du = vec![0.0; n * dim];
        let mut da = vec![0.0; ds];
        let mut db = vec![0.0; ds];
        let mut dc = vec![0.0; ds];
        let mut dd = vec![0.0; dim];
        let mut carry = vec![0.0; ds];
        for t in (0..n).rev() {
            let ut = &u.data[t * dim..(t + 1) * dim];
            let gt = &dy.data[t * dim..(t + 1) * dim];
            let ht = &hs[t * ds..(t + 1) * ds];
            for ch in 0..dim {
                let mut acc = d.data[ch] * gt[ch];
                dd[ch] += gt[ch] * ut[ch];
                for s in 0..st {
                    let k = ch * st + s;
                    let adj = c.data[k] * gt[ch] + a[k] * carry[k];
                    carry[k] = adj;
                    dc[k] += gt[ch] * ht[k];
                    if t > 0 {
                        da[k] += adj * hs[(t - 1) * ds + k];
                    }
                    db[k] += adj * ut[ch];
                    acc += adj * b.data[k];
                }
                du[t * dim + ch] = acc;
            }
        }
        let dlam: Vec<f64> = da.iter().zip(&a).map(|(&g, &a)| -g * a * (1.0 - a)).collect();
        let pack = |need: bool, like: &Tensor, data: Vec<f64>| need.then(|| Tensor { shape: like.shape.clone(), data });
        vec![
            pack(needs[0], u, du),
            pack(needs[1], lam, dlam),
            pack(needs[2], b, db),
            pack(needs[3], c, dc),
            pack(needs[4], d, dd),
        ]
    }
}

/// Which softmax maps contribute to the fused attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMix {
    /// `alpha * A_sa + (1 - alpha) * A_inv` with a gate input.
    Fused,
    /// `A_sa` alone (gate fixed at 1).
    StandardOnly,
    /// `A_inv` alone (gate fixed at 0).
    InverseOnly,
}

/// Rows of the query block handled at once. Bounds the scratch memory to a
/// few `ROW_BLOCK x N` buffers.
const ROW_BLOCK: usize = 128;

#[derive(Clone, Copy)]
struct AttnParams {
    n: usize,
    dk: usize,
    dv: usize,
    tau_sa: f64,
    tau_inv: f64,
    mix: AttentionMix,
}

impl AttnParams {
    fn scale(&self) -> f64 {
        1.0 / (self.dk as f64).sqrt()
    }

    fn use_sa(&self) -> bool {
        self.mix != AttentionMix::InverseOnly
    }

    fn use_inv(&self) -> bool {
        self.mix != AttentionMix::StandardOnly
    }
}

/// Scratch for one block of rows: similarities and both softmax maps.
struct Block {
    s: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Block {
    fn new(p: &AttnParams) -> Self {
        let len = ROW_BLOCK * p.n;
        Self {
            s: vec![0.0; len],
            a: if p.use_sa() { vec![0.0; len] } else { Vec::new() },
            b: if p.use_inv() { vec![0.0; len] } else { Vec::new() },
        }
    }

    /// Fills rows `r0..r0 + br` of S, A_sa and A_inv.
    fn compute(&mut self, p: &AttnParams, q: &[f64], k: &[f64], r0: usize, br: usize) {
        let n = p.n;
        gemm(br, p.dk, n, p.scale(), &q[r0 * p.dk..(r0 + br) * p.dk], false, k, true, 0.0, &mut self.s[..br * n]);
        softmax_block(&self.s[..br * n], &mut self.a, &mut self.b, n, p);
    }
}

simd_kernel! {
    /// Row softmaxes of a block of similarities into `a` (standard) and `b`
    /// (inverse), skipping maps the mix does not use.
    fn softmax_block(s: &[f64], a: &mut [f64], b: &mut [f64], n: usize, p: &AttnParams) {
        for (i, row) in s.chunks_exact(n).enumerate() {
            let (mn, mx) = min_max(row);
            // with equal temperatures the inverse weights are reciprocals of
            // the standard ones up to a constant, as long as neither underflows
            if p.use_sa() && p.use_inv() && p.tau_sa == p.tau_inv && (mx - mn) / p.tau_sa < 600.0 {
                let (ar, br) = (&mut a[i * n..(i + 1) * n], &mut b[i * n..(i + 1) * n]);
                let inv_tau = 1.0 / p.tau_sa;
                let c = exp_nonpos((mn - mx) * inv_tau);
                for ((x, y), &v) in ar.iter_mut().zip(br.iter_mut()).zip(row) {
                    let e = exp_nonpos(((v - mx) * inv_tau).min(0.0));
                    *x = e;
                    *y = c / e;
                }
                let (ra, rb) = (1.0 / sum8(ar), 1.0 / sum8(br));
                for (x, y) in ar.iter_mut().zip(br.iter_mut()) {
                    *x *= ra;
                    *y *= rb;
                }
                continue;
            }
            if p.use_sa() {
                softmax_row(row, &mut a[i * n..(i + 1) * n], mx, 1.0 / p.tau_sa);
            }
            if p.use_inv() {
                softmax_row(row, &mut b[i * n..(i + 1) * n], mn, -1.0 / p.tau_inv);
            }
        }
    }
}

/// `out = softmax(inv_tau * row)`, where `pivot` is the row extremum that
/// makes every exponent nonpositive.
#[inline(always)]
fn softmax_row(row: &[f64], out: &mut [f64], pivot: f64, inv_tau: f64) {
    for (o, &v) in out.iter_mut().zip(row) {
        *o = exp_nonpos(((v - pivot) * inv_tau).min(0.0));
    }
    let rz = 1.0 / sum8(out);
    for o in out.iter_mut() {
        *o *= rz;
    }
}

struct DualAttention {
    p: AttnParams,
    alpha: f64,
}

impl Backward for DualAttention {
    fn name(&self) -> &'static str {
        "dual_attention"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let p = &self.p;
        let (n, dk, dv) = (p.n, p.dk, p.dv);
        let (q, k, v) = (&inputs[0].data, &inputs[1].data, &inputs[2].data);
        let alpha = self.alpha;
        let sc = p.scale();
        let mut dq = vec![0.0; n * dk];
        let mut dk_acc = vec![0.0; n * dk];
        let mut dv_acc = vec![0.0; n * dv];
        let mut dalpha = 0.0;
        let mut blk = Block::new(p);
        let mut df = vec![0.0; ROW_BLOCK * n];
        let mut f = vec![0.0; ROW_BLOCK * n];
        for r0 in (0..n).step_by(ROW_BLOCK) {
            let br = ROW_BLOCK.min(n - r0);
            blk.compute(p, q, k, r0, br);
            let (a, b) = (&blk.a, &blk.b);
            let gb = &g.data[r0 * dv..(r0 + br) * dv];
            // dV += F^T g
            if needs[2] {
                let f = &mut f[..br * n];
                fuse_maps(p, alpha, a, b, f);
                gemm(n, br, dv, 1.0, f, true, gb, false, 1.0, &mut dv_acc);
            }
            if !(needs[0] || needs[1] || needs.get(3).copied().unwrap_or(false)) {
                continue;
            }
            let df = &mut df[..br * n];
            gemm(br, dv, n, 1.0, gb, false, v, true, 0.0, df);
            dalpha += grad_logits(p, alpha, a, b, df);
            let ds = &*df;
            if needs[0] {
                gemm(br, n, dk, sc, ds, false, k, false, 0.0, &mut dq[r0 * dk..(r0 + br) * dk]);
            }
            if needs[1] {
                gemm(n, br, dk, sc, ds, true, &q[r0 * dk..(r0 + br) * dk], false, 1.0, &mut dk_acc);
            }
        }
        let mut grads = vec![
            needs[0].then(|| Tensor { shape: vec![n, dk], data: dq }),
            needs[1].then(|| Tensor { shape: vec![n, dk], data: dk_acc }),
            needs[2].then(|| Tensor { shape: vec![n, dv], data: dv_acc }),
        ];
        if inputs.len() == 4 {
            grads.push(needs[3].then(|| Tensor::from_vec(inputs[3].shape(), vec![dalpha])));
        }
        grads
    }
}

simd_kernel! {
    /// Turns `dF` into `dS` in place for one row block and returns this
    /// block's contribution to `d alpha`.
    fn grad_logits(p: &AttnParams, alpha: f64, a: &[f64], b: &[f64], df: &mut [f64]) -> f64 {
        let n = p.n;
        let mut dalpha = 0.0;
        for i in 0..df.len() / n {
            let row = i * n..(i + 1) * n;
            let dfr = &mut df[row.clone()];
            let ra: f64 = if p.use_sa() { dot8(dfr, &a[row.clone()]) } else { 0.0 };
            let rb: f64 = if p.use_inv() { dot8(dfr, &b[row.clone()]) } else { 0.0 };
            dalpha += ra - rb;
            match p.mix {
                AttentionMix::StandardOnly => {
                    let ka = 1.0 / p.tau_sa;
                    for (d, &x) in dfr.iter_mut().zip(&a[row]) {
                        *d = ka * x * (*d - ra);
                    }
                }
                AttentionMix::InverseOnly => {
                    let kb = 1.0 / p.tau_inv;
                    for (d, &y) in dfr.iter_mut().zip(&b[row]) {
                        *d = -kb * y * (*d - rb);
                    }
                }
                AttentionMix::Fused => {
                    let ka = alpha / p.tau_sa;
                    let kb = (1.0 - alpha) / p.tau_inv;
                    for ((d, &x), &y) in dfr.iter_mut().zip(&a[row.clone()]).zip(&b[row]) {
                        *d = ka * x * (*d - ra) - kb * y * (*d - rb);
                    }
                }
            }
        }
        dalpha
    }
}

/// Writes `alpha * A_sa + (1 - alpha) * A_inv` (or the single active map).
fn fuse_maps(p: &AttnParams, alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    let len = out.len();
    match p.mix {
        AttentionMix::StandardOnly => out.copy_from_slice(&a[..len]),
        AttentionMix::InverseOnly => out.copy_from_slice(&b[..len]),
        AttentionMix::Fused => blend(alpha, &a[..len], &b[..len], out),
    }
}

simd_kernel! {
    fn blend(alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = alpha * x + (1.0 - alpha) * y;
        }
    }
}

/// Dense attention matrices for inspection on small token counts.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub n: usize,
    /// `Q K^T / sqrt(d_k)`.
    pub similarity: Vec<f64>,
    pub standard: Vec<f64>,
    pub inverse: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Builds the full `N x N` maps from row-major `q`, `k` of width `dk`.
pub fn attention_maps(q: &[f64], k: &[f64], dk: usize, tau_sa: f64, tau_inv: f64, alpha: f64) -> AttentionMaps {
    assert!(dk > 0 && q.len() % dk == 0 && q.len() == k.len(), "attention_maps: inconsistent shapes");
    let n = q.len() / dk;
    let p = AttnParams { n, dk, dv: 0, tau_sa, tau_inv, mix: AttentionMix::Fused };
    let mut maps = AttentionMaps {
        n,
        similarity: Vec::with_capacity(n * n),
        standard: Vec::with_capacity(n * n),
        inverse: Vec::with_capacity(n * n),
        fused: Vec::with_capacity(n * n),
    };
    let mut blk = Block::new(&p);
    let mut f = vec![0.0; ROW_BLOCK * n];
    for r0 in (0..n).step_by(ROW_BLOCK) {
        let br = ROW_BLOCK.min(n - r0);
        blk.compute(&p, q, k, r0, br);
        fuse_maps(&p, alpha, &blk.a, &blk.b, &mut f[..br * n]);
        maps.similarity.extend_from_slice(&blk.s[..br * n]);
        maps.standard.extend_from_slice(&blk.a[..br * n]);
        maps.inverse.extend_from_slice(&blk.b[..br * n]);
        maps.fused.extend_from_slice(&f[..br * n]);
    }
    maps
}

impl Graph {
    /// Applies the orthonormal 2-D wavelet transform to every channel of a
    /// `[C, H, W]` tensor. The result is `[4C, ceil(H/2), ceil(W/2)]`
    /// holding all LL planes, then all LH, HL and HH planes.
    pub fn dwt2(&mut self, x: Var, kind: WaveletKind) -> Var {
        let t = self.value(x);
        assert_eq!(t.rank(), 3, "dwt2 expects [C, H, W], got {:?}", t.shape());
        let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
        let (h2, w2) = (half_len(h), half_len(w));
        let filt = filter_bank(kind);
        let m = h2 * w2;
        let mut data = vec![0.0; 4 * c * m];
        for ch in 0..c {
            let sub = dwt2_unchecked(&t.data[ch * h * w..(ch + 1) * h * w], h, w, &filt);
            for (b, band) in [&sub.ll, &sub.lh, &sub.hl, &sub.hh].into_iter().enumerate() {
                data[(b * c + ch) * m..(b * c + ch + 1) * m].copy_from_slice(band);
            }
        }
        self.push(Tensor { shape: vec![4 * c, h2, w2], data }, &[x], Dwt2Channels { filt })
    }

    /// Diagonal linear state-space scan over `u: [N, D]` in token order:
    /// `h_t = a * h_{t-1} + b * u_t`, `y_t = sum_s c * h_t + d * u_t`,
    /// with `a = exp(-softplus(lambda))` and `lambda, b, c: [D, S]`, `d: [D]`.
    pub fn ssm_scan(&mut self, u: Var, lambda: Var, b: Var, c: Var, d: Var) -> Var {
        let us = self.shape(u).to_vec();
        assert_eq!(us.len(), 2, "ssm_scan input must be [N, D]");
        let (n, dim) = (us[0], us[1]);
        let ls = self.shape(lambda).to_vec();
        assert!(ls.len() == 2 && ls[0] == dim, "ssm_scan lambda must be [D, S], got {ls:?}");
        assert_eq!(self.shape(b), ls.as_slice(), "ssm_scan b must match lambda");
        assert_eq!(self.shape(c), ls.as_slice(), "ssm_scan c must match lambda");
        assert_eq!(self.shape(d), [dim], "ssm_scan d must be [D]");
        let st = ls[1];
        let a = decay(&self.value(lambda).data);
        let (uv, bv, cv, dv) = (&self.value(u).data, &self.value(b).data, &self.value(c).data, &self.value(d).data);
        let mut h = vec![0.0; dim * st];
        let mut y = vec![0.0; n * dim];
        for t in 0..n {
            for ch in 0..dim {
                let x = uv[t * dim + ch];
                let mut acc = dv[ch] * x;
                for s in 0..st {
                    let k = ch * st + s;
                    h[k] = a[k] * h[k] + bv[k] * x;
                    acc += cv[k] * h[k];
                }
                y[t * dim + ch] = acc;
            }
        }
        self.push(Tensor { shape: vec![n, dim], data: y }, &[u, lambda, b, c, d], SsmScan)
    }

    /// Single-head attention `F V` with `F` mixing a standard softmax of
    /// `S / tau_sa` and an inverse softmax of `-S / tau_inv`, where
    /// `S = Q K^T / sqrt(d_k)`. `alpha` (a one-element tensor) is required
    /// for [`AttentionMix::Fused`] and ignored otherwise. The `N x N` maps are
    /// never stored; the backward pass recomputes them block by block.
    #[allow(clippy::too_many_arguments)]
    pub fn dual_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        alpha: Option<Var>,
        tau_sa: f64,
        tau_inv: f64,
        mix: AttentionMix,
    ) -> Var {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        assert!(qs.len() == 2 && qs == ks, "dual_attention: q {qs:?} and k {ks:?} must be equal [N, d_k]");
        assert!(vs.len() == 2 && vs[0] == qs[0], "dual_attention: v {vs:?} must be [N, d_v]");
        assert!(tau_sa > 0.0 && tau_inv > 0.0, "dual_attention temperatures must be positive");
        let p = AttnParams { n: qs[0], dk: qs[1], dv: vs[1], tau_sa, tau_inv, mix };
        let alpha_var = match mix {
            AttentionMix::Fused => {
                let a = alpha.expect("dual_attention: fused mode needs an alpha input");
                assert_eq!(self.value(a).numel(), 1, "alpha must hold one value");
                Some(a)
            }
            _ => None,
        };
        let alpha_val = match mix {
            AttentionMix::Fused => self.value(alpha_var.unwrap()).item(),
            AttentionMix::StandardOnly => 1.0,
            AttentionMix::InverseOnly => 0.0,
        };
        let (n, dv) = (p.n, p.dv);
        let (qd, kd, vd) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut out = vec![0.0; n * dv];
        let mut blk = Block::new(&p);
        let mut f = vec![0.0; ROW_BLOCK * n];
        for r0 in (0..n).step_by(ROW_BLOCK) {
            let br = ROW_BLOCK.min(n - r0);
            let f = &mut f[..br * n];
            blk.compute(&p, qd, kd, r0, br);
            fuse_maps(&p, alpha_val, &blk.a, &blk.b, f);
            gemm(br, n, dv, 1.0, f, false, vd, false, 0.0, &mut out[r0 * dv..(r0 + br) * dv]);
        }
        let out = Tensor { shape: vec![n, dv], data: out };
        let rule = DualAttention { p, alpha: alpha_val };
        match alpha_var {
            Some(a) => self.push(out, &[q, k, v, a], rule),
            None => self.push(out, &[q, k, v], rule),
        }
    }
}

/// Constants of the fused reconstruction losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralLossConsts {
    /// Shift added to each clamped band before the KL normalisation.
    pub kl_eps: f64,
    /// Margin of the arccos clamp.
    pub acos_delta: f64,
    /// Guard added to the norm product of the cosine.
    pub norm_eps: f64,
}

struct SpectralLosses {
    c: SpectralLossConsts,
}

/// Per-pixel quantities shared by the forward and backward passes.
struct PixelStats {
    dot: f64,
    ny: f64,
    nh: f64,
    den: f64,
    cos: f64,
    zy: f64,
    zh: f64,
}

fn pixel_stats(y: &[f64], h: &[f64], c: &SpectralLossConsts) -> PixelStats {
    let (mut dot, mut yy, mut hh, mut zy, mut zh) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(h) {
        dot += a * b;
        yy += a * a;
        hh += b * b;
        zy += a.max(0.0) + c.kl_eps;
        zh += b.max(0.0) + c.kl_eps;
    }
    let (ny, nh) = (yy.sqrt(), hh.sqrt());
    let den = ny * nh + c.norm_eps;
    PixelStats { dot, ny, nh, den, cos: dot / den, zy, zh }
}

impl Backward for SpectralLosses {
    fn name(&self) -> &'static str {
        "spectral_losses"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (y, h) = (inputs[0], inputs[1]);
        let (n, l) = (y.shape[0], y.shape[1]);
        let c = &self.c;
        let rmse = out.data[0];
        let k_rmse = if rmse > 0.0 { g.data[0] / ((n * l) as f64 * rmse) } else { 0.0 };
        let (g_sad, g_kl) = (g.data[1] / n as f64, g.data[2] / n as f64);
        let mut dh = vec![0.0; n * l];
        for p in 0..n {
            let (yr, hr) = (&y.data[p * l..(p + 1) * l], &h.data[p * l..(p + 1) * l]);
            let s = pixel_stats(yr, hr, c);
            let dacos = if s.cos.abs() < 1.0 - c.acos_delta { -1.0 / (1.0 - s.cos * s.cos).sqrt() } else { 0.0 };
            let k_sad = g_sad * dacos;
            // d cos / d h = y / den - dot * ny * (h / nh) / den^2
            let k_norm = if s.nh > 0.0 { s.dot * s.ny / (s.den * s.den * s.nh) } else { 0.0 };
            let k_z = g_kl / s.zh;
            for ((d, &a), &b) in dh[p * l..(p + 1) * l].iter_mut().zip(yr).zip(hr) {
                let mut v = k_rmse * (b - a) + k_sad * (a / s.den - k_norm * b);
                // the clamp passes gradient only where yhat > 0
                if b > 0.0 {
                    let pa = (a.max(0.0) + c.kl_eps) / s.zy;
                    v += k_z - g_kl * pa / (b + c.kl_eps);
                }
                *d = v;
            }
        }
        vec![None, Some(Tensor { shape: h.shape.clone(), data: dh })]
    }
}

impl Graph {
    /// `[rmse, sad, kl]` between pixel spectra `y` (data, no gradient) and
    /// `yhat`, both `[N, L]`: root mean squared error over all entries, mean
    /// clamped spectral angle, and mean KL divergence of the clamped,
    /// shifted and normalised spectra.
    pub fn spectral_losses(&mut self, y: Var, yhat: Var, consts: SpectralLossConsts) -> Var {
        assert!(!self.requires_grad(y), "spectral_losses: y must not require gradients");
        let (yt, ht) = (self.value(y), self.value(yhat));
        assert!(yt.rank() == 2 && yt.shape == ht.shape, "spectral_losses: shapes {:?} and {:?}", yt.shape, ht.shape);
        let (n, l) = (yt.shape[0], yt.shape[1]);
        let c = consts;
        let (mut ss, mut sad, mut kl) = (0.0, 0.0, 0.0);
        for p in 0..n {
            let (yr, hr) = (&yt.data[p * l..(p + 1) * l], &ht.data[p * l..(p + 1) * l]);
            let s = pixel_stats(yr, hr, &c);
            sad += s.cos.clamp(-1.0 + c.acos_delta, 1.0 - c.acos_delta).acos();
            // sum p ln(p / q) = sum p ln(c_y / c_h) + ln(z_h / z_y) sum p
            let (mut klp, mut sp) = (0.0, 0.0);
            for (&a, &b) in yr.iter().zip(hr) {
                ss += (b - a) * (b - a);
                let ca = a.max(0.0) + c.kl_eps;
                let pa = ca / s.zy;
                klp += pa * (ca / (b.max(0.0) + c.kl_eps)).ln();
                sp += pa;
            }
            kl += klp + sp * (s.zh / s.zy).ln();
        }
        let data = vec![(ss / (n * l) as f64).sqrt(), sad / n as f64, kl / n as f64];
        self.push(Tensor { shape: vec![3], data }, &[y, yhat], SpectralLosses { c })
    }
}
