//! The unmixing network: a multi-scale wavelet encoder feeding a
//! state-space branch and a dual-softmax attention branch, fused by a
//! learned gate and decoded through a softmax onto the simplex.

mod params;
mod train;


pub use params::{
    Affine, AttentionWeights, GateWeights, MambaWeights, StageWeights, Weights, WsNetParams, GATE_HIDDEN,
};
pub use train::{infer, init_endmembers, train, train_from, train_observed, Adam, Inference, TrainOutput};

use crate::autodiff::{attention_maps, AttentionMaps, AttentionMix, Graph, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::mixing::{AbundanceTensor, SpectralCube};
use crate::objectives::LossWeights;
use crate::wavelet::WaveletKind;

#[derive(Clone, Debug, PartialEq)]
pub struct WsNetConfig {
    /// Number of endmembers `R`.
    pub endmembers: usize,
    /// Token width `D`.
    pub feat_dim: usize,
    pub stages: usize,
    pub d_k: usize,
    pub ssm_state: usize,
    pub tau_sa: f64,
    pub tau_inv: f64,
    pub enable_mamba: bool,
    pub enable_attention: bool,
    pub enable_wsa: bool,
    pub lr: f64,
    pub iters: usize,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for WsNetConfig {
    fn default() -> Self {
        Self {
            endmembers: 4,
            feat_dim: 64,
            stages: 4,
            d_k: 32,
            ssm_state: 16,
            tau_sa: 1.0,
            tau_inv: 1.0,
            enable_mamba: true,
            enable_attention: true,
            enable_wsa: true,
            lr: 4e-3,
            iters: 200,
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl WsNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("endmembers", self.endmembers),
            ("feat_dim", self.feat_dim),
            ("stages", self.stages),
            ("d_k", self.d_k),
            ("ssm_state", self.ssm_state),
        ];
        for (name, v) in dims {
            ensure!(v >= 1, Config, "{name} must be at least 1");
        }
        ensure!(
            self.feat_dim % self.stages == 0,
            Config,
            "feat_dim {} is not divisible by stages {}",
            self.feat_dim,
            self.stages
        );
        ensure!(
            self.tau_sa > 0.0 && self.tau_inv > 0.0 && self.tau_sa.is_finite() && self.tau_inv.is_finite(),
            Config,
            "temperatures must be positive and finite"
        );
        ensure!(self.enable_mamba || self.enable_attention, Config, "at least one branch must be enabled");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Config, "learning rate must be positive");
        self.loss.validate()
    }

    /// Channels contributed by each encoder stage.
    pub fn stage_width(&self) -> usize {
        self.feat_dim / self.stages
    }

    /// Smallest image side the encoder accepts.
    pub fn min_side(&self) -> usize {
        1usize.checked_shl(self.stages as u32).unwrap_or(usize::MAX)
    }
}

/// `[H*W, D]` tokens in raster order.
#[derive(Clone, Copy, Debug)]
pub struct TokenField {
    pub var: Var,
    pub height: usize,
    pub width: usize,
}

pub fn bind(g: &mut Graph, params: &WsNetParams) -> Weights<Var> {
    params.map(&mut |t| g.param(t.clone()))
}

fn affine(g: &mut Graph, x: Var, a: &Affine<Var>) -> Var {
    let y = g.matmul(x, a.w);
    g.add(y, a.b)
}

/// Zero mean and unit variance along `axis` of a `[N, D]` node.
pub fn standardize(g: &mut Graph, x: Var, axis: usize) -> Var {
    let mu = g.mean(x, axis, true);
    let c = g.sub(x, mu);
    let sq = g.square(c);
    let var = g.mean(sq, axis, true);
    let var = g.add_scalar(var, STANDARDIZE_EPS);
    let sd = g.sqrt(var);
    g.div(c, sd)
}

pub const STANDARDIZE_EPS: f64 = 1e-6;

/// Encodes a `[L, H, W]` cube into tokens.
pub fn wffe_forward(g: &mut Graph, cube: Var, w: &Weights<Var>, cfg: &WsNetConfig) -> Result<TokenField> {
    let shape = g.shape(cube).to_vec();
    ensure!(shape.len() == 3, Dimension, "encoder input must be [L, H, W], got {shape:?}");
    let (bands, h, wd) = (shape[0], shape[1], shape[2]);
    ensure!(
        g.shape(w.stem.w)[1] == bands,
        Dimension,
        "cube has {bands} bands, stem expects {}",
        g.shape(w.stem.w)[1]
    );
    ensure!(w.stages.len() == cfg.stages, Dimension, "parameters hold {} stages, config {}", w.stages.len(), cfg.stages);
    ensure!(
        h >= cfg.min_side() && wd >= cfg.min_side(),
        InvalidArgument,
        "{h}x{wd} image is smaller than 2^{} = {} in some dimension",
        cfg.stages,
        cfg.min_side()
    );

    let stem = g.conv2d(cube, w.stem.w, Some(w.stem.b), 1, 0);
    let mut sizes = vec![(h, wd)];
    let mut feat = stem;
    let mut conv_path = stem;
    let mut outs = Vec::with_capacity(cfg.stages);
    for (i, st) in w.stages.iter().enumerate() {
        let haar = g.dwt2(feat, WaveletKind::Haar);
        let c = g.conv2d(conv_path, st.conv_w, Some(st.conv_b), 1, 1);
        conv_path = g.avg_pool2(c);
        let cat = g.concat(&[haar, conv_path], 0);
        let mix = g.conv2d(cat, st.mix_w, Some(st.mix_b), 1, 1);
        let sym = g.dwt2(feat, WaveletKind::Symlet3);
        let stage = g.concat(&[mix, sym], 0);
        let s = g.shape(stage);
        sizes.push((s[1], s[2]));
        let mut out = g.conv2d(stage, st.out_w, Some(st.out_b), 1, 0);
        for &(oh, ow) in sizes[..sizes.len() - 1].iter().rev() {
            out = g.upsample2(out, oh, ow);
        }
        outs.push(out);
        if let Some(f) = w.fuse.get(i) {
            feat = g.conv2d(stage, f.w, Some(f.b), 1, 0);
        }
    }
    let all = g.concat(&outs, 0);
    let d = g.shape(all)[0];
    let flat = g.reshape(all, &[d, h * wd]);
    let var = g.transpose(flat);
    Ok(TokenField { var, height: h, width: wd })
}

/// Gated diagonal state-space scan over the raster token sequence,
/// projected back to `D` channels.
pub fn mamba_branch(g: &mut Graph, tokens: Var, m: &MambaWeights<Var>) -> Var {
    let y = g.ssm_scan(tokens, m.lambda, m.b, m.c, m.d);
    let z = g.matmul(tokens, m.gate_w);
    let z = g.add(z, m.gate_b);
    let gate = g.sigmoid(z);
    let gated = g.mul(y, gate);
    let out = g.matmul(gated, m.out_w);
    g.add(out, m.out_b)
}

/// Source of the attention mix `alpha`.
#[derive(Clone, Copy, Debug)]
pub enum AlphaSource<'a> {
    /// Produced by the gate network.
    Learned(&'a GateWeights<Var>),
    /// A one-element node supplied by the caller.
    Fixed(Var),
    /// Standard attention only (`alpha = 1`).
    Standard,
}

#[derive(Clone, Copy, Debug)]
pub struct WsaOutput {
    pub z: Var,
    pub q: Var,
    pub k: Var,
    /// `None` when the branch runs standard attention only.
    pub alpha: Option<Var>,
}

/// `alpha = sigmoid(mean_i g(m_i))` with `m_i` the mean pre-softmax logit
/// of token `i` and `g` the `1 -> 16 -> 1` gate network.
pub fn attention_gate(g: &mut Graph, q: Var, k: Var, gw: &GateWeights<Var>) -> Var {
    let dk = g.shape(q)[1];
    let kbar = g.mean(k, 0, true);
    let kt = g.transpose(kbar);
    let m = g.matmul(q, kt);
    let m = g.scale(m, 1.0 / (dk as f64).sqrt());
    let h = g.matmul(m, gw.w1);
    let h = g.add(h, gw.b1);
    let h = g.silu(h);
    let o = g.matmul(h, gw.w2);
    let o = g.add(o, gw.b2);
    let logit = g.mean_all(o);
    g.sigmoid(logit)
}

pub fn wsa_branch(
    g: &mut Graph,
    tokens: Var,
    a: &AttentionWeights<Var>,
    alpha: AlphaSource<'_>,
    cfg: &WsNetConfig,
) -> Result<WsaOutput> {
    ensure!(
        g.shape(tokens) == g.shape(a.pos),
        Dimension,
        "tokens {:?} do not match the positional embedding {:?}",
        g.shape(tokens),
        g.shape(a.pos)
    );
    let x = g.add(tokens, a.pos);
    let q = g.matmul(x, a.wq);
    let k = g.matmul(x, a.wk);
    let v = g.matmul(x, a.wv);
    let (alpha, mix) = match alpha {
        AlphaSource::Learned(gw) => (Some(attention_gate(g, q, k, gw)), AttentionMix::Fused),
        AlphaSource::Fixed(var) => {
            ensure!(g.value(var).numel() == 1, Dimension, "alpha must hold one value");
            (Some(var), AttentionMix::Fused)
        }
        AlphaSource::Standard => (None, AttentionMix::StandardOnly),
    };
    let f = g.dual_attention(q, k, v, alpha, cfg.tau_sa, cfg.tau_inv, mix);
    let h = g.matmul(f, a.mlp1_w);
    let h = g.add(h, a.mlp1_b);
    let h = g.silu(h);
    let z = g.matmul(h, a.mlp2_w);
    let z = g.add(z, a.mlp2_b);
    Ok(WsaOutput { z, q, k, alpha })
}

/// Dense attention maps of a branch output. Memory is `O(N^2)`.
pub fn wsa_maps(g: &Graph, out: &WsaOutput, cfg: &WsNetConfig) -> AttentionMaps {
    let q = g.value(out.q);
    let alpha = out.alpha.map_or(1.0, |a| g.value(a).item());
    attention_maps(q.data(), g.value(out.k).data(), q.shape()[1], cfg.tau_sa, cfg.tau_inv, alpha)
}

/// `beta * z_mamba + (1 - beta) * z_attention` with `beta = sigmoid(logit)`.
pub fn global_fuse(g: &mut Graph, z_mamba: Var, z_attention: Var, logit: Var) -> Result<Var> {
    ensure!(
        g.shape(z_mamba) == g.shape(z_attention),
        Dimension,
        "branch outputs differ in shape: {:?} vs {:?}",
        g.shape(z_mamba),
        g.shape(z_attention)
    );
    ensure!(g.value(logit).numel() == 1, Dimension, "gate logit must hold one value");
    let rank = g.shape(z_mamba).len();
    let logit = g.reshape(logit, &vec![1; rank]);
    let beta = g.sigmoid(logit);
    let nb = g.neg(beta);
    let one_minus = g.add_scalar(nb, 1.0);
    let a = g.mul(beta, z_mamba);
    let b = g.mul(one_minus, z_attention);
    Ok(g.add(a, b))
}

#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    pub logits: Var,
    /// `[N, R]`.
    pub abundances: Var,
    /// `[N, L]`.
    pub reconstruction: Var,
}

/// Softmax over endmembers per token, then `Y_hat = A E^T`.
pub fn decode(g: &mut Graph, z: Var, decoder: &Affine<Var>, endmembers: Var) -> Decoded {
    let logits = affine(g, z, decoder);
    decode_logits(g, logits, endmembers)
}

pub fn decode_logits(g: &mut Graph, logits: Var, endmembers: Var) -> Decoded {
    let abundances = g.softmax(logits, 1);
    let et = g.transpose(endmembers);
    let reconstruction = g.matmul(abundances, et);
    Decoded { logits, abundances, reconstruction }
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Encoder output before per-channel standardisation.
    pub tokens: TokenField,
    pub mamba: Option<Var>,
    pub attention: Option<WsaOutput>,
    pub fused: Var,
    pub decoded: Decoded,
}

/// Full network on a `[L, H, W]` cube node. Encoder channels are
/// standardised over the tokens before the branches, and the fused
/// features per token before the decoder.
pub fn forward(g: &mut Graph, cube: Var, w: &Weights<Var>, cfg: &WsNetConfig) -> Result<Forward> {
    let tokens = wffe_forward(g, cube, w, cfg)?;
    let u = standardize(g, tokens.var, 0);
    let mamba = match (&w.mamba, cfg.enable_mamba) {
        (Some(m), true) => Some(mamba_branch(g, u, m)),
        (None, false) => None,
        _ => return Err(Error::Config("mamba parameters do not match enable_mamba".into())),
    };
    let attention = match (&w.attention, cfg.enable_attention) {
        (Some(a), true) => {
            let source = match (&w.gate, cfg.enable_wsa) {
                (Some(gw), true) => AlphaSource::Learned(gw),
                (None, false) => AlphaSource::Standard,
                _ => return Err(Error::Config("gate parameters do not match enable_wsa".into())),
            };
            Some(wsa_branch(g, u, a, source, cfg)?)
        }
        (None, false) => None,
        _ => return Err(Error::Config("attention parameters do not match enable_attention".into())),
    };
    let fused = match (mamba, attention, w.global_logit) {
        (Some(zm), Some(za), Some(logit)) => global_fuse(g, zm, za.z, logit)?,
        (Some(zm), None, None) => zm,
        (None, Some(za), None) => za.z,
        _ => return Err(Error::Config("global gate does not match the enabled branches".into())),
    };
    let normed = standardize(g, fused, 1);
    let decoded = decode(g, normed, &w.decoder, w.endmembers);
    Ok(Forward { tokens, mamba, attention, fused, decoded })
}

/// The cube as a `[L, H, W]` tensor.
pub fn cube_tensor(cube: &SpectralCube) -> Tensor {
    Tensor::from_vec(&[cube.bands(), cube.height(), cube.width()], cube.data().to_vec())
}

/// The cube as `[N, L]` pixel spectra.
pub fn pixel_tensor(cube: &SpectralCube) -> Tensor {
    Tensor::from_vec(&[cube.pixels(), cube.bands()], cube.to_pixel_major())
}

/// Converts `[N, R]` decoder output to an abundance tensor.
pub fn abundance_tensor(values: &Tensor, height: usize, width: usize) -> Result<AbundanceTensor> {
    let s = values.shape();
    ensure!(s.len() == 2 && s[0] == height * width, Dimension, "abundances {s:?} do not cover {height}x{width}");
    AbundanceTensor::from_pixel_major(s[1], height, width, values.data())
}

/// Converts `[N, L]` pixel spectra back to a cube.
pub fn cube_from_pixels(values: &Tensor, height: usize, width: usize) -> Result<SpectralCube> {
    let s = values.shape();
    ensure!(s.len() == 2 && s[0] == height * width, Dimension, "spectra {s:?} do not cover {height}x{width}");
    let (n, l) = (s[0], s[1]);
    let v = values.data();
    let mut data = vec![0.0; n * l];
    for p in 0..n {
        for b in 0..l {
            data[b * n + p] = v[p * l + b];
        }
    }
    SpectralCube::new(l, height, width, data)
}
