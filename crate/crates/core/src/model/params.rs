use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::WsNetConfig;
use crate::autodiff::Tensor;
use crate::error::{ensure, Result};
use crate::mixing::EndmemberMatrix;

/// Hidden width of the gate network that produces the attention mix.
pub const GATE_HIDDEN: usize = 16;

macro_rules! weight_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)+
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)+ }
            }

            pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut T)) {
                $(f(&mut self.$field);)+
            }

            pub fn refs(&self) -> Vec<&T> {
                vec![$(&self.$field),+]
            }
        }
    };
}

weight_group!(
    /// Weight and bias of a dense map or a convolution.
    Affine { w, b }
);

weight_group!(
    /// One encoder stage: the conv path, the mixing conv over Haar bands and
    /// conv path, and the projection of the stage output.
    StageWeights { conv_w, conv_b, mix_w, mix_b, out_w, out_b }
);

weight_group!(
    /// State-space branch. `lambda`, `b`, `c` are `[D, S]`, `d` is `[D]`.
    MambaWeights { lambda, b, c, d, gate_w, gate_b, out_w, out_b }
);

weight_group!(
    /// Attention branch with its positional embedding and token MLP.
    AttentionWeights { pos, wq, wk, wv, mlp1_w, mlp1_b, mlp2_w, mlp2_b }
);

weight_group!(
    /// Maps each token's mean logit through `1 -> 16 -> 1`.
    GateWeights { w1, b1, w2, b2 }
);

/// Every trainable tensor of the network. `T` is [`Tensor`] for stored
/// parameters and [`crate::autodiff::Var`] once bound into a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    /// 1x1 conv from the bands to `D` channels.
    pub stem: Affine<T>,
    pub stages: Vec<StageWeights<T>>,
    /// 1x1 convs from a stage output (`5D` channels) to the next stage input.
    pub fuse: Vec<Affine<T>>,
    pub mamba: Option<MambaWeights<T>>,
    pub attention: Option<AttentionWeights<T>>,
    pub gate: Option<GateWeights<T>>,
    /// Present when both branches are enabled.
    pub global_logit: Option<T>,
    pub decoder: Affine<T>,
    /// `[L, R]`.
    pub endmembers: T,
}

pub type WsNetParams = Weights<Tensor>;

impl<T> Weights<T> {
    /// Applies `f` to every tensor in a fixed order.
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            stem: self.stem.map(f),
            stages: self.stages.iter().map(|s| s.map(f)).collect(),
            fuse: self.fuse.iter().map(|s| s.map(f)).collect(),
            mamba: self.mamba.as_ref().map(|m| m.map(f)),
            attention: self.attention.as_ref().map(|a| a.map(f)),
            gate: self.gate.as_ref().map(|a| a.map(f)),
            global_logit: self.global_logit.as_ref().map(&mut *f),
            decoder: self.decoder.map(f),
            endmembers: f(&self.endmembers),
        }
    }

    /// Same order as [`Self::map`].
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut T)) {
        self.stem.for_each_mut(f);
        self.stages.iter_mut().for_each(|s| s.for_each_mut(f));
        self.fuse.iter_mut().for_each(|s| s.for_each_mut(f));
        if let Some(m) = &mut self.mamba {
            m.for_each_mut(f);
        }
        if let Some(a) = &mut self.attention {
            a.for_each_mut(f);
        }
        if let Some(a) = &mut self.gate {
            a.for_each_mut(f);
        }
        if let Some(l) = &mut self.global_logit {
            f(l);
        }
        self.decoder.for_each_mut(f);
        f(&mut self.endmembers);
    }

    /// References in [`Self::map`] order.
    pub fn flatten(&self) -> Vec<&T> {
        let mut out = self.stem.refs();
        self.stages.iter().for_each(|s| out.extend(s.refs()));
        self.fuse.iter().for_each(|s| out.extend(s.refs()));
        out.extend(self.mamba.iter().flat_map(|m| m.refs()));
        out.extend(self.attention.iter().flat_map(|m| m.refs()));
        out.extend(self.gate.iter().flat_map(|m| m.refs()));
        out.extend(self.global_logit.iter());
        out.extend(self.decoder.refs());
        out.push(&self.endmembers);
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.flatten().len()
    }

    /// Rebuilds the structure of `self` from values in flatten order.
    pub fn replace<U: Clone>(&self, values: &[U]) -> Result<Weights<U>> {
        ensure!(values.len() == self.tensor_count(), Dimension, "expected {} tensors, got {}", self.tensor_count(), values.len());
        let mut i = 0;
        Ok(self.map(&mut |_| {
            i += 1;
            values[i - 1].clone()
        }))
    }
}

impl WsNetParams {
    /// Seeded initialisation for a `bands x height x width` cube with `e0`
    /// as the starting endmembers.
    pub fn init(cfg: &WsNetConfig, height: usize, width: usize, e0: &EndmemberMatrix) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            e0.count() == cfg.endmembers,
            Dimension,
            "initial endmembers have {} columns, config expects {}",
            e0.count(),
            cfg.endmembers
        );
        let (l, d, r) = (e0.bands(), cfg.feat_dim, cfg.endmembers);
        let n = height * width;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5753_4e45_545f_5031);
        let mut normal = |shape: &[usize], std: f64| {
            let len = shape.iter().product();
            Tensor::from_vec(shape, (0..len).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
        };
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let glorot = |fan_in: usize| (1.0 / fan_in as f64).sqrt();

        let stem = Affine { w: normal(&[d, l, 1, 1], glorot(l)), b: Tensor::zeros(&[d]) };
        let per_stage = cfg.stage_width();
        let mut stages = Vec::with_capacity(cfg.stages);
        let mut fuse = Vec::with_capacity(cfg.stages.saturating_sub(1));
        for s in 0..cfg.stages {
            stages.push(StageWeights {
                conv_w: normal(&[d, d, 3, 3], he(9 * d)),
                conv_b: Tensor::zeros(&[d]),
                mix_w: normal(&[d, 5 * d, 3, 3], he(45 * d)),
                mix_b: Tensor::zeros(&[d]),
                out_w: normal(&[per_stage, 5 * d, 1, 1], glorot(5 * d)),
                out_b: Tensor::zeros(&[per_stage]),
            });
            if s + 1 < cfg.stages {
                fuse.push(Affine { w: normal(&[d, 5 * d, 1, 1], glorot(5 * d)), b: Tensor::zeros(&[d]) });
            }
        }

        let mamba = cfg.enable_mamba.then(|| {
            let st = cfg.ssm_state;
            // decays spread over [0.5, 0.99]; b = 1 - a keeps each state a running average
            let a: Vec<f64> = (0..d * st)
                .map(|i| if st == 1 { 0.75 } else { 0.5 + 0.49 * (i % st) as f64 / (st - 1) as f64 })
                .collect();
            MambaWeights {
                lambda: Tensor::from_vec(&[d, st], a.iter().map(|&v| ((1.0 - v) / v).ln()).collect()),
                b: Tensor::from_vec(&[d, st], a.iter().map(|&v| 1.0 - v).collect()),
                c: normal(&[d, st], glorot(st)),
                d: Tensor::full(&[d], 1.0),
                gate_w: normal(&[d, d], glorot(d)),
                gate_b: Tensor::zeros(&[1, d]),
                out_w: normal(&[d, d], glorot(d)),
                out_b: Tensor::zeros(&[1, d]),
            }
        });

        let attention = cfg.enable_attention.then(|| {
            let dk = cfg.d_k;
            AttentionWeights {
                pos: normal(&[n, d], 0.02),
                wq: normal(&[d, dk], glorot(d)),
                wk: normal(&[d, dk], glorot(d)),
                wv: normal(&[d, dk], glorot(d)),
                mlp1_w: normal(&[dk, 4 * d], he(dk)),
                mlp1_b: Tensor::zeros(&[1, 4 * d]),
                mlp2_w: normal(&[4 * d, d], glorot(4 * d)),
                mlp2_b: Tensor::zeros(&[1, d]),
            }
        });
        let gate = (cfg.enable_attention && cfg.enable_wsa).then(|| GateWeights {
            w1: normal(&[1, GATE_HIDDEN], 1.0),
            b1: Tensor::zeros(&[1, GATE_HIDDEN]),
            w2: normal(&[GATE_HIDDEN, 1], glorot(GATE_HIDDEN)),
            b2: Tensor::zeros(&[1, 1]),
        });
        let global_logit = (cfg.enable_mamba && cfg.enable_attention).then(|| Tensor::zeros(&[1, 1]));
        let decoder = Affine { w: normal(&[d, r], glorot(d)), b: Tensor::zeros(&[1, r]) };
        let endmembers = Tensor::from_vec(&[l, r], e0.data().to_vec());
        Ok(Weights { stem, stages, fuse, mamba, attention, gate, global_logit, decoder, endmembers })
    }

    pub fn bands(&self) -> usize {
        self.endmembers.shape()[0]
    }

    pub fn token_count(&self) -> Option<usize> {
        self.attention.as_ref().map(|a| a.pos.shape()[0])
    }

    pub fn endmember_matrix(&self) -> Result<EndmemberMatrix> {
        let s = self.endmembers.shape();
        EndmemberMatrix::new(s[0], s[1], self.endmembers.data().to_vec())
    }

    pub fn parameter_count(&self) -> usize {
        self.flatten().iter().map(|t| t.numel()).sum()
    }
}
