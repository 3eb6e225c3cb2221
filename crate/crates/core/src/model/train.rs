use super::{abundance_tensor, bind, cube_from_pixels, cube_tensor, forward, pixel_tensor, WsNetConfig, WsNetParams};
use crate::autodiff::{Graph, Tensor};
use crate::classical::vca;
use crate::error::{ensure, Error, Result};
use crate::mixing::{AbundanceTensor, EndmemberMatrix, SpectralCube};
use crate::objectives::{total_loss_graph, LossBreakdown};

/// Starting endmembers: VCA on the cube.
pub fn init_endmembers(cube: &SpectralCube, r: usize, seed: u64) -> Result<EndmemberMatrix> {
    vca(cube, r, seed)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &WsNetParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.flatten().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update; `grads` follow the flatten order.
    pub fn step(&mut self, params: &mut WsNetParams, grads: &[Tensor]) -> Result<()> {
        ensure!(grads.len() == self.m.len(), Dimension, "{} gradients for {} tensors", grads.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut i = 0;
        let mut shape_error = None;
        params.for_each_mut(&mut |p: &mut Tensor| {
            let (g, m, v) = (&grads[i], &mut self.m[i], &mut self.v[i]);
            if g.numel() != p.numel() {
                shape_error.get_or_insert(i);
            } else {
                for (((x, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (1.0 - b1) * gr;
                    *vi = b2 * *vi + (1.0 - b2) * gr * gr;
                    *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            i += 1;
        });
        match shape_error {
            Some(i) => Err(Error::Dimension(format!("gradient {i} does not match its parameter"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: WsNetParams,
    /// Loss of the forward pass at each iteration, before its update.
    pub history: Vec<LossBreakdown>,
}

fn check_compatible(cube: &SpectralCube, params: &WsNetParams) -> Result<()> {
    ensure!(
        params.bands() == cube.bands(),
        Dimension,
        "parameters expect {} bands, cube has {}",
        params.bands(),
        cube.bands()
    );
    if let Some(n) = params.token_count() {
        ensure!(n == cube.pixels(), Dimension, "positional embedding covers {n} tokens, cube has {}", cube.pixels());
    }
    ensure!(cube.data().iter().all(|v| v.is_finite()), NonFinite, "cube contains non-finite values");
    Ok(())
}

fn breakdown(g: &Graph, lv: &crate::objectives::LossVars) -> LossBreakdown {
    LossBreakdown {
        rmse: g.value(lv.rmse).item(),
        sad: g.value(lv.sad).item(),
        kl: g.value(lv.kl).item(),
        total: g.value(lv.total).item(),
    }
}

/// VCA initialisation followed by [`train_from`].
pub fn train(cube: &SpectralCube, cfg: &WsNetConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let e0 = init_endmembers(cube, cfg.endmembers, cfg.seed)?;
    let params = WsNetParams::init(cfg, cube.height(), cube.width(), &e0)?;
    train_from(cube, params, cfg)
}

/// Full-scene Adam iterations; endmembers are clamped at zero after each
/// step.
pub fn train_from(cube: &SpectralCube, params: WsNetParams, cfg: &WsNetConfig) -> Result<TrainOutput> {
    train_observed(cube, params, cfg, |_, _, _| {})
}

/// [`train_from`] calling `observe(iteration, loss, params)` after every
/// update.
pub fn train_observed(
    cube: &SpectralCube,
    mut params: WsNetParams,
    cfg: &WsNetConfig,
    mut observe: impl FnMut(usize, &LossBreakdown, &WsNetParams),
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_compatible(cube, &params)?;
    let x = cube_tensor(cube);
    let y = pixel_tensor(cube);
    let mut adam = Adam::new(cfg.lr, &params);
    let mut history = Vec::with_capacity(cfg.iters);
    for iteration in 0..cfg.iters {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let w = bind(&mut g, &params);
        let fwd = forward(&mut g, xv, &w, cfg)?;
        let lv = total_loss_graph(&mut g, yv, fwd.decoded.reconstruction, &cfg.loss);
        let loss = breakdown(&g, &lv);
        if !loss.total.is_finite() {
            return Err(Error::NanLoss { iteration, loss: loss.total });
        }
        history.push(loss);
        g.backward(lv.total)?;
        let grads: Vec<Tensor> = w
            .flatten()
            .into_iter()
            .map(|&v| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        adam.step(&mut params, &grads)?;
        params.endmembers.data_mut().iter_mut().for_each(|e| *e = e.max(0.0));
        observe(iteration, &loss, &params);
    }
    Ok(TrainOutput { params, history })
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub abundances: AbundanceTensor,
    pub reconstruction: SpectralCube,
    pub endmembers: EndmemberMatrix,
    pub loss: LossBreakdown,
    /// Attention mix, when the learned gate is active.
    pub alpha: Option<f64>,
    /// Branch fusion weight, when both branches are active.
    pub beta: Option<f64>,
}

/// Forward pass without gradients.
pub fn infer(cube: &SpectralCube, params: &WsNetParams, cfg: &WsNetConfig) -> Result<Inference> {
    cfg.validate()?;
    check_compatible(cube, params)?;
    let mut g = Graph::new();
    let xv = g.constant(cube_tensor(cube));
    let yv = g.constant(pixel_tensor(cube));
    let w = params.map(&mut |t| g.constant(t.clone()));
    let fwd = forward(&mut g, xv, &w, cfg)?;
    let lv = total_loss_graph(&mut g, yv, fwd.decoded.reconstruction, &cfg.loss);
    let (h, wd) = (cube.height(), cube.width());
    Ok(Inference {
        abundances: abundance_tensor(g.value(fwd.decoded.abundances), h, wd)?,
        reconstruction: cube_from_pixels(g.value(fwd.decoded.reconstruction), h, wd)?,
        endmembers: params.endmember_matrix()?,
        loss: breakdown(&g, &lv),
        alpha: fwd.attention.and_then(|a| a.alpha).map(|a| g.value(a).item()),
        beta: params.global_logit.as_ref().map(|l| 1.0 / (1.0 + (-l.item()).exp())),
    })
}
