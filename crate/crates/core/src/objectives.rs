//! Reconstruction losses and unmixing quality metrics.
//!
//! Every loss exists twice: a plain `f64` version over cubes and a graph
//! version over pixel-major `[N, L]` tensors used for training. Both follow
//! the same formulas and are tested against each other.

use crate::autodiff::{Graph, SpectralLossConsts, Var};
use crate::error::{ensure, Result};
use crate::linalg::{dot, spectral_angle};
use crate::mixing::{AbundanceTensor, EndmemberMatrix, SpectralCube};

/// Smoothing constant of the KL loss.
pub const KL_EPS: f64 = 1e-8;
/// Clamp margin of the arccos in the SAD loss.
pub const ACOS_DELTA: f64 = 1e-7;
/// Guard added to the norm product in the SAD loss.
const NORM_EPS: f64 = 1e-12;

/// Weights of the composite loss `alpha * rmse + beta * sad + gamma * kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 0.05 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        ensure!(all.iter().all(|v| v.is_finite() && *v >= 0.0), InvalidArgument, "loss weights must be finite and >= 0: {all:?}");
        ensure!(all.iter().any(|&v| v > 0.0), InvalidArgument, "loss weights are all zero");
        Ok(())
    }
}

fn same_shape(y: &SpectralCube, yhat: &SpectralCube) -> Result<()> {
    ensure!(
        y.bands() == yhat.bands() && y.height() == yhat.height() && y.width() == yhat.width(),
        Dimension,
        "cube shapes differ: {}x{}x{} vs {}x{}x{}",
        y.bands(),
        y.height(),
        y.width(),
        yhat.bands(),
        yhat.height(),
        yhat.width()
    );
    Ok(())
}

/// Root mean squared difference over all entries.
pub fn loss_rmse(y: &SpectralCube, yhat: &SpectralCube) -> Result<f64> {
    same_shape(y, yhat)?;
    let n = y.data().len() as f64;
    let ss: f64 = y.data().iter().zip(yhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / n).sqrt())
}

fn pixel_angle(a: &[f64], b: &[f64]) -> f64 {
    let cos = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt() + NORM_EPS);
    cos.clamp(-1.0 + ACOS_DELTA, 1.0 - ACOS_DELTA).acos()
}

/// Mean per-pixel spectral angle in radians.
pub fn loss_sad(y: &SpectralCube, yhat: &SpectralCube) -> Result<f64> {
    same_shape(y, yhat)?;
    let (py, ph) = (y.to_pixel_major(), yhat.to_pixel_major());
    let l = y.bands();
    let total: f64 = py.chunks(l).zip(ph.chunks(l)).map(|(a, b)| pixel_angle(a, b)).sum();
    Ok(total / y.pixels() as f64)
}

fn smoothed_distribution(v: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = v.iter().map(|&x| x.max(0.0) + KL_EPS).collect();
    let z: f64 = shifted.iter().sum();
    shifted.into_iter().map(|x| x / z).collect()
}

/// `sum_l p_l ln(p_l / q_l)` between the smoothed, normalised spectra.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let (p, q) = (smoothed_distribution(p), smoothed_distribution(q));
    p.iter().zip(&q).map(|(a, b)| a * (a.ln() - b.ln())).sum()
}

/// Mean per-pixel `D_KL(P(y) || P(yhat))`.
pub fn loss_kl(y: &SpectralCube, yhat: &SpectralCube) -> Result<f64> {
    same_shape(y, yhat)?;
    let (py, ph) = (y.to_pixel_major(), yhat.to_pixel_major());
    let l = y.bands();
    let total: f64 = py.chunks(l).zip(ph.chunks(l)).map(|(a, b)| kl_divergence(a, b)).sum();
    Ok(total / y.pixels() as f64)
}

/// Values of the three loss terms and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub rmse: f64,
    pub sad: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn total_loss(y: &SpectralCube, yhat: &SpectralCube, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let rmse = loss_rmse(y, yhat)?;
    let sad = loss_sad(y, yhat)?;
    let kl = loss_kl(y, yhat)?;
    Ok(LossBreakdown { rmse, sad, kl, total: w.alpha * rmse + w.beta * sad + w.gamma * kl })
}

/// Graph nodes of the loss terms, all scalars.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub rmse: Var,
    pub sad: Var,
    pub kl: Var,
    pub total: Var,
}

pub fn rmse_graph(g: &mut Graph, y: Var, yhat: Var) -> Var {
    let d = g.sub(yhat, y);
    let d2 = g.square(d);
    let m = g.mean_all(d2);
    g.sqrt(m)
}

/// `y` and `yhat` are `[N, L]`, one spectrum per row.
pub fn sad_graph(g: &mut Graph, y: Var, yhat: Var) -> Var {
    let prod = g.mul(y, yhat);
    let num = g.sum(prod, 1, true);
    let yy = g.square(y);
    let ny = g.sum(yy, 1, true);
    let hh = g.square(yhat);
    let nh = g.sum(hh, 1, true);
    let ny = g.sqrt(ny);
    let nh = g.sqrt(nh);
    let den = g.mul(ny, nh);
    let den = g.add_scalar(den, NORM_EPS);
    let cos = g.div(num, den);
    let ang = g.arccos_safe(cos, ACOS_DELTA);
    g.mean_all(ang)
}

fn smoothed_graph(g: &mut Graph, x: Var) -> Var {
    let c = g.clamp_min(x, 0.0);
    let c = g.add_scalar(c, KL_EPS);
    let z = g.sum(c, 1, true);
    g.div(c, z)
}

pub fn kl_graph(g: &mut Graph, y: Var, yhat: Var) -> Var {
    let p = smoothed_graph(g, y);
    let q = smoothed_graph(g, yhat);
    let lp = g.log_eps(p, 0.0);
    let lq = g.log_eps(q, 0.0);
    let d = g.sub(lp, lq);
    let t = g.mul(p, d);
    let per_pixel = g.sum(t, 1, false);
    g.mean_all(per_pixel)
}

/// Composite loss from the primitive graph losses. Slower than
/// [`total_loss_graph`] but differentiable in `y` as well.
pub fn total_loss_graph_composed(g: &mut Graph, y: Var, yhat: Var, w: &LossWeights) -> LossVars {
    let rmse = rmse_graph(g, y, yhat);
    let sad = sad_graph(g, y, yhat);
    let kl = kl_graph(g, y, yhat);
    weighted_sum(g, rmse, sad, kl, w)
}

fn weighted_sum(g: &mut Graph, rmse: Var, sad: Var, kl: Var, w: &LossWeights) -> LossVars {
    let a = g.scale(rmse, w.alpha);
    let b = g.scale(sad, w.beta);
    let c = g.scale(kl, w.gamma);
    let ab = g.add(a, b);
    let total = g.add(ab, c);
    LossVars { rmse, sad, kl, total }
}

pub const LOSS_CONSTS: SpectralLossConsts =
    SpectralLossConsts { kl_eps: KL_EPS, acos_delta: ACOS_DELTA, norm_eps: NORM_EPS };

/// Composite loss through a single fused node. `y` is data and receives no
/// gradient.
pub fn total_loss_graph(g: &mut Graph, y: Var, yhat: Var, w: &LossWeights) -> LossVars {
    let all = g.spectral_losses(y, yhat, LOSS_CONSTS);
    let rmse = g.slice(all, 0, 0, 1);
    let sad = g.slice(all, 0, 1, 2);
    let kl = g.slice(all, 0, 2, 3);
    weighted_sum(g, rmse, sad, kl, w)
}

/// Abundance error per endmember, their arithmetic mean, and the RMSE
/// pooled over all entries.
#[derive(Clone, Debug, PartialEq)]
pub struct AbundanceRmse {
    pub per_endmember: Vec<f64>,
    pub mean: f64,
    pub pooled: f64,
}

pub fn metric_abundance_rmse(a_true: &AbundanceTensor, a_est: &AbundanceTensor) -> Result<AbundanceRmse> {
    ensure!(
        a_true.count() == a_est.count() && a_true.height() == a_est.height() && a_true.width() == a_est.width(),
        Dimension,
        "abundance shapes differ"
    );
    let n = a_true.pixels() as f64;
    let sq: Vec<f64> = (0..a_true.count())
        .map(|r| a_true.map(r).iter().zip(a_est.map(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    let per_endmember: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
    let mean = per_endmember.iter().sum::<f64>() / per_endmember.len() as f64;
    let pooled = (sq.iter().sum::<f64>() / (n * a_true.count() as f64)).sqrt();
    Ok(AbundanceRmse { per_endmember, mean, pooled })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndmemberSad {
    pub per_endmember: Vec<f64>,
    pub mean: f64,
}

pub fn metric_endmember_sad(e_true: &EndmemberMatrix, e_est: &EndmemberMatrix) -> Result<EndmemberSad> {
    ensure!(
        e_true.bands() == e_est.bands() && e_true.count() == e_est.count(),
        Dimension,
        "endmember shapes differ: {}x{} vs {}x{}",
        e_true.bands(),
        e_true.count(),
        e_est.bands(),
        e_est.count()
    );
    let mut per_endmember = Vec::with_capacity(e_true.count());
    for r in 0..e_true.count() {
        let (a, b) = (e_true.column(r), e_est.column(r));
        ensure!(dot(&a, &a) > 0.0 && dot(&b, &b) > 0.0, InvalidArgument, "endmember {r} has zero norm");
        per_endmember.push(spectral_angle(&a, &b));
    }
    let mean = per_endmember.iter().sum::<f64>() / per_endmember.len() as f64;
    Ok(EndmemberSad { per_endmember, mean })
}

/// Estimated endmembers (and abundances) reordered to match the truth.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// `permutation[r]` is the estimated index matched to true endmember `r`.
    pub permutation: Vec<usize>,
    pub cost: f64,
    pub endmembers: EndmemberMatrix,
    pub abundances: Option<AbundanceTensor>,
}

/// `cost[r][s]` is the spectral angle between true `r` and estimated `s`;
/// zero-norm columns cost a right angle.
pub fn sad_cost_matrix(e_true: &EndmemberMatrix, e_est: &EndmemberMatrix) -> Vec<Vec<f64>> {
    let (t, e) = (e_true.columns(), e_est.columns());
    t.iter().map(|a| e.iter().map(|b| spectral_angle(a, b)).collect()).collect()
}

pub fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(r, &s)| cost[r][s]).sum()
}

/// Matches estimated to true endmembers by minimum total spectral angle.
/// The weak flags of the truth are carried over to the aligned estimate.
pub fn align_endmembers(
    e_true: &EndmemberMatrix,
    e_est: &EndmemberMatrix,
    a_est: Option<&AbundanceTensor>,
) -> Result<Alignment> {
    ensure!(
        e_true.count() == e_est.count() && e_true.bands() == e_est.bands(),
        Dimension,
        "cannot align {}x{} against {}x{}",
        e_est.bands(),
        e_est.count(),
        e_true.bands(),
        e_true.count()
    );
    if let Some(a) = a_est {
        ensure!(a.count() == e_est.count(), Dimension, "abundances have {} maps for {} endmembers", a.count(), e_est.count());
    }
    let cost = sad_cost_matrix(e_true, e_est);
    let permutation = if cost.len() <= 8 { exhaustive_assignment(&cost) } else { hungarian(&cost) };
    let endmembers = e_est.select(&permutation)?.with_weak(e_true.weak_indices().iter().copied())?;
    let abundances = a_est.map(|a| a.select(&permutation)).transpose()?;
    Ok(Alignment { cost: assignment_cost(&cost, &permutation), permutation, endmembers, abundances })
}

/// Scans permutations in lexicographic order and keeps the first strict
/// minimum, so ties go to the lowest indices.
fn exhaustive_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(cost, &perm);
    while next_permutation(&mut perm) {
        let c = assignment_cost(cost, &perm);
        if c < best_cost {
            best_cost = c;
            best.clone_from(&perm);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Shortest augmenting path Hungarian algorithm on a square cost matrix.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[matched[j] - 1] = j - 1;
    }
    perm
}
