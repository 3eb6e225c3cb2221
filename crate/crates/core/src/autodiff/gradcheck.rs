//! Central finite-difference check of reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{ensure, Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter and flat coordinate where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

/// `|a - b| / max(|a|, |b|)`, or 0 when both magnitudes are below 1e-12.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m < 1e-12 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn evaluate<F>(f: &mut F, params: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let v = g.value(loss);
    ensure!(v.numel() == 1, InvalidArgument, "grad_check needs a scalar function, got shape {:?}", v.shape());
    let v = v.item();
    ensure!(v.is_finite(), NonFinite, "function value {v}");
    Ok(v)
}

/// Compares the gradients of the scalar graph built by `f` against central
/// differences with the given `step`. Parameters larger than `max_coords`
/// entries are checked on a seeded random subset of coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_scaled(f, params, step, max_coords, seed, 0.0)
}

/// [`grad_check`] where each error is measured against at least
/// `floor * max|grad|`, so coordinates with near-zero gradients are compared
/// on an absolute scale instead of against finite-difference noise.
pub fn grad_check_scaled<F>(
    mut f: F,
    params: &[Tensor],
    step: f64,
    max_coords: usize,
    seed: u64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    ensure!((1e-7..=1e-3).contains(&step), InvalidArgument, "step {step} outside [1e-7, 1e-3]");
    ensure!(max_coords > 0, InvalidArgument, "max_coords must be positive");

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(params).map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()))).collect();
    drop(g);
    let scale = floor * analytic.iter().flat_map(|t| t.data()).fold(0.0f64, |m, v| m.max(v.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport::default();
    for (pi, grad) in analytic.iter().enumerate() {
        let n = params[pi].numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = rand::seq::index::sample(&mut rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = params[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + step;
            let up = evaluate(&mut f, &work)?;
            work[pi].data_mut()[idx] = orig - step;
            let down = evaluate(&mut f, &work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[idx];
            let err = if a.abs().max(numeric.abs()) < scale {
                (a - numeric).abs() / scale
            } else {
                relative_error(a, numeric)
            };
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((pi, idx));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    if !report.max_rel_err.is_finite() {
        return Err(Error::NonFinite("relative error".into()));
    }
    Ok(report)
}
