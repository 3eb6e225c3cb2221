//! Classical baselines: VCA endmember extraction and fully constrained
//! least squares abundance estimation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::linalg::gemm;
use crate::mixing::{AbundanceTensor, EndmemberMatrix, SpectralCube};

/// Outcome of [`vca_with_indices`].
#[derive(Clone, Debug)]
pub struct VcaResult {
    pub endmembers: EndmemberMatrix,
    /// Flat pixel index (`row * width + col`) of each selected spectrum.
    pub indices: Vec<usize>,
    /// Estimated SNR in dB (infinite for noiseless data).
    pub snr_estimate_db: f64,
}

/// Vertex component analysis. Returns `r` pixel spectra of the cube,
/// with negative (noise) entries set to zero.
pub fn vca(cube: &SpectralCube, r: usize, seed: u64) -> Result<EndmemberMatrix> {
    Ok(vca_with_indices(cube, r, seed)?.endmembers)
}

/// Eigenvectors of a symmetric matrix for its `d` largest eigenvalues, as
/// columns.
fn top_eigenvectors(m: DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(eig.eigenvectors.nrows(), d, |i, j| eig.eigenvectors[(i, order[j])])
}

/// `Y Y^T / N` for a row-major `l x n` matrix.
fn scatter(y: &[f64], l: usize, n: usize) -> DMatrix<f64> {
    let mut c = vec![0.0; l * l];
    gemm(l, n, l, 1.0 / n as f64, y, false, y, true, 0.0, &mut c);
    DMatrix::from_row_slice(l, l, &c)
}

/// `U^T Y` for `u: l x d` and row-major `y: l x n`, as a row-major `d x n`.
fn project(u: &DMatrix<f64>, y: &[f64], l: usize, n: usize) -> Vec<f64> {
    let d = u.ncols();
    // nalgebra is column-major, so its storage is U^T in row-major order
    let ut: Vec<f64> = u.as_slice().to_vec();
    let mut out = vec![0.0; d * n];
    gemm(d, l, n, 1.0, &ut, false, y, false, 0.0, &mut out);
    out
}

pub fn vca_with_indices(cube: &SpectralCube, r: usize, seed: u64) -> Result<VcaResult> {
    let (l, n) = (cube.bands(), cube.pixels());
    ensure!(r >= 1, InvalidArgument, "endmember count must be positive");
    ensure!(r <= l.min(n), InvalidArgument, "cannot extract {r} endmembers from {l} bands and {n} pixels");
    let y = cube.data();
    let column = |j: usize| (0..l).map(|b| y[b * n + j]).collect::<Vec<f64>>();

    if r == 1 {
        let best = (0..n)
            .map(|j| (j, (0..l).map(|b| y[b * n + j] * y[b * n + j]).sum::<f64>()))
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        let endmembers = EndmemberMatrix::from_columns(&[column(best.0)])?;
        return Ok(VcaResult { endmembers, indices: vec![best.0], snr_estimate_db: f64::INFINITY });
    }

    let mean: Vec<f64> = (0..l).map(|b| y[b * n..(b + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let centred: Vec<f64> = (0..l * n).map(|i| y[i] - mean[i / n]).collect();
    let ud = top_eigenvectors(scatter(&centred, l, n), r);
    let xp = project(&ud, &centred, l, n);

    // SNR estimate from the signal subspace energy
    let p_y = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let p_x = xp.iter().map(|v| v * v).sum::<f64>() / n as f64 + mean.iter().map(|v| v * v).sum::<f64>();
    let noise = p_y - p_x;
    let signal = p_x - (r as f64 / l as f64) * p_y;
    let snr = if noise <= 1e-12 * p_y { f64::INFINITY } else { 10.0 * (signal / noise).log10() };
    let snr_th = 15.0 + 10.0 * (r as f64).log10();

    // rows of `proj` are the r coordinates used for the vertex search
    let proj: Vec<f64> = if snr.is_nan() || snr < snr_th {
        let d = r - 1;
        let x = &xp[..d * n];
        let c = (0..n).map(|j| (0..d).map(|i| x[i * n + j] * x[i * n + j]).sum::<f64>()).fold(0.0, f64::max).sqrt();
        let mut p = x.to_vec();
        p.extend(std::iter::repeat_n(c, n));
        p
    } else {
        let ud = top_eigenvectors(scatter(y, l, n), r);
        let x = project(&ud, y, l, n);
        let u: Vec<f64> = (0..r).map(|i| x[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let mut p = vec![0.0; r * n];
        for j in 0..n {
            let s: f64 = (0..r).map(|i| u[i] * x[i * n + j]).sum();
            ensure!(s.abs() > f64::MIN_POSITIVE, RankDeficient, "pixel {j} is orthogonal to the mean direction");
            for i in 0..r {
                p[i * n + j] = x[i * n + j] / s;
            }
        }
        p
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::<f64>::zeros(r, r);
    a[(r - 1, 0)] = 1.0;
    let mut indices = Vec::with_capacity(r);
    for i in 0..r {
        let w = DVector::from_fn(r, |_, _| rng.random::<f64>());
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let pinv = svd.pseudo_inverse(smax * 1e-12).map_err(|e| Error::RankDeficient(e.to_string()))?;
        let f = &w - &a * (pinv * &w);
        let fnorm = f.norm();
        ensure!(fnorm > 1e-12, RankDeficient, "projection direction vanished at endmember {i}");
        let f = f / fnorm;
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..n {
            let v: f64 = (0..r).map(|k| f[k] * proj[k * n + j]).sum::<f64>().abs();
            if v > best.1 {
                best = (j, v);
            }
        }
        indices.push(best.0);
        for k in 0..r {
            a[(k, i)] = proj[k * n + best.0];
        }
    }
    let rank = a.clone().svd(false, false).rank(1e-10 * a.norm().max(f64::MIN_POSITIVE));
    ensure!(rank == r, RankDeficient, "the cube spans only {rank} of {r} requested endmember directions");

    // noisy pixels can dip below zero; reflectance cannot
    let cols: Vec<Vec<f64>> = indices.iter().map(|&j| column(j).into_iter().map(|v| v.max(0.0)).collect()).collect();
    Ok(VcaResult { endmembers: EndmemberMatrix::from_columns(&cols)?, indices, snr_estimate_db: snr })
}

/// Settings of [`fclsu`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FclsuSettings {
    pub max_iter: usize,
    /// KKT tolerance on the gradient of inactive variables, on top of the
    /// rounding level of the augmented problem.
    pub tol: f64,
    /// The sum-to-one row is weighted by `1 / asc_penalty`.
    pub asc_penalty: f64,
}

impl Default for FclsuSettings {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-10, asc_penalty: 1e-5 }
    }
}

impl FclsuSettings {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.max_iter > 0, InvalidArgument, "max_iter must be positive");
        ensure!(self.tol > 0.0 && self.tol.is_finite(), InvalidArgument, "tol must be positive");
        ensure!(
            self.asc_penalty > 0.0 && self.asc_penalty.is_finite(),
            InvalidArgument,
            "asc_penalty must be positive"
        );
        Ok(())
    }
}

/// Least squares on the columns `set` of `a`, via Householder QR.
fn solve_subset(a: &DMatrix<f64>, b: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(set);
    let qr = sub.qr();
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let k = set.len();
    let r = qr.r();
    let top = rhs.rows(0, k).into_owned();
    r.solve_upper_triangular(&top).unwrap_or_else(|| DVector::from_element(k, f64::NAN))
}

/// Lawson–Hanson active-set solver for `min ||A x - b||` subject to `x >= 0`.
/// Returns `None` when `max_iter` is exhausted.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize, tol: f64) -> Option<DVector<f64>> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    // w_j = a_j^T r carries rounding of order eps * sum_l |a_lj b_l|; a
    // heavily weighted row makes that the dominant scale
    let noise = (0..p)
        .map(|j| a.column(j).iter().zip(b.iter()).map(|(x, y)| (x * y).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let thresh = tol + 16.0 * f64::EPSILON * noise;
    let mut iterations = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..p).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(t) if w[t] > thresh => passive[t] = true,
            _ => return Some(x),
        }
        loop {
            iterations += 1;
            if iterations > max_iter {
                return None;
            }
            let set: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let s_p = solve_subset(a, b, &set);
            if s_p.iter().any(|v| !v.is_finite()) {
                return None;
            }
            if s_p.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in set.iter().enumerate() {
                    x[j] = s_p[k];
                }
                break;
            }
            // step back to the feasible boundary and drop the blocking variables
            let mut alpha = f64::INFINITY;
            for (k, &j) in set.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - s_p[k]));
                }
            }
            for (k, &j) in set.iter().enumerate() {
                x[j] += alpha * (s_p[k] - x[j]);
            }
            let floor = 16.0 * f64::EPSILON * x.amax();
            for (k, &j) in set.iter().enumerate() {
                if x[j] <= 0.0 || (s_p[k] <= 0.0 && x[j] <= floor) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
}

/// Fully constrained least squares unmixing of every pixel.
pub fn fclsu(cube: &SpectralCube, e: &EndmemberMatrix, settings: &FclsuSettings) -> Result<AbundanceTensor> {
    settings.validate()?;
    let (l, p) = (e.bands(), e.count());
    ensure!(cube.bands() == l, Dimension, "cube has {} bands, endmembers have {l}", cube.bands());
    ensure!(p >= 1, InvalidArgument, "no endmembers");
    let em = DMatrix::from_row_slice(l, p, e.data());
    let sv = em.clone().svd(false, false).singular_values;
    ensure!(
        sv.min() > 1e-12 * sv.max(),
        RankDeficient,
        "endmember matrix is rank deficient (singular values {:?})",
        sv.as_slice()
    );
    let weight = 1.0 / settings.asc_penalty;
    let mut aug = DMatrix::zeros(l + 1, p);
    aug.rows_mut(0, l).copy_from(&em);
    aug.row_mut(l).fill(weight);

    let px = cube.to_pixel_major();
    let mut rows = Vec::with_capacity(cube.pixels() * p);
    let mut b = DVector::zeros(l + 1);
    for (idx, spectrum) in px.chunks(l).enumerate() {
        b.rows_mut(0, l).copy_from_slice(spectrum);
        b[l] = weight;
        let x = nnls(&aug, &b, settings.max_iter, settings.tol)
            .ok_or_else(|| Error::NoConvergence(format!("pixel {idx} after {} iterations", settings.max_iter)))?;
        let s: f64 = x.iter().sum();
        ensure!(s > 0.0, NoConvergence, "pixel {idx} produced an all-zero solution");
        rows.extend(x.iter().map(|v| v / s));
    }
    AbundanceTensor::from_pixel_major(p, cube.height(), cube.width(), &rows)
}

/// `||y - E a||^2` for one pixel.
pub fn pixel_objective(e: &EndmemberMatrix, y: &[f64], a: &[f64]) -> f64 {
    (0..e.bands())
        .map(|l| {
            let r = y[l] - (0..e.count()).map(|k| e.get(l, k) * a[k]).sum::<f64>();
            r * r
        })
        .sum()
}
