//! Orthonormal 2-D discrete wavelet transforms (Haar, Symlet-3).
//!
//! Signals of odd length are first extended by one half-sample symmetric
//! sample (the last sample repeated), so every sub-band has `ceil(n / 2)`
//! coefficients. Filter taps that run past the (even) extended length wrap
//! periodically; with an orthonormal filter pair this makes the analysis
//! operator an orthogonal matrix, so synthesis is its transpose and
//! reconstruction is exact.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveletKind {
    Haar,
    Symlet3,
}

impl FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletKind::Haar),
            "sym3" | "symlet3" | "symlet-3" => Ok(WaveletKind::Symlet3),
            other => Err(Error::InvalidArgument(format!("unknown wavelet kind `{other}`"))),
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveletKind::Haar => f.write_str("haar"),
            WaveletKind::Symlet3 => f.write_str("sym3"),
        }
    }
}

/// Symlet-3 analysis low-pass, from the least-asymmetric spectral factor
/// of `1 + 3y + 6y^2` (coincides with Daubechies-3 at this order).
const SYM3_LO: [f64; 6] = [
    0.035_226_291_885_709_536_603,
    -0.085_441_273_882_026_661_693,
    -0.135_011_020_010_254_588_7,
    0.459_877_502_118_491_570_1,
    0.806_891_509_311_092_576_49,
    0.332_670_552_950_082_616,
];

/// Analysis filters plus their time-reversed synthesis duals.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    pub kind: WaveletKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl WaveletFilterPair {
    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    /// Offset that roughly centres the filter support on each output pair.
    fn shift(&self) -> isize {
        (self.lo.len() as isize - 2) / 2
    }
}

pub fn filter_bank(kind: WaveletKind) -> WaveletFilterPair {
    let lo: Vec<f64> = match kind {
        WaveletKind::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        WaveletKind::Symlet3 => SYM3_LO.to_vec(),
    };
    let f = lo.len();
    // quadrature mirror: alternating-sign reversal
    let hi: Vec<f64> =
        (0..f).map(|j| if j % 2 == 0 { lo[f - 1 - j] } else { -lo[f - 1 - j] }).collect();
    let rec_lo = lo.iter().rev().copied().collect();
    let rec_hi = hi.iter().rev().copied().collect();
    WaveletFilterPair { kind, lo, hi, rec_lo, rec_hi }
}

/// The four half-resolution planes of one 2-D analysis step. The first
/// letter names the filter applied along rows (horizontal), the second the
/// filter applied along columns (vertical).
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub height: usize,
    pub width: usize,
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

impl SubbandSet {
    pub fn zeros(height: usize, width: usize) -> Self {
        let z = vec![0.0; height * width];
        Self { height, width, ll: z.clone(), lh: z.clone(), hl: z.clone(), hh: z }
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh].iter().flat_map(|b| b.iter()).map(|v| v * v).sum()
    }
}

pub fn half_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// One-level 1-D analysis of `x` (strided view) into `lo_out`/`hi_out`.
fn analyze_1d(
    filt: &WaveletFilterPair,
    x: impl Fn(usize) -> f64,
    n: usize,
    mut lo_out: impl FnMut(usize, f64),
    mut hi_out: impl FnMut(usize, f64),
) {
    let m = 2 * half_len(n) as isize;
    let shift = filt.shift();
    for k in 0..half_len(n) {
        let mut a = 0.0;
        let mut d = 0.0;
        for (j, (&l, &h)) in filt.lo.iter().zip(&filt.hi).enumerate() {
            let idx = (2 * k as isize + j as isize - shift).rem_euclid(m) as usize;
            let v = x(idx.min(n - 1));
            a += l * v;
            d += h * v;
        }
        lo_out(k, a);
        hi_out(k, d);
    }
}

/// Transpose of the periodic analysis on the extended length `m`, written
/// into `out` of length `m`.
fn synthesize_ext_1d(filt: &WaveletFilterPair, lo: &[f64], hi: &[f64], out: &mut [f64]) {
    let m = out.len() as isize;
    let shift = filt.shift();
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..lo.len() {
        for (j, (&l, &h)) in filt.lo.iter().zip(&filt.hi).enumerate() {
            let idx = (2 * k as isize + j as isize - shift).rem_euclid(m) as usize;
            out[idx] += l * lo[k] + h * hi[k];
        }
    }
}

/// Inverse (`adjoint = false`) or adjoint (`adjoint = true`) of the 1-D
/// analysis for an original length `n`. They differ only for odd `n`:
/// the inverse drops the extension sample, the adjoint folds it back.
fn synthesize_1d(
    filt: &WaveletFilterPair,
    lo: &[f64],
    hi: &[f64],
    n: usize,
    adjoint: bool,
    scratch: &mut Vec<f64>,
) {
    scratch.resize(2 * lo.len(), 0.0);
    synthesize_ext_1d(filt, lo, hi, scratch);
    if n % 2 == 1 && adjoint {
        let extra = scratch[n];
        scratch[n - 1] += extra;
    }
    scratch.truncate(n);
}

fn check_plane(plane: &[f64], h: usize, w: usize) -> Result<()> {
    ensure!(h > 0 && w > 0, InvalidArgument, "cannot transform an empty plane");
    ensure!(plane.len() == h * w, Dimension, "plane has {} values, expected {h}x{w}", plane.len());
    Ok(())
}

/// Separable 2-D analysis: rows first, then columns.
pub fn dwt2(plane: &[f64], h: usize, w: usize, filt: &WaveletFilterPair) -> Result<SubbandSet> {
    check_plane(plane, h, w)?;
    ensure!(plane.iter().all(|v| v.is_finite()), NonFinite, "plane contains non-finite values");
    Ok(dwt2_unchecked(plane, h, w, filt))
}

pub(crate) fn dwt2_unchecked(plane: &[f64], h: usize, w: usize, filt: &WaveletFilterPair) -> SubbandSet {
    let (h2, w2) = (half_len(h), half_len(w));
    // rows: h x w2 low and high
    let mut row_lo = vec![0.0; h * w2];
    let mut row_hi = vec![0.0; h * w2];
    for i in 0..h {
        let row = &plane[i * w..(i + 1) * w];
        let (lo_row, hi_row) = (&mut row_lo[i * w2..(i + 1) * w2], &mut row_hi[i * w2..(i + 1) * w2]);
        analyze_1d(filt, |j| row[j], w, |k, v| lo_row[k] = v, |k, v| hi_row[k] = v);
    }
    let mut out = SubbandSet::zeros(h2, w2);
    let SubbandSet { ll, lh, hl, hh, .. } = &mut out;
    for j in 0..w2 {
        analyze_1d(filt, |i| row_lo[i * w2 + j], h, |k, v| ll[k * w2 + j] = v, |k, v| lh[k * w2 + j] = v);
        analyze_1d(filt, |i| row_hi[i * w2 + j], h, |k, v| hl[k * w2 + j] = v, |k, v| hh[k * w2 + j] = v);
    }
    out
}

/// Inverse of [`dwt2`] for an `out_h x out_w` plane.
pub fn idwt2(sub: &SubbandSet, filt: &WaveletFilterPair, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    ensure!(out_h > 0 && out_w > 0, InvalidArgument, "output plane must be non-empty");
    ensure!(
        sub.height == half_len(out_h) && sub.width == half_len(out_w),
        Dimension,
        "sub-bands are {}x{}, expected {}x{} for a {out_h}x{out_w} plane",
        sub.height,
        sub.width,
        half_len(out_h),
        half_len(out_w)
    );
    let n = sub.height * sub.width;
    for b in [&sub.ll, &sub.lh, &sub.hl, &sub.hh] {
        ensure!(b.len() == n, Dimension, "sub-band length {} does not match {}x{}", b.len(), sub.height, sub.width);
    }
    Ok(synthesize2(sub, filt, out_h, out_w, false))
}

/// Adjoint of [`dwt2`]: maps sub-band gradients back onto the plane.
pub(crate) fn dwt2_adjoint(sub: &SubbandSet, filt: &WaveletFilterPair, out_h: usize, out_w: usize) -> Vec<f64> {
    synthesize2(sub, filt, out_h, out_w, true)
}

fn synthesize2(sub: &SubbandSet, filt: &WaveletFilterPair, h: usize, w: usize, adjoint: bool) -> Vec<f64> {
    let (h2, w2) = (sub.height, sub.width);
    let mut row_lo = vec![0.0; h * w2];
    let mut row_hi = vec![0.0; h * w2];
    let mut lo = vec![0.0; h2];
    let mut hi = vec![0.0; h2];
    let mut scratch = Vec::new();
    for j in 0..w2 {
        for k in 0..h2 {
            lo[k] = sub.ll[k * w2 + j];
            hi[k] = sub.lh[k * w2 + j];
        }
        synthesize_1d(filt, &lo, &hi, h, adjoint, &mut scratch);
        for i in 0..h {
            row_lo[i * w2 + j] = scratch[i];
        }
        for k in 0..h2 {
            lo[k] = sub.hl[k * w2 + j];
            hi[k] = sub.hh[k * w2 + j];
        }
        synthesize_1d(filt, &lo, &hi, h, adjoint, &mut scratch);
        for i in 0..h {
            row_hi[i * w2 + j] = scratch[i];
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        synthesize_1d(filt, &row_lo[i * w2..(i + 1) * w2], &row_hi[i * w2..(i + 1) * w2], w, adjoint, &mut scratch);
        out[i * w..(i + 1) * w].copy_from_slice(&scratch);
    }
    out
}
