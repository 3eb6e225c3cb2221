//! Linear mixing model: cubes, endmembers, abundances, noise and the
//! weak-signal endmember predicate.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::linalg;

/// ASC tolerance used when validating abundances.
pub const ASC_TOL: f64 = 1e-6;

/// An `L x H x W` reflectance volume stored band-major
/// (band, then row, then column).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == bands * height * width,
            Dimension,
            "cube data has {} values, expected {}x{}x{}",
            data.len(),
            bands,
            height,
            width
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            NonFinite,
            "cube contains non-finite values"
        );
        Ok(Self { bands, height, width, data, wavelengths: None })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self { bands, height, width, data: vec![0.0; bands * height * width], wavelengths: None }
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        ensure!(
            wavelengths.len() == self.bands,
            Dimension,
            "{} wavelengths for {} bands",
            wavelengths.len(),
            self.bands
        );
        ensure!(
            wavelengths.iter().all(|w| w.is_finite()) && wavelengths.windows(2).all(|w| w[0] < w[1]),
            InvalidArgument,
            "wavelengths must be finite and strictly increasing"
        );
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// One band as an `H x W` plane.
    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        let n = self.pixels();
        let p = row * self.width + col;
        (0..self.bands).map(|l| self.data[l * n + p]).collect()
    }

    /// Pixel-major copy: `N x L`, one spectrum per row in raster order.
    pub fn to_pixel_major(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; n * self.bands];
        for l in 0..self.bands {
            for (p, v) in self.band(l).iter().enumerate() {
                out[p * self.bands + l] = *v;
            }
        }
        out
    }

    /// Mean square over all entries.
    pub fn signal_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }
}

/// `L x P` endmember signatures (row-major: `data[l * P + r]`) and the
/// indices flagged as weak-signal endmembers.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    count: usize,
    data: Vec<f64>,
    weak: BTreeSet<usize>,
}

impl EndmemberMatrix {
    pub fn new(bands: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == bands * count,
            Dimension,
            "endmember data has {} values, expected {}x{}",
            data.len(),
            bands,
            count
        );
        ensure!(
            data.iter().all(|v| v.is_finite() && *v >= 0.0),
            Constraint,
            "endmember entries must be finite and nonnegative"
        );
        Ok(Self { bands, count, data, weak: BTreeSet::new() })
    }

    /// Builds the matrix from column vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let count = columns.len();
        let bands = columns.first().map_or(0, Vec::len);
        ensure!(
            columns.iter().all(|c| c.len() == bands),
            Dimension,
            "endmember columns have unequal lengths"
        );
        let mut data = vec![0.0; bands * count];
        for (r, col) in columns.iter().enumerate() {
            for (l, v) in col.iter().enumerate() {
                data[l * count + r] = *v;
            }
        }
        Self::new(bands, count, data)
    }

    pub fn with_weak(mut self, weak: impl IntoIterator<Item = usize>) -> Result<Self> {
        let weak: BTreeSet<usize> = weak.into_iter().collect();
        if let Some(&max) = weak.iter().next_back() {
            ensure!(max < self.count, InvalidArgument, "weak index {max} out of range");
        }
        self.weak = weak;
        Ok(self)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn count(&self) -> usize {
        self.count
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn weak_indices(&self) -> &BTreeSet<usize> {
        &self.weak
    }
    pub fn strong_indices(&self) -> BTreeSet<usize> {
        (0..self.count).filter(|r| !self.weak.contains(r)).collect()
    }

    pub fn get(&self, band: usize, r: usize) -> f64 {
        self.data[band * self.count + r]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.bands).map(|l| self.data[l * self.count + r]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.count).map(|r| self.column(r)).collect()
    }

    /// Selects and reorders columns; weak flags follow their columns.
    pub fn select(&self, order: &[usize]) -> Result<Self> {
        for &r in order {
            ensure!(r < self.count, InvalidArgument, "column index {r} out of range");
        }
        let cols: Vec<Vec<f64>> = order.iter().map(|&r| self.column(r)).collect();
        let mut out = if cols.is_empty() {
            Self::new(self.bands, 0, Vec::new())?
        } else {
            Self::from_columns(&cols)?
        };
        out.weak = order
            .iter()
            .enumerate()
            .filter(|(_, r)| self.weak.contains(r))
            .map(|(i, _)| i)
            .collect();
        Ok(out)
    }
}

/// `P x H x W` fractional abundances.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceTensor {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl AbundanceTensor {
    /// Checks shape, finiteness and nonnegativity. The sum-to-one
    /// constraint is checked separately ([`Self::asc_violation`]) because
    /// sub-blocks of a partition are legitimately not normalised.
    pub fn new(count: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == count * height * width,
            Dimension,
            "abundance data has {} values, expected {}x{}x{}",
            data.len(),
            count,
            height,
            width
        );
        ensure!(data.iter().all(|v| v.is_finite()), NonFinite, "abundances contain non-finite values");
        ensure!(data.iter().all(|v| *v >= 0.0), Constraint, "abundance nonnegativity violated");
        Ok(Self { count, height, width, data })
    }

    /// Builds a tensor from pixel-major rows (`N x P`).
    pub fn from_pixel_major(count: usize, height: usize, width: usize, rows: &[f64]) -> Result<Self> {
        let n = height * width;
        ensure!(rows.len() == n * count, Dimension, "pixel-major abundances have wrong length");
        let mut data = vec![0.0; n * count];
        for p in 0..n {
            for r in 0..count {
                data[r * n + p] = rows[p * count + r];
            }
        }
        Self::new(count, height, width, data)
    }

    pub fn count(&self) -> usize {
        self.count
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, row: usize, col: usize) -> f64 {
        self.data[(r * self.height + row) * self.width + col]
    }

    /// Abundance map of endmember `r` (`H x W`).
    pub fn map(&self, r: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        let p = row * self.width + col;
        let n = self.pixels();
        (0..self.count).map(|r| self.data[r * n + p]).collect()
    }

    pub fn to_pixel_major(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; n * self.count];
        for r in 0..self.count {
            for (p, v) in self.map(r).iter().enumerate() {
                out[p * self.count + r] = *v;
            }
        }
        out
    }

    /// Largest per-pixel deviation of the abundance sum from one.
    pub fn asc_violation(&self) -> f64 {
        let n = self.pixels();
        (0..n)
            .map(|p| {
                let s: f64 = (0..self.count).map(|r| self.data[r * n + p]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn check_constraints(&self, tol: f64) -> Result<()> {
        let v = self.asc_violation();
        ensure!(v <= tol, Constraint, "abundance sum-to-one violated by {v:e}");
        Ok(())
    }

    pub fn select(&self, order: &[usize]) -> Result<Self> {
        let n = self.pixels();
        let mut data = Vec::with_capacity(order.len() * n);
        for &r in order {
            ensure!(r < self.count, InvalidArgument, "abundance index {r} out of range");
            data.extend_from_slice(self.map(r));
        }
        Self::new(order.len(), self.height, self.width, data)
    }
}

/// Additive Gaussian noise at a target SNR. `target_snr_db = None` means
/// no noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub target_snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { target_snr_db: None, seed: 0 }
    }

    pub fn snr(db: f64, seed: u64) -> Self {
        Self { target_snr_db: Some(db), seed }
    }
}

/// `Y = E A` without the noise term.
pub fn linear_mix(e: &EndmemberMatrix, a: &AbundanceTensor) -> Result<SpectralCube> {
    a.check_constraints(ASC_TOL)?;
    linear_mix_partial(e, a)
}

/// `E A` for abundance blocks that need not sum to one (partition pieces).
pub fn linear_mix_partial(e: &EndmemberMatrix, a: &AbundanceTensor) -> Result<SpectralCube> {
    ensure!(
        e.count() == a.count(),
        Dimension,
        "{} endmembers but {} abundance maps",
        e.count(),
        a.count()
    );
    let n = a.pixels();
    let data = linalg::matmul(e.bands(), e.count(), n, e.data(), a.data());
    SpectralCube::new(e.bands(), a.height(), a.width(), data)
}

/// Noise variance that realises `snr_db` for a given signal power.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Adds i.i.d. zero-mean Gaussian noise so that the SNR against the
/// mean-square signal power equals the target.
pub fn add_noise_snr(cube: &SpectralCube, spec: &NoiseSpec) -> Result<SpectralCube> {
    ensure!(
        cube.data().iter().all(|v| v.is_finite()),
        NonFinite,
        "cannot add noise to a non-finite cube"
    );
    let Some(db) = spec.target_snr_db else {
        return Ok(cube.clone());
    };
    ensure!(db.is_finite(), InvalidArgument, "target SNR must be finite, got {db}");
    let sigma = noise_variance(cube.signal_power(), db).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = cube.clone();
    for v in out.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(out)
}

/// SNR in dB of `noisy` against `clean`, using the residual as the noise.
pub fn realized_snr_db(clean: &SpectralCube, noisy: &SpectralCube) -> Result<f64> {
    ensure!(clean.data().len() == noisy.data().len(), Dimension, "cube sizes differ");
    let noise: f64 = clean
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / clean.data().len() as f64;
    Ok(10.0 * (clean.signal_power() / noise).log10())
}

/// Thresholds for flagging weak-signal endmembers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakCriteria {
    /// Reflectance below which a band counts as dark.
    pub refl_thresh: f64,
    /// Fraction of dark bands that makes an endmember spectrally weak.
    pub band_frac: f64,
    /// Abundance below which a pixel counts as sparse.
    pub abund_thresh: f64,
    /// Fraction of sparse pixels that makes an endmember spatially weak.
    pub pixel_frac: f64,
}

impl Default for WeakCriteria {
    fn default() -> Self {
        Self { refl_thresh: 0.1, band_frac: 0.7, abund_thresh: 0.1, pixel_frac: 0.6 }
    }
}

/// An endmember is weak if it is dark in more than `band_frac` of the
/// bands, or sparse in more than `pixel_frac` of the pixels.
pub fn classify_weak_endmembers(
    e: &EndmemberMatrix,
    a: &AbundanceTensor,
    criteria: &WeakCriteria,
) -> Result<BTreeSet<usize>> {
    ensure!(e.count() == a.count(), Dimension, "{} endmembers vs {} abundance maps", e.count(), a.count());
    for (name, v) in [
        ("refl_thresh", criteria.refl_thresh),
        ("band_frac", criteria.band_frac),
        ("abund_thresh", criteria.abund_thresh),
        ("pixel_frac", criteria.pixel_frac),
    ] {
        ensure!(v > 0.0 && v < 1.0, InvalidArgument, "{name} must lie in (0, 1), got {v}");
    }
    let mut weak = BTreeSet::new();
    for r in 0..e.count() {
        let dark = (0..e.bands()).filter(|&l| e.get(l, r) < criteria.refl_thresh).count();
        let sparse = a.map(r).iter().filter(|&&v| v < criteria.abund_thresh).count();
        let dark_frac = dark as f64 / e.bands().max(1) as f64;
        let sparse_frac = sparse as f64 / a.pixels().max(1) as f64;
        if dark_frac > criteria.band_frac || sparse_frac > criteria.pixel_frac {
            weak.insert(r);
        }
    }
    Ok(weak)
}

/// Strong/weak split of an unmixing problem.
#[derive(Debug, Clone)]
pub struct Partition {
    pub strong_indices: Vec<usize>,
    pub weak_indices: Vec<usize>,
    pub strong_endmembers: EndmemberMatrix,
    pub strong_abundances: AbundanceTensor,
    pub weak_endmembers: EndmemberMatrix,
    pub weak_abundances: AbundanceTensor,
}

impl Partition {
    /// `E_s A_s + E_w A_w`.
    pub fn reconstruct(&self) -> Result<SpectralCube> {
        let s = linear_mix_partial(&self.strong_endmembers, &self.strong_abundances)?;
        let w = linear_mix_partial(&self.weak_endmembers, &self.weak_abundances)?;
        let data = s.data().iter().zip(w.data()).map(|(a, b)| a + b).collect();
        SpectralCube::new(s.bands(), s.height(), s.width(), data)
    }
}

pub fn partition_endmembers(
    e: &EndmemberMatrix,
    a: &AbundanceTensor,
    weak: &BTreeSet<usize>,
) -> Result<Partition> {
    ensure!(e.count() == a.count(), Dimension, "{} endmembers vs {} abundance maps", e.count(), a.count());
    if let Some(&max) = weak.iter().next_back() {
        if max >= e.count() {
            return Err(Error::InvalidArgument(format!("weak index {max} out of range")));
        }
    }
    let weak_indices: Vec<usize> = weak.iter().copied().collect();
    let strong_indices: Vec<usize> = (0..e.count()).filter(|r| !weak.contains(r)).collect();
    Ok(Partition {
        strong_endmembers: e.select(&strong_indices)?,
        strong_abundances: a.select(&strong_indices)?,
        weak_endmembers: e.select(&weak_indices)?.with_weak(0..weak_indices.len())?,
        weak_abundances: a.select(&weak_indices)?,
        strong_indices,
        weak_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, p: usize, h: usize, w: usize) -> AbundanceTensor {
        let n = h * w;
        let mut rows = vec![0.0; n * p];
        for px in 0..n {
            let v: Vec<f64> = (0..p).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let s: f64 = v.iter().sum();
            for r in 0..p {
                rows[px * p + r] = v[r] / s;
            }
        }
        AbundanceTensor::from_pixel_major(p, h, w, &rows).unwrap()
    }

    fn random_endmembers(rng: &mut ChaCha8Rng, l: usize, p: usize) -> EndmemberMatrix {
        EndmemberMatrix::new(l, p, (0..l * p).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn one_hot_pixel_reproduces_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_endmembers(&mut rng, 5, 3);
        let mut data = vec![0.0; 3 * 2 * 2];
        // every pixel one-hot at endmember (pixel index mod 3)
        for p in 0..4 {
            data[(p % 3) * 4 + p] = 1.0;
        }
        let a = AbundanceTensor::new(3, 2, 2, data).unwrap();
        let y = linear_mix(&e, &a).unwrap();
        for p in 0..4 {
            assert_eq!(y.pixel(p / 2, p % 2), e.column(p % 3));
        }
    }

    #[test]
    fn half_half_is_mean_of_columns() {
        let e = EndmemberMatrix::from_columns(&[vec![0.2, 0.4, 0.9], vec![0.6, 0.0, 0.1]]).unwrap();
        let a = AbundanceTensor::new(2, 3, 3, vec![0.5; 18]).unwrap();
        let y = linear_mix(&e, &a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let px = y.pixel(i, j);
                for (l, v) in px.iter().enumerate() {
                    assert!((v - 0.5 * (e.get(l, 0) + e.get(l, 1))).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = random_endmembers(&mut rng, 6, 3);
        let a = random_simplex(&mut rng, 3, 4, 4);
        let y = linear_mix(&e, &a).unwrap();
        for l in 0..6 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for r in 0..3 {
                        acc += e.get(l, r) * a.get(r, i, j);
                    }
                    assert!((y.get(l, i, j) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mix_rejects_mismatch_and_asc_violation() {
        let e = EndmemberMatrix::new(2, 2, vec![0.1; 4]).unwrap();
        let a3 = AbundanceTensor::new(3, 1, 1, vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(linear_mix(&e, &a3), Err(Error::Dimension(_))));
        let bad = AbundanceTensor::new(2, 1, 1, vec![0.2, 0.3]).unwrap();
        assert!(matches!(linear_mix(&e, &bad), Err(Error::Constraint(_))));
        assert!(AbundanceTensor::new(2, 1, 1, vec![-0.2, 1.2]).is_err());
    }

    #[test]
    fn noise_none_is_identity_and_variance_matches_definition() {
        let cube = SpectralCube::new(2, 2, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        assert_eq!(add_noise_snr(&cube, &NoiseSpec::none()).unwrap(), cube);
        let p = cube.signal_power();
        assert!((noise_variance(p, 10.0) - p / 10.0).abs() < 1e-18);
        assert!((noise_variance(p, 20.0) - p / 100.0).abs() < 1e-18);
        assert!(add_noise_snr(&cube, &NoiseSpec::snr(f64::NAN, 1)).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let cube = SpectralCube::new(3, 4, 4, (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        let a = add_noise_snr(&cube, &NoiseSpec::snr(15.0, 99)).unwrap();
        let b = add_noise_snr(&cube, &NoiseSpec::snr(15.0, 99)).unwrap();
        let c = add_noise_snr(&cube, &NoiseSpec::snr(15.0, 100)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn realized_snr_on_large_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..459 * 80 * 80).map(|_| rng.random::<f64>()).collect();
        let cube = SpectralCube::new(459, 80, 80, data).unwrap();
        let noisy = add_noise_snr(&cube, &NoiseSpec::snr(20.0, 5)).unwrap();
        let snr = realized_snr_db(&cube, &noisy).unwrap();
        assert!((snr - 20.0).abs() < 0.1, "realized {snr}");
    }

    #[test]
    fn weak_predicate_cases() {
        let crit = WeakCriteria::default();
        // constant 0.5 reflectance, 0.5 abundance: not weak
        let e = EndmemberMatrix::new(10, 2, vec![0.5; 20]).unwrap();
        let a = AbundanceTensor::new(2, 2, 2, vec![0.5; 8]).unwrap();
        assert!(classify_weak_endmembers(&e, &a, &crit).unwrap().is_empty());

        // column 0 below 0.1 in 71 of 100 bands, high abundance: weak spectrally
        let mut cols = vec![vec![0.5; 100], vec![0.5; 100]];
        for l in 0..71 {
            cols[0][l] = 0.05;
        }
        let e = EndmemberMatrix::from_columns(&cols).unwrap();
        let a = AbundanceTensor::new(2, 1, 2, vec![0.9, 0.9, 0.1, 0.1]).unwrap();
        let weak = classify_weak_endmembers(&e, &a, &crit).unwrap();
        assert!(weak.contains(&0));
        // exactly 70% is not "more than 70%"
        cols[0][70] = 0.5;
        let e = EndmemberMatrix::from_columns(&cols).unwrap();
        assert!(!classify_weak_endmembers(&e, &a, &crit).unwrap().contains(&0));
        // column 1 has abundance 0.1 everywhere: not below 0.1, so not weak
        assert!(!classify_weak_endmembers(&e, &a, &crit).unwrap().contains(&1));

        let bad = WeakCriteria { band_frac: 1.5, ..crit };
        assert!(classify_weak_endmembers(&e, &a, &bad).is_err());
    }

    #[test]
    fn partition_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = random_endmembers(&mut rng, 6, 4);
        let a = random_simplex(&mut rng, 4, 3, 3);
        let full = linear_mix(&e, &a).unwrap();

        let none = partition_endmembers(&e, &a, &BTreeSet::new()).unwrap();
        assert_eq!(none.weak_endmembers.count(), 0);
        assert_eq!(none.strong_endmembers, e);

        let all = partition_endmembers(&e, &a, &(0..4).collect()).unwrap();
        assert_eq!(all.strong_endmembers.count(), 0);

        for p in [none, all] {
            let y = p.reconstruct().unwrap();
            for (x, z) in y.data().iter().zip(full.data()) {
                assert!((x - z).abs() < 1e-12);
            }
        }
        assert!(partition_endmembers(&e, &a, &[4].into_iter().collect()).is_err());
    }
}
