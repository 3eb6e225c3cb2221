//! Spectral libraries and the blocked synthetic scene.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{ensure, Error, Result};
use crate::mixing::{classify_weak_endmembers, linear_mix, AbundanceTensor, EndmemberMatrix, SpectralCube, WeakCriteria};

/// Four-material example library shipped with the crate (400-2500 nm in
/// 5 nm steps). The magnetite stand-in is dark in every band.
pub const BUNDLED_LIBRARY_CSV: &str = include_str!("../data/s1_library.csv");

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSignature {
    pub name: String,
    pub wavelengths: Vec<f64>,
    pub reflectance: Vec<f64>,
}

impl SpectralSignature {
    pub fn new(name: impl Into<String>, wavelengths: Vec<f64>, reflectance: Vec<f64>) -> Result<Self> {
        let name = name.into();
        ensure!(
            wavelengths.len() == reflectance.len(),
            Dimension,
            "signature {name}: {} wavelengths but {} values",
            wavelengths.len(),
            reflectance.len()
        );
        ensure!(!wavelengths.is_empty(), InvalidArgument, "signature {name} is empty");
        ensure!(
            wavelengths.iter().chain(&reflectance).all(|v| v.is_finite()),
            NonFinite,
            "signature {name} contains non-finite values"
        );
        ensure!(
            wavelengths.windows(2).all(|w| w[0] < w[1]),
            Format,
            "signature {name}: wavelengths must be strictly increasing"
        );
        ensure!(reflectance.iter().all(|&v| v >= 0.0), Format, "signature {name} has negative reflectance");
        Ok(Self { name, wavelengths, reflectance })
    }
}

/// Parses `wavelength_nm,<name1>,<name2>,...` CSV text.
pub fn parse_spectral_library(reader: impl Read) -> Result<Vec<SpectralSignature>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    ensure!(headers.len() >= 2, Format, "library needs a wavelength column and at least one material");
    ensure!(
        headers[0].eq_ignore_ascii_case("wavelength_nm"),
        Format,
        "first column must be wavelength_nm, found {:?}",
        &headers[0]
    );
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut wavelengths = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        ensure!(record.len() == headers.len(), Format, "line {line}: expected {} fields, got {}", headers.len(), record.len());
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("line {line}: {s:?} is not a number")));
        wavelengths.push(parse(&record[0])?);
        for (col, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            col.push(parse(field)?);
        }
    }
    ensure!(!wavelengths.is_empty(), Format, "library has no rows");
    if let Some(i) = wavelengths.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::Format(format!(
            "wavelengths must be strictly increasing: {} then {} at line {}",
            wavelengths[i],
            wavelengths[i + 1],
            i + 3
        )));
    }
    names.into_iter().zip(columns).map(|(name, refl)| SpectralSignature::new(name, wavelengths.clone(), refl)).collect()
}

pub fn load_spectral_library(path: impl AsRef<Path>) -> Result<Vec<SpectralSignature>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_spectral_library(file)
}

pub fn bundled_library() -> Vec<SpectralSignature> {
    parse_spectral_library(BUNDLED_LIBRARY_CSV.as_bytes()).expect("bundled library is valid")
}

/// `count` wavelengths evenly spaced over `[min, max]`, both included.
pub fn uniform_wavelengths(count: usize, min: f64, max: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..count).map(|i| min + (max - min) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Linear interpolation of `sig` at `count` uniform wavelengths spanning
/// `[min, max]`.
pub fn resample_signature(sig: &SpectralSignature, count: usize, min: f64, max: f64) -> Result<Vec<f64>> {
    ensure!(count >= 1, InvalidArgument, "band count must be positive");
    ensure!(min <= max, InvalidArgument, "empty wavelength range {min}..{max}");
    let (lo, hi) = (sig.wavelengths[0], *sig.wavelengths.last().unwrap());
    ensure!(
        min >= lo && max <= hi,
        InvalidArgument,
        "range {min}-{max} nm lies outside the {lo}-{hi} nm support of {}",
        sig.name
    );
    let w = &sig.wavelengths;
    let r = &sig.reflectance;
    Ok(uniform_wavelengths(count, min, max)
        .into_iter()
        .map(|x| {
            // first knot at or beyond x
            let k = w.partition_point(|&v| v < x);
            if k < w.len() && w[k] == x {
                r[k]
            } else {
                let t = (x - w[k - 1]) / (w[k] - w[k - 1]);
                r[k - 1] + t * (r[k] - r[k - 1])
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    /// Blocks per image side.
    pub grid: usize,
    /// Pixels per block side.
    pub block_px: usize,
    pub bands: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub materials_per_block: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { grid: 4, block_px: 20, bands: 459, lambda_min: 400.0, lambda_max: 2500.0, materials_per_block: 3, seed: 0 }
    }
}

impl SceneSpec {
    pub fn side(&self) -> usize {
        self.grid * self.block_px
    }
}

/// A synthetic scene and its ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    pub cube: SpectralCube,
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceTensor,
    pub names: Vec<String>,
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else { break };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    out
}

/// Square image of `grid x grid` blocks, each a constant mixture of
/// `materials_per_block` endmembers with Dirichlet(1, ..., 1) fractions.
/// Material subsets cycle through all combinations in a seeded order.
pub fn generate_blocked_scene(signatures: &[SpectralSignature], spec: &SceneSpec) -> Result<Scene> {
    let p = signatures.len();
    let k = spec.materials_per_block;
    ensure!(spec.grid >= 1 && spec.block_px >= 1, InvalidArgument, "grid and block size must be positive");
    ensure!(spec.bands >= 1, InvalidArgument, "band count must be positive");
    ensure!(k >= 1, InvalidArgument, "materials_per_block must be positive");
    ensure!(p >= k, InvalidArgument, "{k} materials per block need at least {k} signatures, got {p}");

    let columns: Vec<Vec<f64>> = signatures
        .iter()
        .map(|s| resample_signature(s, spec.bands, spec.lambda_min, spec.lambda_max))
        .collect::<Result<_>>()?;
    let e = EndmemberMatrix::from_columns(&columns)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut combos = combinations(p, k);
    combos.shuffle(&mut rng);

    let side = spec.side();
    let mut data = vec![0.0; p * side * side];
    for block in 0..spec.grid * spec.grid {
        let chosen = &combos[block % combos.len()];
        let draws: Vec<f64> = chosen.iter().map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let (by, bx) = (block / spec.grid, block % spec.grid);
        for (&r, &d) in chosen.iter().zip(&draws) {
            let frac = d / total;
            for y in by * spec.block_px..(by + 1) * spec.block_px {
                let row = (r * side + y) * side;
                data[row + bx * spec.block_px..row + (bx + 1) * spec.block_px].fill(frac);
            }
        }
    }
    let a = AbundanceTensor::new(p, side, side, data)?;
    let weak = classify_weak_endmembers(&e, &a, &WeakCriteria::default())?;
    let e = e.with_weak(weak)?;
    let cube = linear_mix(&e, &a)?.with_wavelengths(uniform_wavelengths(spec.bands, spec.lambda_min, spec.lambda_max))?;
    Ok(Scene { cube, endmembers: e, abundances: a, names: signatures.iter().map(|s| s.name.clone()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_and_invalid_files() {
        let lib = parse_spectral_library("wavelength_nm,x\n400,0.1\n500,0.2\n".as_bytes()).unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib[0].reflectance, vec![0.1, 0.2]);
        assert!(matches!(
            parse_spectral_library("wavelength_nm,x\n400,0.1\n400,0.2\n".as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(parse_spectral_library("wavelength_nm,x\n500,0.1\n400,0.2\n".as_bytes()).is_err());
        assert!(parse_spectral_library("wavelength_nm,x\n400,-0.1\n".as_bytes()).is_err());
        assert!(parse_spectral_library("wavelength_nm,x\n400,abc\n".as_bytes()).is_err());
        assert!(parse_spectral_library("lambda,x\n400,0.1\n".as_bytes()).is_err());
        assert!(parse_spectral_library("wavelength_nm,x\n".as_bytes()).is_err());
        assert!(parse_spectral_library("wavelength_nm,x,y\n400,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn four_material_file_dimensions() {
        let mut text = String::from("wavelength_nm,a,b,c,d\n");
        for i in 0..480 {
            text.push_str(&format!("{},{},{},{},{}\n", 400 + 4 * i, 0.1, 0.2, 0.3, 0.4));
        }
        let lib = parse_spectral_library(text.as_bytes()).unwrap();
        assert_eq!(lib.len(), 4);
        assert!(lib.iter().all(|s| s.reflectance.len() == 480));
    }

    #[test]
    fn library_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.csv");
        std::fs::write(&path, BUNDLED_LIBRARY_CSV).unwrap();
        assert_eq!(load_spectral_library(&path).unwrap(), bundled_library());
        assert!(matches!(load_spectral_library(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn resampling_examples() {
        let c = SpectralSignature::new("c", vec![400.0, 1000.0, 2500.0], vec![0.3; 3]).unwrap();
        assert!(resample_signature(&c, 17, 400.0, 2500.0).unwrap().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let s = SpectralSignature::new("s", vec![400.0, 600.0, 900.0], vec![0.1, 0.5, 0.2]).unwrap();
        assert_eq!(resample_signature(&s, 2, 400.0, 900.0).unwrap(), vec![0.1, 0.2]);
        let mid = resample_signature(&s, 3, 500.0, 700.0).unwrap();
        assert!((mid[0] - 0.3).abs() < 1e-15);
        assert_eq!(mid[1], 0.5);
        assert!(resample_signature(&s, 5, 300.0, 900.0).is_err());
        assert!(resample_signature(&s, 5, 400.0, 901.0).is_err());
    }

    #[test]
    fn default_scene_shape_and_weak_flag() {
        let lib = bundled_library();
        let spec = SceneSpec { seed: 3, ..SceneSpec::default() };
        let scene = generate_blocked_scene(&lib, &spec).unwrap();
        assert_eq!((scene.cube.bands(), scene.cube.height(), scene.cube.width()), (459, 80, 80));
        assert_eq!(scene.names[0], "magnetite");
        assert!(scene.endmembers.weak_indices().contains(&0));
        // every block is a ternary mixture with constant abundances
        for block in 0..16 {
            let (by, bx) = (block / 4, block % 4);
            let a = scene.abundances.pixel(by * 20, bx * 20);
            assert_eq!(a.iter().filter(|&&v| v > 0.0).count(), 3);
            for y in by * 20..(by + 1) * 20 {
                for x in bx * 20..(bx + 1) * 20 {
                    assert_eq!(scene.abundances.pixel(y, x), a);
                }
            }
        }
        assert_eq!(scene.cube, linear_mix(&scene.endmembers, &scene.abundances).unwrap().with_wavelengths(scene.cube.wavelengths().unwrap().to_vec()).unwrap());
    }

    #[test]
    fn single_material_blocks_are_pure() {
        let lib = bundled_library();
        let spec = SceneSpec { grid: 2, block_px: 3, bands: 20, materials_per_block: 1, ..SceneSpec::default() };
        let scene = generate_blocked_scene(&lib, &spec).unwrap();
        for v in scene.abundances.data() {
            assert!(*v == 0.0 || *v == 1.0);
        }
    }

    #[test]
    fn seeded_scenes_are_reproducible() {
        let lib = bundled_library();
        let spec = SceneSpec { grid: 3, block_px: 4, bands: 30, seed: 11, ..SceneSpec::default() };
        let a = generate_blocked_scene(&lib, &spec).unwrap();
        let b = generate_blocked_scene(&lib, &spec).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.abundances, b.abundances);
        let c = generate_blocked_scene(&lib, &SceneSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.abundances, c.abundances);
    }

    #[test]
    fn too_few_signatures() {
        let lib = bundled_library();
        let spec = SceneSpec { materials_per_block: 3, ..SceneSpec::default() };
        assert!(generate_blocked_scene(&lib[..2], &spec).is_err());
    }

    #[test]
    fn combinations_are_complete() {
        assert_eq!(combinations(4, 3), vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]]);
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generated_abundances_are_valid(seed in any::<u64>(), k in 1usize..=4, grid in 1usize..4) {
            let lib = bundled_library();
            let spec = SceneSpec { grid, block_px: 2, bands: 12, materials_per_block: k, seed, ..SceneSpec::default() };
            let scene = generate_blocked_scene(&lib, &spec).unwrap();
            prop_assert!(scene.abundances.data().iter().all(|&v| v >= 0.0));
            prop_assert!(scene.abundances.asc_violation() < 1e-12);
            let direct = linear_mix(&scene.endmembers, &scene.abundances).unwrap();
            prop_assert_eq!(scene.cube.data(), direct.data());
            if k == 4 {
                for r in 0..4 {
                    prop_assert!(scene.abundances.map(r).iter().any(|&v| v > 0.0));
                }
            }
        }
    }
}
