//! SNR sweep and single-scene comparison.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BaselineEndmembers, ExperimentConfig, SceneSource};
use super::hsc::{read_abundances, read_cube};
use super::outputs::csv_bytes;
use super::write_atomic;
use crate::classical::{fclsu, vca, FclsuSettings};
use crate::error::{ensure, Error, Result};
use crate::mixing::{add_noise_snr, classify_weak_endmembers, AbundanceTensor, EndmemberMatrix, NoiseSpec, SpectralCube, WeakCriteria};
use crate::model::{infer, train, WsNetConfig};
use crate::objectives::{align_endmembers, metric_abundance_rmse, metric_endmember_sad, AbundanceRmse, EndmemberSad, LossBreakdown};
use crate::scene::{bundled_library, generate_blocked_scene, load_spectral_library};

/// Noiseless cube with its ground truth.
#[derive(Clone, Debug)]
pub struct TruthScene {
    pub cube: SpectralCube,
    /// Weak flags set by [`classify_weak_endmembers`].
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceTensor,
    pub names: Vec<String>,
    pub wavelengths: Vec<f64>,
}

pub fn load_scene(source: &SceneSource) -> Result<TruthScene> {
    match source {
        SceneSource::Synth { spec, library } => {
            let sigs = match library {
                Some(p) => load_spectral_library(p)?,
                None => bundled_library(),
            };
            let s = generate_blocked_scene(&sigs, spec)?;
            let wavelengths = s.cube.wavelengths().map(<[f64]>::to_vec).unwrap_or_default();
            Ok(TruthScene { cube: s.cube, endmembers: s.endmembers, abundances: s.abundances, names: s.names, wavelengths })
        }
        SceneSource::File { cube, endmembers, abundances } => {
            let sigs = load_spectral_library(endmembers)?;
            let cube = read_cube(cube)?;
            let a = read_abundances(abundances)?;
            let wavelengths = sigs[0].wavelengths.clone();
            ensure!(
                wavelengths.len() == cube.bands(),
                Dimension,
                "truth endmembers have {} bands, cube has {}",
                wavelengths.len(),
                cube.bands()
            );
            ensure!(
                a.height() == cube.height() && a.width() == cube.width(),
                Dimension,
                "abundances are {}x{}, cube is {}x{}",
                a.height(),
                a.width(),
                cube.height(),
                cube.width()
            );
            let cols: Vec<Vec<f64>> = sigs.iter().map(|s| s.reflectance.clone()).collect();
            let e = EndmemberMatrix::from_columns(&cols)?;
            let weak = classify_weak_endmembers(&e, &a, &WeakCriteria::default())?;
            Ok(TruthScene {
                cube: cube.with_wavelengths(wavelengths.clone())?,
                endmembers: e.with_weak(weak)?,
                abundances: a,
                names: sigs.into_iter().map(|s| s.name).collect(),
                wavelengths,
            })
        }
    }
}

/// Noise seed of the `level`-th SNR entry: first draw of stream `level`
/// of a generator keyed by the experiment seed.
pub fn noise_seed(seed: u64, level: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level as u64 + 1);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Fclsu(BaselineEndmembers),
    WsNet,
}

/// Report label. Disabled WS-Net branches are listed after a minus sign.
pub fn method_label(method: Method, cfg: &WsNetConfig) -> String {
    match method {
        Method::Fclsu(BaselineEndmembers::Vca) => "FCLSU+VCA".into(),
        Method::Fclsu(BaselineEndmembers::Truth) => "FCLSU+truth".into(),
        Method::WsNet => {
            let off: Vec<&str> = [("mamba", cfg.enable_mamba), ("attention", cfg.enable_attention), ("wsa", cfg.enable_wsa)]
                .into_iter()
                .filter(|(_, on)| !on)
                .map(|(n, _)| n)
                .collect();
            if off.is_empty() {
                "WS-Net".into()
            } else {
                format!("WS-Net-{}", off.join("-"))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Unmixed {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceTensor,
    /// Training losses; empty for the baseline.
    pub history: Vec<LossBreakdown>,
}

pub fn unmix_fclsu(cube: &SpectralCube, endmembers: &EndmemberMatrix) -> Result<Unmixed> {
    let abundances = fclsu(cube, endmembers, &FclsuSettings::default())?;
    Ok(Unmixed { endmembers: endmembers.clone(), abundances, history: Vec::new() })
}

pub fn unmix_wsnet(cube: &SpectralCube, cfg: &WsNetConfig) -> Result<Unmixed> {
    let out = train(cube, cfg)?;
    let inf = infer(cube, &out.params, cfg)?;
    Ok(Unmixed { endmembers: inf.endmembers, abundances: inf.abundances, history: out.history })
}

/// Metrics after aligning the estimate to the truth.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub permutation: Vec<usize>,
    pub rmse: AbundanceRmse,
    pub sad: EndmemberSad,
    pub weak: Vec<usize>,
}

impl Evaluation {
    pub fn weak_rmse(&self) -> Option<f64> {
        mean_of(&self.weak, &self.rmse.per_endmember)
    }

    pub fn weak_sad(&self) -> Option<f64> {
        mean_of(&self.weak, &self.sad.per_endmember)
    }
}

fn mean_of(idx: &[usize], v: &[f64]) -> Option<f64> {
    (!idx.is_empty()).then(|| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64)
}

pub fn evaluate(truth_e: &EndmemberMatrix, truth_a: &AbundanceTensor, est_e: &EndmemberMatrix, est_a: &AbundanceTensor) -> Result<Evaluation> {
    let al = align_endmembers(truth_e, est_e, Some(est_a))?;
    let a = al.abundances.expect("alignment was given abundances");
    Ok(Evaluation {
        rmse: metric_abundance_rmse(truth_a, &a)?,
        sad: metric_endmember_sad(truth_e, &al.endmembers)?,
        permutation: al.permutation,
        weak: truth_e.weak_indices().iter().copied().collect(),
    })
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub snr_db: Option<f64>,
    pub method: String,
    pub unmixed: Unmixed,
    pub evaluation: Evaluation,
}

fn methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let mut m = Vec::new();
    if cfg.run_fclsu {
        m.push(Method::Fclsu(cfg.fclsu_endmembers));
    }
    if cfg.run_wsnet {
        m.push(Method::WsNet);
    }
    m
}

fn run_method(method: Method, cube: &SpectralCube, truth: &TruthScene, cfg: &ExperimentConfig) -> Result<Unmixed> {
    match method {
        Method::Fclsu(BaselineEndmembers::Vca) => unmix_fclsu(cube, &vca(cube, cfg.model.endmembers, cfg.seed)?),
        Method::Fclsu(BaselineEndmembers::Truth) => unmix_fclsu(cube, &truth.endmembers),
        Method::WsNet => unmix_wsnet(cube, &cfg.model),
    }
}

/// The truth cube with the noise of SNR entry `level`.
pub fn observed_cube(cfg: &ExperimentConfig, truth: &TruthScene, level: usize) -> Result<SpectralCube> {
    let noise = match cfg.snr_db.get(level) {
        Some(Some(db)) => NoiseSpec::snr(*db, noise_seed(cfg.seed, level)),
        Some(None) => NoiseSpec::none(),
        None => return Err(Error::Config(format!("no SNR entry {level}"))),
    };
    add_noise_snr(&truth.cube, &noise)
}

fn run_level(cfg: &ExperimentConfig, truth: &TruthScene, level: usize, mut emit: impl FnMut(MethodResult) -> Result<()>) -> Result<()> {
    let snr_db = cfg.snr_db[level];
    let cube = observed_cube(cfg, truth, level)?;
    for method in methods(cfg) {
        let unmixed = run_method(method, &cube, truth, cfg)?;
        let evaluation = evaluate(&truth.endmembers, &truth.abundances, &unmixed.endmembers, &unmixed.abundances)?;
        emit(MethodResult { snr_db, method: method_label(method, &cfg.model), unmixed, evaluation })?;
    }
    Ok(())
}

pub fn check_endmember_count(cfg: &ExperimentConfig, truth: &TruthScene) -> Result<()> {
    ensure!(
        truth.endmembers.count() == cfg.model.endmembers,
        Config,
        "scene has {} endmembers, config asks for {}",
        truth.endmembers.count(),
        cfg.model.endmembers
    );
    Ok(())
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn sweep_header(names: &[String]) -> Vec<String> {
    let mut h = vec!["snr_db".to_string(), "method".to_string()];
    h.extend(names.iter().map(|n| format!("rmse_{n}")));
    h.push("rmse_mean".into());
    h.extend(names.iter().map(|n| format!("sad_{n}")));
    h.extend(["sad_mean", "weak_rmse", "weak_sad"].map(String::from));
    h
}

fn sweep_row(r: &MethodResult) -> Vec<String> {
    let ev = &r.evaluation;
    let mut row = vec![r.snr_db.map_or("none".to_string(), num), r.method.clone()];
    row.extend(ev.rmse.per_endmember.iter().copied().map(num));
    row.push(num(ev.rmse.mean));
    row.extend(ev.sad.per_endmember.iter().copied().map(num));
    row.push(num(ev.sad.mean));
    row.push(ev.weak_rmse().map_or_else(String::new, num));
    row.push(ev.weak_sad().map_or_else(String::new, num));
    row
}

fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Every enabled method at every SNR level, written to
/// `<output>/snr_sweep.csv`. The file is rewritten after each row, so a
/// failure leaves the completed rows on disk.
pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    let truth = load_scene(&cfg.scene)?;
    check_endmember_count(cfg, &truth)?;
    prepare_output(&cfg.output)?;
    let path = cfg.output.join("snr_sweep.csv");
    let header = sweep_header(&truth.names);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    for level in 0..cfg.snr_db.len() {
        run_level(cfg, &truth, level, |r| {
            rows.push(sweep_row(&r));
            results.push(r);
            write_atomic(&path, &csv_bytes(&header, &rows)?)
        })?;
    }
    Ok(results)
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

pub fn compare_header(names: &[String]) -> Vec<String> {
    let mut h = vec!["Method".to_string()];
    h.extend(names.iter().map(|n| title_case(n)));
    h.push("RMSE_Mean".into());
    h.extend(names.iter().map(|n| format!("SAD_{}", title_case(n))));
    h.push("SAD_Mean".into());
    h
}

/// Method table at the first SNR level, written to `<output>/compare.csv`.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    let truth = load_scene(&cfg.scene)?;
    check_endmember_count(cfg, &truth)?;
    prepare_output(&cfg.output)?;
    let mut results = Vec::new();
    run_level(cfg, &truth, 0, |r| {
        results.push(r);
        Ok(())
    })?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let ev = &r.evaluation;
            let mut row = vec![r.method.clone()];
            row.extend(ev.rmse.per_endmember.iter().copied().map(num));
            row.push(num(ev.rmse.mean));
            row.extend(ev.sad.per_endmember.iter().copied().map(num));
            row.push(num(ev.sad.mean));
            row
        })
        .collect();
    write_atomic(cfg.output.join("compare.csv"), &csv_bytes(&compare_header(&truth.names), &rows)?)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ConfigMap;

    fn config(text: &str, out: &Path) -> ExperimentConfig {
        let mut map = ConfigMap::parse(text).unwrap();
        map.set("output", out.to_str().unwrap()).unwrap();
        ExperimentConfig::from_map(&map).unwrap()
    }

    const SMALL: &str = "grid = 2\nblock_px = 4\nbands = 24\nfeat_dim = 8\nstages = 2\nd_k = 4\nssm_state = 2\niters = 2\n";

    fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
        csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
    }

    #[test]
    fn fclsu_with_true_endmembers_inverts_noiseless_scene() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&format!("{SMALL}snr = none\nmethods = fclsu\nfclsu_endmembers = truth\n"), dir.path());
        let res = run_snr_sweep(&cfg).unwrap();
        assert_eq!(res.len(), 1);
        let rows = read_rows(&dir.path().join("snr_sweep.csv"));
        assert_eq!(rows.len(), 1);
        assert_eq!(&rows[0][0], "none");
        assert_eq!(&rows[0][1], "FCLSU+truth");
        for c in 2..7 {
            assert!(rows[0][c].parse::<f64>().unwrap() < 1e-6, "column {c}: {}", &rows[0][c]);
        }
    }

    #[test]
    fn five_levels_two_methods_give_ten_rows_with_consistent_means() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(SMALL, dir.path());
        run_snr_sweep(&cfg).unwrap();
        let path = dir.path().join("snr_sweep.csv");
        let header = csv::Reader::from_path(&path).unwrap().headers().unwrap().clone();
        assert_eq!(header.len(), 2 + 2 * 5 + 2);
        assert_eq!(&header[2], "rmse_magnetite");
        let rows = read_rows(&path);
        assert_eq!(rows.len(), 10);
        for row in &rows {
            let v: Vec<f64> = (2..12).map(|c| row[c].parse().unwrap()).collect();
            assert!((v[..4].iter().sum::<f64>() / 4.0 - v[4]).abs() < 1e-9);
            assert!((v[5..9].iter().sum::<f64>() / 4.0 - v[9]).abs() < 1e-9);
            let weak: f64 = row[12].parse().unwrap();
            assert!(v[..4].iter().any(|&x| x <= weak) && v[..4].iter().any(|&x| x >= weak));
        }
        assert_eq!(&rows[9][1], "WS-Net");
    }

    #[test]
    fn compare_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&format!("{SMALL}snr = 30\nmethods = fclsu\n"), dir.path());
        run_compare(&cfg).unwrap();
        let mut rdr = csv::Reader::from_path(dir.path().join("compare.csv")).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(&header[..6], ["Method", "Magnetite", "Mirabilite", "Montmorillonite", "Olivine", "RMSE_Mean"]);
        assert_eq!(header.len(), 1 + 2 * (4 + 1));
        assert_eq!(&header[6], "SAD_Magnetite");
        assert_eq!(rdr.records().count(), 1);
    }

    #[test]
    fn failure_keeps_completed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&format!("{SMALL}snr = 20\nlr = 1e200\n"), dir.path());
        assert!(matches!(run_snr_sweep(&cfg), Err(Error::NanLoss { .. })));
        let rows = read_rows(&dir.path().join("snr_sweep.csv"));
        assert_eq!(rows.len(), 1);
        assert_eq!(&rows[0][1], "FCLSU+VCA");
    }

    #[test]
    fn labels_and_seeds() {
        let mut m = WsNetConfig::default();
        assert_eq!(method_label(Method::WsNet, &m), "WS-Net");
        m.enable_wsa = false;
        m.enable_mamba = false;
        assert_eq!(method_label(Method::WsNet, &m), "WS-Net-mamba-wsa");
        assert_eq!(method_label(Method::Fclsu(BaselineEndmembers::Vca), &m), "FCLSU+VCA");
        assert_ne!(noise_seed(0, 0), noise_seed(0, 1));
        assert_ne!(noise_seed(0, 0), noise_seed(1, 0));
        assert_eq!(noise_seed(5, 3), noise_seed(5, 3));
    }

    #[test]
    fn endmember_count_must_match_scene() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&format!("{SMALL}endmembers = 3\n"), dir.path());
        assert!(matches!(run_snr_sweep(&cfg), Err(Error::Config(_))));
    }
}
