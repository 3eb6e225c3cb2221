//! Flat `key = value` experiment files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::model::WsNetConfig;
use crate::objectives::LossWeights;
use crate::scene::SceneSpec;

pub const KEYS: &[&str] = &[
    "scene",
    "library",
    "cube",
    "truth_endmembers",
    "truth_abundances",
    "grid",
    "block_px",
    "bands",
    "lambda_min",
    "lambda_max",
    "materials_per_block",
    "endmembers",
    "feat_dim",
    "stages",
    "d_k",
    "ssm_state",
    "tau_sa",
    "tau_inv",
    "enable_mamba",
    "enable_attention",
    "enable_wsa",
    "lr",
    "iters",
    "loss_alpha",
    "loss_beta",
    "loss_gamma",
    "snr",
    "methods",
    "fclsu_endmembers",
    "output",
    "seed",
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    /// Line in the source file; `None` for command-line overrides.
    line: Option<usize>,
}

/// Raw entries, validated against [`KEYS`] but not yet typed.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, Entry>,
}

impl ConfigMap {
    /// Blank lines and `#` comments are skipped; keys may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) =
                content.split_once('=').ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let key = key.trim();
            ensure!(KEYS.contains(&key), Config, "line {line}: unknown key `{key}`");
            if let Some(prev) = map.entries.get(key) {
                return Err(Error::Config(format!(
                    "line {line}: `{key}` already set on line {}",
                    prev.line.unwrap_or(0)
                )));
            }
            map.entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line: Some(line) });
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets or replaces a key.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        ensure!(KEYS.contains(&key), Config, "unknown key `{key}`");
        self.entries.insert(key.to_string(), Entry { value: value.into(), line: None });
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn location(&self, key: &str) -> String {
        match self.entries.get(key).and_then(|e| e.line) {
            Some(line) => format!("line {line}: `{key}`"),
            None => format!("`{key}`"),
        }
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{}: cannot parse `{v}`", self.location(key)))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("{}: expected a boolean, got `{v}`", self.location(key)))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("`{key}` is required for this scene source")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    /// Blocked synthetic scene; `library = None` uses the bundled spectra.
    Synth { spec: SceneSpec, library: Option<PathBuf> },
    /// HSC cube with truth endmembers (library CSV) and abundances (HSC).
    File { cube: PathBuf, endmembers: PathBuf, abundances: PathBuf },
}

/// Endmembers the FCLSU baseline inverts with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineEndmembers {
    Vca,
    Truth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub model: WsNetConfig,
    /// `None` is a noiseless level.
    pub snr_db: Vec<Option<f64>>,
    pub run_fclsu: bool,
    pub run_wsnet: bool,
    pub fclsu_endmembers: BaselineEndmembers,
    pub output: PathBuf,
    pub seed: u64,
}

pub fn parse_snr_list(text: &str) -> Result<Vec<Option<f64>>> {
    text.split(',')
        .map(str::trim)
        .map(|t| match t {
            "none" => Ok(None),
            _ => t.parse().map(Some).map_err(|_| Error::Config(format!("bad SNR value `{t}`"))),
        })
        .collect()
}

impl ExperimentConfig {
    /// Missing keys take the defaults of [`SceneSpec`] and [`WsNetConfig`].
    /// The seed drives the scene, the network and (per level) the noise.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let seed: u64 = map.typed("seed", 0)?;
        let scene = match map.get("scene").unwrap_or("synth") {
            "synth" => {
                let d = SceneSpec::default();
                SceneSource::Synth {
                    spec: SceneSpec {
                        grid: map.typed("grid", d.grid)?,
                        block_px: map.typed("block_px", d.block_px)?,
                        bands: map.typed("bands", d.bands)?,
                        lambda_min: map.typed("lambda_min", d.lambda_min)?,
                        lambda_max: map.typed("lambda_max", d.lambda_max)?,
                        materials_per_block: map.typed("materials_per_block", d.materials_per_block)?,
                        seed,
                    },
                    library: map.get("library").map(PathBuf::from),
                }
            }
            "file" => SceneSource::File {
                cube: map.path("cube")?,
                endmembers: map.path("truth_endmembers")?,
                abundances: map.path("truth_abundances")?,
            },
            other => return Err(Error::Config(format!("{}: expected `synth` or `file`, got `{other}`", map.location("scene")))),
        };
        let d = WsNetConfig::default();
        let model = WsNetConfig {
            endmembers: map.typed("endmembers", d.endmembers)?,
            feat_dim: map.typed("feat_dim", d.feat_dim)?,
            stages: map.typed("stages", d.stages)?,
            d_k: map.typed("d_k", d.d_k)?,
            ssm_state: map.typed("ssm_state", d.ssm_state)?,
            tau_sa: map.typed("tau_sa", d.tau_sa)?,
            tau_inv: map.typed("tau_inv", d.tau_inv)?,
            enable_mamba: map.flag("enable_mamba", d.enable_mamba)?,
            enable_attention: map.flag("enable_attention", d.enable_attention)?,
            enable_wsa: map.flag("enable_wsa", d.enable_wsa)?,
            lr: map.typed("lr", d.lr)?,
            iters: map.typed("iters", d.iters)?,
            loss: LossWeights {
                alpha: map.typed("loss_alpha", d.loss.alpha)?,
                beta: map.typed("loss_beta", d.loss.beta)?,
                gamma: map.typed("loss_gamma", d.loss.gamma)?,
            },
            seed,
        };
        let snr_db = parse_snr_list(map.get("snr").unwrap_or("10,20,30,40,50"))
            .map_err(|e| Error::Config(format!("{}: {e}", map.location("snr"))))?;
        let (mut run_fclsu, mut run_wsnet) = (false, false);
        for m in map.get("methods").unwrap_or("fclsu,wsnet").split(',').map(str::trim) {
            match m {
                "fclsu" => run_fclsu = true,
                "wsnet" => run_wsnet = true,
                "" => {}
                other => return Err(Error::Config(format!("{}: unknown method `{other}`", map.location("methods")))),
            }
        }
        let fclsu_endmembers = match map.get("fclsu_endmembers").unwrap_or("vca") {
            "vca" => BaselineEndmembers::Vca,
            "truth" => BaselineEndmembers::Truth,
            other => {
                return Err(Error::Config(format!(
                    "{}: expected `vca` or `truth`, got `{other}`",
                    map.location("fclsu_endmembers")
                )))
            }
        };
        let cfg = Self {
            scene,
            model,
            snr_db,
            run_fclsu,
            run_wsnet,
            fclsu_endmembers,
            output: PathBuf::from(map.get("output").unwrap_or("results")),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.run_fclsu || self.run_wsnet, Config, "no method enabled");
        ensure!(!self.snr_db.is_empty(), Config, "SNR list is empty");
        for db in self.snr_db.iter().flatten() {
            ensure!((0.0..=100.0).contains(db), Config, "SNR {db} dB lies outside [0, 100]");
        }
        if self.run_wsnet {
            self.model.validate()?;
        }
        self.model.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
