//! File formats, experiment configuration and the SNR sweep / comparison
//! drivers behind the command-line tool.

pub mod config;
pub mod experiment;
pub mod hsc;
pub mod outputs;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, SceneSource};
pub use experiment::{
    evaluate, load_scene, method_label, observed_cube, run_compare, run_snr_sweep, unmix_fclsu, unmix_wsnet, Evaluation,
    Method, MethodResult, TruthScene, Unmixed,
};

/// Writes through a temporary file in the target directory, then renames,
/// so readers never see a partial file.
pub(crate) fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
