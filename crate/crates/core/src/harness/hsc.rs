//! Binary cube files: `HSCUBE01`, then `L`, `H`, `W` as little-endian
//! `u32`, then `L*H*W` little-endian `f32` values in band-major order.

use std::path::Path;

use super::write_atomic;
use crate::error::{ensure, Error, Result};
use crate::mixing::{AbundanceTensor, SpectralCube};

pub const HSC_MAGIC: &[u8; 8] = b"HSCUBE01";
pub const HSC_HEADER_LEN: usize = 20;

/// Raw `L x H x W` payload as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct HscVolume {
    pub dims: [usize; 3],
    pub values: Vec<f32>,
}

pub fn encode(dims: [usize; 3], values: impl ExactSizeIterator<Item = f64>) -> Result<Vec<u8>> {
    let count = volume_len(dims)?;
    ensure!(values.len() == count, Dimension, "{} values for dimensions {dims:?}", values.len());
    let mut out = Vec::with_capacity(HSC_HEADER_LEN + 4 * count);
    out.extend_from_slice(HSC_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} does not fit in 32 bits")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn volume_len(dims: [usize; 3]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} overflow")))
}

pub fn decode(bytes: &[u8]) -> Result<HscVolume> {
    ensure!(bytes.len() >= HSC_HEADER_LEN, Format, "file is {} bytes, shorter than the header", bytes.len());
    ensure!(&bytes[..8] == HSC_MAGIC, Format, "bad magic {:?}", String::from_utf8_lossy(&bytes[..8]));
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let count = volume_len(dims)?;
    let payload = &bytes[HSC_HEADER_LEN..];
    ensure!(
        payload.len() == 4 * count,
        Format,
        "payload has {} bytes, dimensions {dims:?} need {}",
        payload.len(),
        4 * count
    );
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(HscVolume { dims, values })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<HscVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode([cube.bands(), cube.height(), cube.width()], cube.data().iter().copied())?;
    write_atomic(path, &bytes)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let v = read_volume(path)?;
    let [l, h, w] = v.dims;
    SpectralCube::new(l, h, w, v.values.into_iter().map(f64::from).collect())
}

/// Abundances share the format with `L` replaced by the endmember count.
pub fn write_abundances(a: &AbundanceTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode([a.count(), a.height(), a.width()], a.data().iter().copied())?;
    write_atomic(path, &bytes)
}

pub fn read_abundances(path: impl AsRef<Path>) -> Result<AbundanceTensor> {
    let v = read_volume(path)?;
    let [r, h, w] = v.dims;
    AbundanceTensor::new(r, h, w, v.values.into_iter().map(f64::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_at_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cube = SpectralCube::new(3, 4, 5, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!((back.bands(), back.height(), back.width()), (3, 4, 5));
        for (a, b) in cube.data().iter().zip(back.data()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        assert_eq!(std::fs::metadata(&path).unwrap().len(), (HSC_HEADER_LEN + 4 * 60) as u64);
    }

    #[test]
    fn header_layout() {
        let bytes = encode([459, 80, 80], std::iter::repeat_n(0.5, 459 * 6400)).unwrap();
        assert_eq!(bytes.len(), 20 + 4 * 459 * 80 * 80);
        assert_eq!(&bytes[8..12], &459u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &80u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let mut bytes = encode([1, 2, 2], [1.0, 2.0, 3.0, 4.0].into_iter()).unwrap();
        assert!(decode(&bytes).is_ok());
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));

        let mut huge = HSC_MAGIC.to_vec();
        for d in [u32::MAX; 3] {
            huge.extend_from_slice(&d.to_le_bytes());
        }
        assert!(matches!(decode(&huge), Err(Error::Format(_))));
        assert!(matches!(read_cube("/nonexistent/x.hsc"), Err(Error::Io { .. })));
    }

    #[test]
    fn abundances_round_trip() {
        let a = AbundanceTensor::new(2, 1, 3, vec![0.25, 1.0, 0.0, 0.75, 0.0, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hsc");
        write_abundances(&a, &path).unwrap();
        assert_eq!(read_abundances(&path).unwrap(), a);
    }
}
