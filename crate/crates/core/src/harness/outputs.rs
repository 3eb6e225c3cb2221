//! PGM maps and CSV tables written next to experiment results.

use std::path::{Path, PathBuf};

use super::write_atomic;
use crate::error::{ensure, Error, Result};
use crate::mixing::{AbundanceTensor, EndmemberMatrix};
use crate::objectives::LossBreakdown;

/// 8-bit binary PGM (`P5`).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    ensure!(pixels.len() == width * height, Dimension, "{} pixels for a {width}x{height} image", pixels.len());
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// `round(255 * a)` clamped to the byte range.
pub fn abundance_to_byte(a: f64) -> u8 {
    (255.0 * a).round().clamp(0.0, 255.0) as u8
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

/// One `abundance_<r>.pgm` per endmember plus `abundances.csv` with
/// columns `endmember,row,col,abundance`. Returns the written paths.
pub fn write_abundance_outputs(a: &AbundanceTensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(a.count() + 1);
    for r in 0..a.count() {
        let bytes: Vec<u8> = a.map(r).iter().map(|&v| abundance_to_byte(v)).collect();
        let path = dir.join(format!("abundance_{r}.pgm"));
        write_atomic(&path, &encode_pgm(a.width(), a.height(), &bytes)?)?;
        written.push(path);
    }
    let header: Vec<String> = ["endmember", "row", "col", "abundance"].map(String::from).to_vec();
    let mut rows = Vec::with_capacity(a.count() * a.pixels());
    for r in 0..a.count() {
        for row in 0..a.height() {
            for col in 0..a.width() {
                rows.push(vec![r.to_string(), row.to_string(), col.to_string(), a.get(r, row, col).to_string()]);
            }
        }
    }
    let path = dir.join("abundances.csv");
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    written.push(path);
    Ok(written)
}

/// Endmembers in the spectral-library layout, readable by
/// [`crate::scene::load_spectral_library`].
pub fn write_endmembers(e: &EndmemberMatrix, wavelengths: &[f64], names: &[String], path: impl AsRef<Path>) -> Result<()> {
    ensure!(wavelengths.len() == e.bands(), Dimension, "{} wavelengths for {} bands", wavelengths.len(), e.bands());
    ensure!(names.len() == e.count(), Dimension, "{} names for {} endmembers", names.len(), e.count());
    let mut header = vec!["wavelength_nm".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..e.bands())
        .map(|b| std::iter::once(wavelengths[b].to_string()).chain((0..e.count()).map(|r| e.get(b, r).to_string())).collect())
        .collect();
    write_atomic(path, &csv_bytes(&header, &rows)?)
}

/// Endmember columns read back from [`write_endmembers`] output.
#[derive(Clone, Debug)]
pub struct EndmemberTable {
    pub endmembers: EndmemberMatrix,
    pub wavelengths: Vec<f64>,
    pub names: Vec<String>,
}

/// Like the spectral-library reader, but the wavelength column is only a
/// label here and need not be increasing. Entries must still be finite and
/// nonnegative.
pub fn read_endmembers(path: impl AsRef<Path>) -> Result<EndmemberTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    ensure!(headers.len() >= 2, Format, "{}: need a wavelength column and at least one endmember", path.display());
    let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut wavelengths = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("{} line {}: {s:?} is not a finite number", path.display(), i + 2)))
        };
        ensure!(record.len() == headers.len(), Format, "{} line {}: wrong field count", path.display(), i + 2);
        wavelengths.push(parse(&record[0])?);
        for (col, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            col.push(parse(field)?);
        }
    }
    ensure!(!wavelengths.is_empty(), Format, "{}: no rows", path.display());
    Ok(EndmemberTable { endmembers: EndmemberMatrix::from_columns(&columns)?, wavelengths, names })
}

pub fn write_history(history: &[LossBreakdown], path: impl AsRef<Path>) -> Result<()> {
    let header: Vec<String> = ["iteration", "rmse", "sad", "kl", "total"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.rmse.to_string(), l.sad.to_string(), l.kl.to_string(), l.total.to_string()])
        .collect();
    write_atomic(path, &csv_bytes(&header, &rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::load_spectral_library;

    fn pgm_pixels(path: &Path) -> Vec<u8> {
        let bytes = std::fs::read(path).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        bytes[header_end..].to_vec()
    }

    #[test]
    fn uniform_maps_are_constant_images() {
        let a = AbundanceTensor::new(3, 2, 4, vec![1.0 / 3.0; 24]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_abundance_outputs(&a, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        let bytes = std::fs::read(&paths[0]).unwrap();
        assert!(bytes.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(pgm_pixels(&paths[1]), vec![85; 8]);
        let csv = std::fs::read_to_string(&paths[3]).unwrap();
        assert_eq!(csv.lines().count(), 3 * 2 * 4 + 1);
        assert_eq!(csv.lines().next(), Some("endmember,row,col,abundance"));
    }

    #[test]
    fn one_hot_maps_are_binary() {
        let a = AbundanceTensor::new(2, 1, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_abundance_outputs(&a, dir.path()).unwrap();
        assert_eq!(pgm_pixels(&paths[0]), vec![255, 0, 255]);
        assert_eq!(pgm_pixels(&paths[1]), vec![0, 255, 0]);
    }

    #[test]
    fn endmembers_reload_as_library() {
        let e = EndmemberMatrix::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_endmembers(&e, &[400.0, 500.0, 600.0], &["a".into(), "b".into()], &path).unwrap();
        let lib = load_spectral_library(&path).unwrap();
        assert_eq!(lib[1].name, "b");
        assert_eq!(lib[1].reflectance, vec![0.2, 0.4, 0.6]);
        assert!(write_endmembers(&e, &[1.0], &["a".into(), "b".into()], &path).is_err());

        let single = EndmemberMatrix::new(2, 1, vec![0.01, 0.5]).unwrap();
        write_endmembers(&single, &[2.0, 1.0], &["x".into()], &path).unwrap();
        assert!(load_spectral_library(&path).is_err());
        let t = read_endmembers(&path).unwrap();
        assert_eq!(t.endmembers, single);
        assert_eq!((t.wavelengths, t.names), (vec![2.0, 1.0], vec!["x".to_string()]));
        std::fs::write(&path, "wavelength_nm,x\n1,-0.01\n").unwrap();
        assert!(matches!(read_endmembers(&path), Err(Error::Constraint(_))));
        std::fs::write(&path, "wavelength_nm,x\n1,nan\n").unwrap();
        assert!(matches!(read_endmembers(&path), Err(Error::Format(_))));
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, b"x").unwrap();
        let a = AbundanceTensor::new(1, 1, 1, vec![1.0]).unwrap();
        assert!(matches!(write_abundance_outputs(&a, file.join("sub")), Err(Error::Io { .. })));
    }
}
