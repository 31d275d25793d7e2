//! CFL/HDR array files.
//!
//! `<name>.hdr` holds `# Dimensions` followed by a line of sizes, fastest
//! varying first. `<name>.cfl` holds little-endian `f32` (re, im) pairs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};

use super::{CoilSensitivities, ComplexImage, MultiCoilKspace};
use crate::error::{Error, Result};

/// A raw complex array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CflArray {
    pub dims: Vec<usize>,
    pub data: Vec<Complex32>,
}

impl CflArray {
    pub fn new(dims: Vec<usize>, data: Vec<Complex32>) -> Result<Self> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "{} values for dimensions {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Dimensions with trailing singleton axes removed.
    pub fn squeezed_dims(&self) -> Vec<usize> {
        let mut d = self.dims.clone();
        while d.len() > 1 && d.last() == Some(&1) {
            d.pop();
        }
        d
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8).map(|_| n))
        .ok_or_else(|| Error::DimensionOverflow(dims.to_vec()))
}

/// Strips a `.cfl`/`.hdr` extension so either file name can be passed.
pub fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("cfl") | Some("hdr") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_array(path: impl AsRef<Path>, array: &CflArray) -> Result<()> {
    let base = base_path(path.as_ref());
    element_count(&array.dims)?;
    let dims: Vec<String> = array.dims.iter().map(|d| d.to_string()).collect();
    fs::write(
        with_suffix(&base, ".hdr"),
        format!("# Dimensions\n{}\n", dims.join(" ")),
    )?;
    let mut w = BufWriter::new(fs::File::create(with_suffix(&base, ".cfl"))?);
    for v in &array.data {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_array(path: impl AsRef<Path>) -> Result<CflArray> {
    let base = base_path(path.as_ref());
    let hdr_path = with_suffix(&base, ".hdr");
    let header = fs::read_to_string(&hdr_path)?;
    let malformed = |reason: &str| Error::MalformedHeader {
        path: hdr_path.clone(),
        reason: reason.to_string(),
    };
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("# Dimensions") {
        return Err(malformed("first line must be `# Dimensions`"));
    }
    let dims = lines
        .next()
        .ok_or_else(|| malformed("missing dimension line"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| malformed(&format!("bad dimension: {e}")))?;
    if dims.is_empty() {
        return Err(malformed("no dimensions"));
    }
    let n = element_count(&dims)?;
    let expected = (n as u64) * 8;

    let cfl_path = with_suffix(&base, ".cfl");
    let bytes = fs::read(&cfl_path)?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { path: cfl_path, expected, found });
    }
    if found > expected {
        return Err(Error::MalformedHeader {
            path: hdr_path,
            reason: format!("data file has {found} bytes, header implies {expected}"),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();
    Ok(CflArray { dims, data })
}

fn to_c32(v: &[Complex64]) -> Vec<Complex32> {
    v.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect()
}

fn to_c64(v: &[Complex32]) -> Vec<Complex64> {
    v.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect()
}

fn expect_dims(a: &CflArray, rank: usize, what: &str) -> Result<Vec<usize>> {
    let mut d = a.squeezed_dims();
    if d.len() > rank {
        return Err(Error::Shape(format!("{what} needs {rank} dimensions, got {:?}", a.dims)));
    }
    d.resize(rank, 1);
    Ok(d)
}

impl From<&ComplexImage> for CflArray {
    fn from(img: &ComplexImage) -> Self {
        CflArray { dims: vec![img.nx(), img.ny()], data: to_c32(img.data()) }
    }
}

impl From<&MultiCoilKspace> for CflArray {
    fn from(k: &MultiCoilKspace) -> Self {
        CflArray { dims: vec![k.nx(), k.ny(), k.nc()], data: to_c32(k.data()) }
    }
}

impl From<&CoilSensitivities> for CflArray {
    fn from(c: &CoilSensitivities) -> Self {
        CflArray { dims: vec![c.nx(), c.ny(), c.nc()], data: to_c32(c.data()) }
    }
}

impl TryFrom<&CflArray> for ComplexImage {
    type Error = Error;
    fn try_from(a: &CflArray) -> Result<Self> {
        let d = expect_dims(a, 2, "image")?;
        ComplexImage::from_vec(d[1], d[0], to_c64(&a.data))
    }
}

impl TryFrom<&CflArray> for MultiCoilKspace {
    type Error = Error;
    fn try_from(a: &CflArray) -> Result<Self> {
        let d = expect_dims(a, 3, "k-space")?;
        MultiCoilKspace::from_vec(d[2], d[1], d[0], to_c64(&a.data))
    }
}

impl TryFrom<&CflArray> for CoilSensitivities {
    type Error = Error;
    fn try_from(a: &CflArray) -> Result<Self> {
        let d = expect_dims(a, 3, "coil maps")?;
        CoilSensitivities::from_vec(d[2], d[1], d[0], to_c64(&a.data))
    }
}

pub fn write_image(path: impl AsRef<Path>, img: &ComplexImage) -> Result<()> {
    write_array(path, &CflArray::from(img))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ComplexImage> {
    ComplexImage::try_from(&read_array(path)?)
}

pub fn write_kspace(path: impl AsRef<Path>, k: &MultiCoilKspace) -> Result<()> {
    write_array(path, &CflArray::from(k))
}

pub fn read_kspace(path: impl AsRef<Path>) -> Result<MultiCoilKspace> {
    MultiCoilKspace::try_from(&read_array(path)?)
}

pub fn write_coils(path: impl AsRef<Path>, c: &CoilSensitivities) -> Result<()> {
    write_array(path, &CflArray::from(c))
}

pub fn read_coils(path: impl AsRef<Path>) -> Result<CoilSensitivities> {
    CoilSensitivities::try_from(&read_array(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let a = CflArray::new(
            vec![2, 2, 1],
            vec![
                Complex32::new(1.0, -2.0),
                Complex32::new(0.5, 0.25),
                Complex32::new(-3.0, 7.0),
                Complex32::new(f32::MIN_POSITIVE, -0.0),
            ],
        )
        .unwrap();
        let base = dir.path().join("arr");
        write_array(&base, &a).unwrap();
        assert_eq!(fs::metadata(dir.path().join("arr.cfl")).unwrap().len(), 32);
        let header = fs::read_to_string(dir.path().join("arr.hdr")).unwrap();
        assert_eq!(header, "# Dimensions\n2 2 1\n");
        let b = read_array(dir.path().join("arr.cfl")).unwrap();
        assert_eq!(a.dims, b.dims);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn truncated_data_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("t");
        fs::write(dir.path().join("t.hdr"), "# Dimensions\n2 2 1\n").unwrap();
        fs::write(dir.path().join("t.cfl"), [0u8; 16]).unwrap();
        match read_array(&base) {
            Err(Error::Truncated { expected, found, .. }) => {
                assert_eq!((expected, found), (32, 16));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        fs::write(dir.path().join("m.cfl"), [0u8; 8]).unwrap();
        fs::write(dir.path().join("m.hdr"), "Dimensions\n1\n").unwrap();
        assert!(matches!(read_array(&base), Err(Error::MalformedHeader { .. })));
        fs::write(dir.path().join("m.hdr"), "# Dimensions\n1 x\n").unwrap();
        assert!(matches!(read_array(&base), Err(Error::MalformedHeader { .. })));
        fs::write(dir.path().join("m.hdr"), "# Dimensions\n").unwrap();
        assert!(matches!(read_array(&base), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn overflowing_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("o");
        fs::write(dir.path().join("o.cfl"), [0u8; 8]).unwrap();
        fs::write(
            dir.path().join("o.hdr"),
            format!("# Dimensions\n{} {}\n", usize::MAX / 2, 4),
        )
        .unwrap();
        assert!(matches!(read_array(&base), Err(Error::DimensionOverflow(_))));
    }

    #[test]
    fn typed_arrays_use_fastest_first_dims() {
        let dir = tempfile::tempdir().unwrap();
        let k = MultiCoilKspace::zeros(3, 4, 5);
        write_kspace(dir.path().join("k"), &k).unwrap();
        let raw = read_array(dir.path().join("k")).unwrap();
        assert_eq!(raw.dims, vec![5, 4, 3]);
        assert_eq!(read_kspace(dir.path().join("k")).unwrap(), k);
        let img = ComplexImage::from_fn(3, 4, |y, x| Complex64::new(y as f64, x as f64));
        write_image(dir.path().join("i"), &img).unwrap();
        assert_eq!(read_image(dir.path().join("i")).unwrap(), img);
    }
}
