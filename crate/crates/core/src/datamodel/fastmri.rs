//! fastMRI multi-coil HDF5 ingestion (`kspace`: complex64 `[slices, coils, ky, kx]`).
//!
//! Only available with the `hdf5` feature; without it the loader reports
//! [`Error::Unsupported`].
// The H5Type derive expands inside a const block.
#![cfg_attr(feature = "hdf5", allow(non_local_definitions))]

use std::path::Path;

use super::MultiCoilKspace;
use crate::error::{Error, Result};

/// h5py's layout for `complex64`: a compound of two `f32` fields `r`, `i`.
#[cfg(feature = "hdf5")]
#[derive(hdf5::H5Type, Clone, Copy)]
#[repr(C)]
struct H5Complex {
    r: f32,
    i: f32,
}

#[cfg(feature = "hdf5")]
pub fn load_fastmri_slice(path: impl AsRef<Path>, slice_index: usize) -> Result<MultiCoilKspace> {
    use hdf5::{Hyperslab, SliceOrIndex};
    use num_complex::Complex64;

    let h5 = |e: hdf5::Error| Error::Unsupported(format!("hdf5: {e}"));
    let file = hdf5::File::open(path.as_ref()).map_err(h5)?;
    let ds = file
        .dataset("kspace")
        .map_err(|_| Error::MissingDataset("kspace".into()))?;
    let shape = ds.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("kspace dataset has shape {shape:?}, expected 4-D")));
    }
    let (ns, nc, ny, nx) = (shape[0], shape[1], shape[2], shape[3]);
    if slice_index >= ns {
        return Err(Error::OutOfRange { what: "slice", index: slice_index, extent: ns });
    }
    let sel = Hyperslab::from(vec![
        SliceOrIndex::from(slice_index),
        SliceOrIndex::from(..),
        SliceOrIndex::from(..),
        SliceOrIndex::from(..),
    ]);
    let raw = ds
        .read_slice::<H5Complex, _, ndarray::Ix3>(sel)
        .map_err(h5)?
        .into_raw_vec();
    let data = raw.iter().map(|v| Complex64::new(v.r as f64, v.i as f64)).collect();
    MultiCoilKspace::from_vec(nc, ny, nx, data)
}

#[cfg(not(feature = "hdf5"))]
pub fn load_fastmri_slice(path: impl AsRef<Path>, slice_index: usize) -> Result<MultiCoilKspace> {
    let _ = (path.as_ref(), slice_index);
    Err(Error::Unsupported(
        "fastMRI ingestion requires building with the `hdf5` feature".into(),
    ))
}
