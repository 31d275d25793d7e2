//! The multi-coil Cartesian encoding operator `E = M F C` and its adjoint.
//!
//! `C` multiplies by each coil map, `F` is the centered unitary 2-D DFT and
//! `M` zeroes unsampled ky lines. Because `F` is unitary, `E^H = C^H F^H M`
//! needs no scaling constants.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::datamodel::{CoilSensitivities, ComplexImage, MultiCoilKspace, SamplingMask};
use crate::error::{Error, Result};

/// Planned centered unitary 2-D FFT for one `ny x nx` grid.
#[derive(Clone)]
pub struct Fft2 {
    ny: usize,
    nx: usize,
    fwd_y: Arc<dyn Fft<f64>>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("ny", &self.ny).field("nx", &self.nx).finish()
    }
}

fn plan_cache() -> &'static Mutex<HashMap<(usize, usize), Fft2>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Fft2>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft2 {
    /// Returns a (shared, cached) plan for the given grid.
    pub fn new(ny: usize, nx: usize) -> Self {
        let mut cache = plan_cache().lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry((ny, nx))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Fft2 {
                    ny,
                    nx,
                    fwd_y: planner.plan_fft_forward(ny),
                    fwd_x: planner.plan_fft_forward(nx),
                    inv_y: planner.plan_fft_inverse(ny),
                    inv_x: planner.plan_fft_inverse(nx),
                }
            })
            .clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// In-place centered unitary forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd_y, &self.fwd_x);
    }

    /// In-place centered unitary inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv_y, &self.inv_x);
    }

    // Index `p` of a centered axis of length n sits at offset p - n/2, so the
    // input is rolled by -n/2 before the plain DFT and the output rolled back.
    fn transform(&self, data: &mut [Complex64], plan_y: &Arc<dyn Fft<f64>>, plan_x: &Arc<dyn Fft<f64>>) {
        let (ny, nx) = (self.ny, self.nx);
        assert_eq!(data.len(), ny * nx, "fft buffer size");
        let (cy, cx) = (ny / 2, nx / 2);
        let zero = Complex64::new(0.0, 0.0);

        let mut rows = vec![zero; ny * nx];
        for y in 0..ny {
            let ty = (y + ny - cy) % ny;
            for x in 0..nx {
                let tx = (x + nx - cx) % nx;
                rows[ty * nx + tx] = data[y * nx + x];
            }
        }
        let scratch_len = plan_x
            .get_inplace_scratch_len()
            .max(plan_y.get_inplace_scratch_len());
        let mut scratch = vec![zero; scratch_len];
        plan_x.process_with_scratch(&mut rows, &mut scratch);

        let mut cols = vec![zero; ny * nx];
        for y in 0..ny {
            for x in 0..nx {
                cols[x * ny + y] = rows[y * nx + x];
            }
        }
        plan_y.process_with_scratch(&mut cols, &mut scratch);

        let scale = 1.0 / ((ny * nx) as f64).sqrt();
        for ky in 0..ny {
            let sy = (ky + ny - cy) % ny;
            for kx in 0..nx {
                let sx = (kx + nx - cx) % nx;
                data[ky * nx + kx] = cols[sx * ny + sy] * scale;
            }
        }
    }
}

/// Centered unitary 2-D DFT (DC at index `(ny/2, nx/2)`).
pub fn fft2c(x: &ComplexImage) -> ComplexImage {
    let mut out = x.clone();
    Fft2::new(x.ny(), x.nx()).forward(out.data_mut());
    out
}

/// Inverse of [`fft2c`].
pub fn ifft2c(x: &ComplexImage) -> ComplexImage {
    let mut out = x.clone();
    Fft2::new(x.ny(), x.nx()).inverse(out.data_mut());
    out
}

/// Root-sum-of-squares combination of the per-coil inverse FFTs.
pub fn rss_image(y: &MultiCoilKspace) -> ComplexImage {
    let (nc, ny, nx) = y.shape();
    let fft = Fft2::new(ny, nx);
    let mut acc = vec![0.0f64; ny * nx];
    let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
    for c in 0..nc {
        buf.copy_from_slice(y.coil(c));
        fft.inverse(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
    }
    ComplexImage::from_fn(ny, nx, |yy, xx| Complex64::new(acc[yy * nx + xx].sqrt(), 0.0))
}

/// Immutable encoding operator `E_Ω` for one set of coil maps and one mask.
#[derive(Clone, Debug)]
pub struct EncodingContext {
    coils: CoilSensitivities,
    mask: SamplingMask,
    fft: Fft2,
}

impl EncodingContext {
    pub fn new(coils: CoilSensitivities, mask: SamplingMask) -> Result<Self> {
        if coils.ny() != mask.ny() {
            return Err(Error::Shape(format!(
                "coil maps have {} rows, mask has {} lines",
                coils.ny(),
                mask.ny()
            )));
        }
        let fft = Fft2::new(coils.ny(), coils.nx());
        Ok(Self { coils, mask, fft })
    }

    /// Context with every ky line sampled.
    pub fn fully_sampled(coils: CoilSensitivities) -> Self {
        let mask = SamplingMask::full(coils.ny());
        let fft = Fft2::new(coils.ny(), coils.nx());
        Self { coils, mask, fft }
    }

    /// Same coil maps, different sampling pattern.
    pub fn with_mask(&self, mask: SamplingMask) -> Result<Self> {
        Self::new(self.coils.clone(), mask)
    }

    pub fn coils(&self) -> &CoilSensitivities {
        &self.coils
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn nc(&self) -> usize {
        self.coils.nc()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.coils.ny(), self.coils.nx())
    }

    pub fn kspace_shape(&self) -> (usize, usize, usize) {
        self.coils.shape()
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        if x.shape() != self.image_shape() {
            return Err(Error::Shape(format!(
                "image {:?} vs encoding grid {:?}",
                x.shape(),
                self.image_shape()
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &MultiCoilKspace) -> Result<()> {
        if y.shape() != self.kspace_shape() {
            return Err(Error::Shape(format!(
                "k-space {:?} vs encoding {:?}",
                y.shape(),
                self.kspace_shape()
            )));
        }
        Ok(())
    }

    fn zero_unsampled(&self, coil: &mut [Complex64]) {
        let nx = self.coils.nx();
        for (ky, row) in coil.chunks_mut(nx).enumerate() {
            if !self.mask.is_sampled(ky) {
                row.fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    /// Per coil: `mask ⊙ fft2c(c ⊙ x)`.
    pub fn apply_e(&self, x: &ComplexImage) -> Result<MultiCoilKspace> {
        self.check_image(x)?;
        let (nc, ny, nx) = self.kspace_shape();
        let mut out = MultiCoilKspace::zeros(nc, ny, nx);
        for c in 0..nc {
            let dst = out.coil_mut(c);
            for ((d, s), v) in dst.iter_mut().zip(self.coils.coil(c)).zip(x.data()) {
                *d = s * v;
            }
            self.fft.forward(dst);
            self.zero_unsampled(dst);
        }
        Ok(out)
    }

    /// `Σ_c conj(c) ⊙ ifft2c(mask ⊙ y_c)`.
    pub fn apply_eh(&self, y: &MultiCoilKspace) -> Result<ComplexImage> {
        self.check_kspace(y)?;
        let (nc, ny, nx) = self.kspace_shape();
        let mut acc = ComplexImage::zeros(ny, nx);
        let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
        for c in 0..nc {
            buf.copy_from_slice(y.coil(c));
            self.zero_unsampled(&mut buf);
            self.fft.inverse(&mut buf);
            for ((a, s), v) in acc.data_mut().iter_mut().zip(self.coils.coil(c)).zip(&buf) {
                *a += s.conj() * v;
            }
        }
        Ok(acc)
    }

    /// `(E^H E + mu I) x`, Hermitian positive semidefinite for `mu >= 0`.
    pub fn normal_op(&self, x: &ComplexImage, mu: f64) -> Result<ComplexImage> {
        self.check_image(x)?;
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("shift mu must be >= 0, got {mu}")));
        }
        let (nc, ny, nx) = self.kspace_shape();
        let mut acc = x.scaled(mu);
        let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
        for c in 0..nc {
            let coil = self.coils.coil(c);
            for ((b, s), v) in buf.iter_mut().zip(coil).zip(x.data()) {
                *b = s * v;
            }
            self.fft.forward(&mut buf);
            self.zero_unsampled(&mut buf);
            self.fft.inverse(&mut buf);
            for ((a, s), v) in acc.data_mut().iter_mut().zip(coil).zip(&buf) {
                *a += s.conj() * v;
            }
        }
        Ok(acc)
    }

    /// Zeroes the unsampled lines of a k-space array.
    pub fn apply_mask(&self, y: &MultiCoilKspace) -> Result<MultiCoilKspace> {
        self.check_kspace(y)?;
        let mut out = y.clone();
        for c in 0..out.nc() {
            self.zero_unsampled(out.coil_mut(c));
        }
        Ok(out)
    }

    /// Coil-combined image of fully sampled k-space, `Σ_c conj(c) ifft2c(y_c)`.
    pub fn coil_combine(&self, y_full: &MultiCoilKspace) -> Result<ComplexImage> {
        EncodingContext::fully_sampled(self.coils.clone()).apply_eh(y_full)
    }
}
