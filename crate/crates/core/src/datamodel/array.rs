use num_complex::Complex64;

use crate::error::{Error, Result};

/// Conjugate-linear inner product `Σ conj(a_i) b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Real part of [`inner`]; the inner product of the underlying real vectors.
pub fn inner_re(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Largest absolute value over all real and imaginary components.
pub fn linf_components(a: &[Complex64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.re.abs()).max(v.im.abs()))
}

fn check_finite(data: &[Complex64]) -> Result<()> {
    if data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("array contains non-finite entries".into()))
    }
}

/// Complex 2-D image stored row-major as `[ny][nx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    ny: usize,
    nx: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(ny: usize, nx: usize) -> Self {
        Self {
            ny,
            nx,
            data: vec![Complex64::new(0.0, 0.0); ny * nx],
        }
    }

    pub fn from_vec(ny: usize, nx: usize, data: Vec<Complex64>) -> Result<Self> {
        if ny < 2 || nx < 2 {
            return Err(Error::Shape(format!("image must be at least 2x2, got {ny}x{nx}")));
        }
        if data.len() != ny * nx {
            return Err(Error::Shape(format!(
                "{} values for a {ny}x{nx} image",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { ny, nx, data })
    }

    pub fn from_real(ny: usize, nx: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(ny, nx, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn from_fn(ny: usize, nx: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(ny * nx);
        for y in 0..ny {
            for x in 0..nx {
                data.push(f(y, x));
            }
        }
        Self { ny, nx, data }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn at(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.nx + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: Complex64) {
        self.data[y * self.nx + x] = v;
    }

    pub fn same_shape(&self, other: &ComplexImage) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &ComplexImage, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.ny, self.nx, other.ny, other.nx
            )))
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.data)
    }

    pub fn linf(&self) -> f64 {
        linf_components(&self.data)
    }

    /// `⟨self, other⟩` with conjugation on `self`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        inner(&self.data, &other.data)
    }

    pub fn inner_re(&self, other: &ComplexImage) -> f64 {
        inner_re(&self.data, &other.data)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ComplexImage) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += v * a;
        }
    }

    pub fn scaled(&self, a: f64) -> ComplexImage {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &ComplexImage) -> ComplexImage {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexImage) -> ComplexImage {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        ComplexImage {
            ny: self.ny,
            nx: self.nx,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ComplexImage,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> ComplexImage {
        debug_assert!(self.same_shape(other));
        ComplexImage {
            ny: self.ny,
            nx: self.nx,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Magnitude image as real values.
    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        check_finite(&self.data).is_ok()
    }
}

macro_rules! coil_array {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            nc: usize,
            ny: usize,
            nx: usize,
            data: Vec<Complex64>,
        }

        impl $name {
            pub fn zeros(nc: usize, ny: usize, nx: usize) -> Self {
                Self { nc, ny, nx, data: vec![Complex64::new(0.0, 0.0); nc * ny * nx] }
            }

            pub fn from_vec(nc: usize, ny: usize, nx: usize, data: Vec<Complex64>) -> Result<Self> {
                if nc == 0 || ny == 0 || nx == 0 {
                    return Err(Error::Shape(format!("empty coil array {nc}x{ny}x{nx}")));
                }
                if data.len() != nc * ny * nx {
                    return Err(Error::Shape(format!(
                        "{} values for a {nc}x{ny}x{nx} coil array",
                        data.len()
                    )));
                }
                check_finite(&data)?;
                Ok(Self { nc, ny, nx, data })
            }

            pub fn from_coils(coils: &[ComplexImage]) -> Result<Self> {
                let first = coils
                    .first()
                    .ok_or_else(|| Error::Shape("no coil images".into()))?;
                let (ny, nx) = first.shape();
                let mut data = Vec::with_capacity(coils.len() * ny * nx);
                for c in coils {
                    first.ensure_same_shape(c, "coil image")?;
                    data.extend_from_slice(c.data());
                }
                Ok(Self { nc: coils.len(), ny, nx, data })
            }

            pub fn nc(&self) -> usize { self.nc }
            pub fn ny(&self) -> usize { self.ny }
            pub fn nx(&self) -> usize { self.nx }
            pub fn shape(&self) -> (usize, usize, usize) { (self.nc, self.ny, self.nx) }
            pub fn data(&self) -> &[Complex64] { &self.data }
            pub fn data_mut(&mut self) -> &mut [Complex64] { &mut self.data }
            pub fn into_vec(self) -> Vec<Complex64> { self.data }

            pub fn coil(&self, c: usize) -> &[Complex64] {
                let n = self.ny * self.nx;
                &self.data[c * n..(c + 1) * n]
            }

            pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
                let n = self.ny * self.nx;
                &mut self.data[c * n..(c + 1) * n]
            }

            pub fn coil_image(&self, c: usize) -> ComplexImage {
                ComplexImage { ny: self.ny, nx: self.nx, data: self.coil(c).to_vec() }
            }

            pub fn at(&self, c: usize, y: usize, x: usize) -> Complex64 {
                self.data[(c * self.ny + y) * self.nx + x]
            }

            pub fn set(&mut self, c: usize, y: usize, x: usize, v: Complex64) {
                self.data[(c * self.ny + y) * self.nx + x] = v;
            }

            pub fn norm(&self) -> f64 { norm(&self.data) }
            pub fn norm_sqr(&self) -> f64 { norm_sqr(&self.data) }

            pub fn inner(&self, other: &Self) -> Complex64 { inner(&self.data, &other.data) }

            pub fn is_finite(&self) -> bool { check_finite(&self.data).is_ok() }
        }
    };
}

coil_array!(
    /// Multi-coil k-space `[nc][ny][nx]`. Rows are phase-encode lines (ky).
    MultiCoilKspace
);

coil_array!(
    /// Complex coil sensitivity maps `[nc][ny][nx]`.
    CoilSensitivities
);

impl MultiCoilKspace {
    pub fn add(&self, other: &MultiCoilKspace) -> Result<MultiCoilKspace> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "k-space {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { nc: self.nc, ny: self.ny, nx: self.nx, data })
    }

    /// Copies the rows `start..start + count` of every coil into a new array.
    pub fn extract_lines(&self, start: usize, count: usize) -> Result<MultiCoilKspace> {
        if start + count > self.ny || count == 0 {
            return Err(Error::OutOfRange {
                what: "line block end",
                index: start + count,
                extent: self.ny,
            });
        }
        let mut out = Vec::with_capacity(self.nc * count * self.nx);
        for c in 0..self.nc {
            let coil = self.coil(c);
            out.extend_from_slice(&coil[start * self.nx..(start + count) * self.nx]);
        }
        Ok(Self { nc: self.nc, ny: count, nx: self.nx, data: out })
    }

    pub fn scaled(&self, a: Complex64) -> MultiCoilKspace {
        Self {
            nc: self.nc,
            ny: self.ny,
            nx: self.nx,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }
}

impl CoilSensitivities {
    /// Largest deviation of `Σ_c |c(p)|²` from one over all pixels.
    pub fn normalization_error(&self) -> f64 {
        let n = self.ny * self.nx;
        (0..n)
            .map(|p| {
                let s: f64 = (0..self.nc).map(|c| self.data[c * n + p].norm_sqr()).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Uniform single-coil map `c ≡ 1`.
    pub fn unit(ny: usize, nx: usize) -> Self {
        Self {
            nc: 1,
            ny,
            nx,
            data: vec![Complex64::new(1.0, 0.0); ny * nx],
        }
    }
}
