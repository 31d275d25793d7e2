//! Orthonormal separable 2-D Daubechies wavelet transform with periodic
//! boundaries, stored in the usual in-place pyramid layout: after `L`
//! levels the approximation band occupies the top-left
//! `ny/2^L x nx/2^L` block and each level's detail bands surround it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datamodel::ComplexImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    /// 4-tap extremal-phase Daubechies filter (two vanishing moments).
    #[default]
    D4,
    /// 8-tap Daubechies filter (four vanishing moments).
    Db4,
}

const DB4_8: [f64; 8] = [
    0.230_377_813_308_896_4,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_7,
    -0.027_983_769_416_859_9,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_7,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_0,
];

impl Wavelet {
    /// Low-pass analysis filter, normalized so `Σ h = √2`.
    pub fn lowpass(self) -> Vec<f64> {
        match self {
            Wavelet::D4 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * 2f64.sqrt();
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
            Wavelet::Db4 => DB4_8.to_vec(),
        }
    }

    /// Quadrature-mirror high-pass filter `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect()
    }
}

/// Coefficients in pyramid layout, same shape as the transformed image.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs {
    levels: usize,
    wavelet: Wavelet,
    ny: usize,
    nx: usize,
    data: Vec<Complex64>,
}

impl WaveletCoeffs {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn wavelet(&self) -> Wavelet {
        self.wavelet
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the coarsest approximation band.
    pub fn approx_shape(&self) -> (usize, usize) {
        (self.ny >> self.levels, self.nx >> self.levels)
    }

    /// Whether the coefficient at `(y, x)` belongs to the approximation band.
    pub fn is_approx(&self, y: usize, x: usize) -> bool {
        let (ay, ax) = self.approx_shape();
        y < ay && x < ax
    }

    /// Copies one band out: `kind` 0 = approximation, 1 = LH (vertical
    /// detail: low-pass along x, high-pass along y), 2 = HL, 3 = HH.
    /// Detail bands are indexed by `level` from 1 (finest) to `levels`.
    pub fn band(&self, level: usize, kind: usize) -> Result<Vec<Complex64>> {
        if kind > 3 || (kind > 0 && (level == 0 || level > self.levels)) {
            return Err(Error::InvalidArgument(format!("no band {kind} at level {level}")));
        }
        let (by, bx, oy, ox) = if kind == 0 {
            let (ay, ax) = self.approx_shape();
            (ay, ax, 0, 0)
        } else {
            let (by, bx) = (self.ny >> level, self.nx >> level);
            match kind {
                1 => (by, bx, by, 0),
                2 => (by, bx, 0, bx),
                _ => (by, bx, by, bx),
            }
        };
        let mut out = Vec::with_capacity(by * bx);
        for y in 0..by {
            out.extend_from_slice(&self.data[(oy + y) * self.nx + ox..(oy + y) * self.nx + ox + bx]);
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        crate::datamodel::norm(&self.data)
    }

    /// `Σ |w|` over the detail bands, plus the approximation band when asked.
    pub fn l1(&self, include_approx: bool) -> f64 {
        let mut s = 0.0;
        for y in 0..self.ny {
            for x in 0..self.nx {
                if include_approx || !self.is_approx(y, x) {
                    s += self.data[y * self.nx + x].norm();
                }
            }
        }
        s
    }
}

fn check_levels(ny: usize, nx: usize, levels: usize) -> Result<()> {
    let f = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if levels == 0 || f == 0 || ny % f != 0 || nx % f != 0 {
        return Err(Error::InvalidArgument(format!(
            "{ny}x{nx} image is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn analyze(x: &[Complex64], h: &[f64], g: &[f64], out: &mut [Complex64]) {
    let n = x.len();
    let half = n / 2;
    for i in 0..half {
        let mut a = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for k in 0..h.len() {
            let v = x[(2 * i + k) % n];
            a += v * h[k];
            d += v * g[k];
        }
        out[i] = a;
        out[half + i] = d;
    }
}

fn synthesize(c: &[Complex64], h: &[f64], g: &[f64], out: &mut [Complex64]) {
    let n = c.len();
    let half = n / 2;
    out.fill(Complex64::new(0.0, 0.0));
    for i in 0..half {
        let (a, d) = (c[i], c[half + i]);
        for k in 0..h.len() {
            out[(2 * i + k) % n] += a * h[k] + d * g[k];
        }
    }
}

/// Applies a 1-D transform to every row and column of the top-left
/// `by x bx` block of `data` (row stride `nx`).
fn apply_block(
    data: &mut [Complex64],
    nx: usize,
    by: usize,
    bx: usize,
    f: &dyn Fn(&[Complex64], &mut [Complex64]),
    rows_first: bool,
) {
    let mut src = vec![Complex64::new(0.0, 0.0); by.max(bx)];
    let mut dst = src.clone();
    let mut do_rows = |data: &mut [Complex64]| {
        for y in 0..by {
            src[..bx].copy_from_slice(&data[y * nx..y * nx + bx]);
            f(&src[..bx], &mut dst[..bx]);
            data[y * nx..y * nx + bx].copy_from_slice(&dst[..bx]);
        }
    };
    let mut src2 = vec![Complex64::new(0.0, 0.0); by.max(bx)];
    let mut dst2 = src2.clone();
    let mut do_cols = |data: &mut [Complex64]| {
        for x in 0..bx {
            for y in 0..by {
                src2[y] = data[y * nx + x];
            }
            f(&src2[..by], &mut dst2[..by]);
            for y in 0..by {
                data[y * nx + x] = dst2[y];
            }
        }
    };
    if rows_first {
        do_rows(data);
        do_cols(data);
    } else {
        do_cols(data);
        do_rows(data);
    }
}

pub fn dwt2(x: &ComplexImage, levels: usize, wavelet: Wavelet) -> Result<WaveletCoeffs> {
    let (ny, nx) = x.shape();
    check_levels(ny, nx, levels)?;
    let (h, g) = (wavelet.lowpass(), wavelet.highpass());
    let mut data = x.data().to_vec();
    let f = |s: &[Complex64], d: &mut [Complex64]| analyze(s, &h, &g, d);
    for l in 0..levels {
        apply_block(&mut data, nx, ny >> l, nx >> l, &f, true);
    }
    Ok(WaveletCoeffs { levels, wavelet, ny, nx, data })
}

pub fn idwt2(c: &WaveletCoeffs) -> Result<ComplexImage> {
    let (ny, nx) = (c.ny, c.nx);
    let (h, g) = (c.wavelet.lowpass(), c.wavelet.highpass());
    let mut data = c.data.clone();
    let f = |s: &[Complex64], d: &mut [Complex64]| synthesize(s, &h, &g, d);
    for l in (0..c.levels).rev() {
        apply_block(&mut data, nx, ny >> l, nx >> l, &f, false);
    }
    ComplexImage::from_vec(ny, nx, data)
}

/// Complex soft-thresholding `w · max(|w| - τ, 0) / |w|`.
pub fn shrink(w: Complex64, tau: f64) -> Complex64 {
    let m = w.norm();
    if m <= tau || m == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        w * ((m - tau) / m)
    }
}

/// Shrinks every detail coefficient; the approximation band is left
/// untouched unless `include_approx` is set.
pub fn soft_threshold(c: &WaveletCoeffs, tau: f64, include_approx: bool) -> Result<WaveletCoeffs> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} must be nonnegative")));
    }
    let mut out = c.clone();
    for y in 0..c.ny {
        for x in 0..c.nx {
            if include_approx || !c.is_approx(y, x) {
                let i = y * c.nx + x;
                out.data[i] = shrink(c.data[i], tau);
            }
        }
    }
    Ok(out)
}
