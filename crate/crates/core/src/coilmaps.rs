//! ESPIRiT coil-sensitivity estimation from a fully sampled calibration block.
//!
//! The calibration matrix collects every kernel-sized window of the ACS data
//! across coils. Its dominant right-singular vectors span the subspace that
//! consistent multi-coil k-space occupies locally; mapped to image space they
//! give, at every pixel, an `nc x nc` operator whose eigenvector with
//! eigenvalue one is the sensitivity vector.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datamodel::{CoilSensitivities, MultiCoilKspace};
use crate::encoding::Fft2;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EspiritConfig {
    pub kernel_ky: usize,
    pub kernel_kx: usize,
    /// Singular values below `sv_threshold * σ_max` are discarded.
    pub sv_threshold: f64,
    /// Pixels whose dominant eigenvalue falls below this are zeroed.
    pub eig_crop: f64,
    pub power_iters: usize,
}

impl Default for EspiritConfig {
    fn default() -> Self {
        Self { kernel_ky: 6, kernel_kx: 6, sv_threshold: 0.02, eig_crop: 0.9, power_iters: 50 }
    }
}

impl EspiritConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_ky < 2 || self.kernel_kx < 2 {
            return Err(Error::InvalidArgument(format!(
                "kernel {}x{} must be at least 2x2",
                self.kernel_ky, self.kernel_kx
            )));
        }
        if !(self.sv_threshold > 0.0 && self.sv_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sv_threshold {} outside (0, 1)",
                self.sv_threshold
            )));
        }
        if !(self.eig_crop > 0.0 && self.eig_crop <= 1.0) {
            return Err(Error::InvalidArgument(format!("eig_crop {} outside (0, 1]", self.eig_crop)));
        }
        if self.power_iters == 0 {
            return Err(Error::InvalidArgument("power_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sliding-window (Hankel block) calibration matrix.
///
/// Rows are windows in row-major window-position order; columns are ordered
/// `(coil, dy, dx)` with `dx` fastest.
pub fn build_calibration_matrix(
    acs: &MultiCoilKspace,
    kernel_ky: usize,
    kernel_kx: usize,
) -> Result<DMatrix<Complex64>> {
    let (nc, ay, ax) = acs.shape();
    if kernel_ky == 0 || kernel_kx == 0 || ay < kernel_ky || ax < kernel_kx {
        return Err(Error::InvalidArgument(format!(
            "calibration block {ay}x{ax} smaller than kernel {kernel_ky}x{kernel_kx}"
        )));
    }
    let (wy, wx) = (ay - kernel_ky + 1, ax - kernel_kx + 1);
    let cols = nc * kernel_ky * kernel_kx;
    Ok(DMatrix::from_fn(wy * wx, cols, |row, col| {
        let (y0, x0) = (row / wx, row % wx);
        let c = col / (kernel_ky * kernel_kx);
        let dy = (col / kernel_kx) % kernel_ky;
        let dx = col % kernel_kx;
        acs.at(c, y0 + dy, x0 + dx)
    }))
}

/// Estimated maps together with the per-pixel dominant eigenvalue.
#[derive(Clone, Debug)]
pub struct EspiritResult {
    pub maps: CoilSensitivities,
    pub eigenvalues: Vec<f64>,
    pub kept_kernels: usize,
}

pub fn espirit_maps(
    acs: &MultiCoilKspace,
    ny: usize,
    nx: usize,
    cfg: &EspiritConfig,
) -> Result<CoilSensitivities> {
    espirit(acs, ny, nx, cfg).map(|r| r.maps)
}

pub fn espirit(
    acs: &MultiCoilKspace,
    ny: usize,
    nx: usize,
    cfg: &EspiritConfig,
) -> Result<EspiritResult> {
    cfg.validate()?;
    let nc = acs.nc();
    let (kky, kkx) = (cfg.kernel_ky, cfg.kernel_kx);
    if kky > ny || kkx > nx {
        return Err(Error::InvalidArgument(format!(
            "kernel {kky}x{kkx} larger than the {ny}x{nx} grid"
        )));
    }
    let a = build_calibration_matrix(acs, kky, kkx)?;
    let kernels = signal_kernels(a, cfg.sv_threshold)?;

    let g = ImageKernels::new(&kernels, nc, kky, kkx, ny, nx);
    let npix = ny * nx;
    let mut maps = vec![Complex64::new(0.0, 0.0); nc * npix];
    let mut eigenvalues = vec![0.0; npix];
    let mut gm = vec![Complex64::new(0.0, 0.0); nc * nc];
    for p in 0..npix {
        g.pixel_operator(p, &mut gm);
        let (lambda, vec) = dominant_eigenpair(&gm, nc, cfg.power_iters);
        eigenvalues[p] = lambda;
        if lambda < cfg.eig_crop {
            continue;
        }
        let phase = if vec[0].norm() > 0.0 { vec[0].conj() / vec[0].norm() } else { Complex64::new(1.0, 0.0) };
        for c in 0..nc {
            maps[c * npix + p] = vec[c] * phase;
        }
    }
    Ok(EspiritResult {
        maps: CoilSensitivities::from_vec(nc, ny, nx, maps)?,
        eigenvalues,
        kept_kernels: kernels.len(),
    })
}

/// Kernels mapped to image space, `g_j,c(p) = Σ_d v_j[c, d] exp(+2πi d·q(p)/N)`
/// with `q = p - N/2`. A zero-padded centered inverse DFT scaled by `sqrt(N)`
/// evaluates exactly that sum.
struct ImageKernels {
    g: Vec<Complex64>,
    count: usize,
    nc: usize,
    npix: usize,
    inv_window: f64,
}

impl ImageKernels {
    fn new(kernels: &[Vec<Complex64>], nc: usize, kky: usize, kkx: usize, ny: usize, nx: usize) -> Self {
        let npix = ny * nx;
        let fft = Fft2::new(ny, nx);
        let scale = (npix as f64).sqrt();
        let (oy, ox) = (ny / 2, nx / 2);
        let mut g = vec![Complex64::new(0.0, 0.0); kernels.len() * nc * npix];
        let mut buf = vec![Complex64::new(0.0, 0.0); npix];
        for (j, v) in kernels.iter().enumerate() {
            for c in 0..nc {
                buf.fill(Complex64::new(0.0, 0.0));
                for dy in 0..kky {
                    for dx in 0..kkx {
                        buf[(oy + dy) % ny * nx + (ox + dx) % nx] = v[(c * kky + dy) * kkx + dx];
                    }
                }
                fft.inverse(&mut buf);
                let dst = &mut g[(j * nc + c) * npix..(j * nc + c + 1) * npix];
                for (d, s) in dst.iter_mut().zip(&buf) {
                    *d = s * scale;
                }
            }
        }
        Self { g, count: kernels.len(), nc, npix, inv_window: 1.0 / (kky * kkx) as f64 }
    }

    /// `G(p) = (1/K) Σ_j g_j(p) g_j(p)^H`, row-major `nc x nc`.
    fn pixel_operator(&self, p: usize, out: &mut [Complex64]) {
        let nc = self.nc;
        out.fill(Complex64::new(0.0, 0.0));
        for j in 0..self.count {
            for r in 0..nc {
                let gr = self.g[(j * nc + r) * self.npix + p];
                for s in 0..nc {
                    out[r * nc + s] += gr * self.g[(j * nc + s) * self.npix + p].conj();
                }
            }
        }
        for v in out.iter_mut() {
            *v *= self.inv_window;
        }
    }
}

/// Signal-subspace kernels for singular values `σ ≥ threshold · σ_max`,
/// largest first. Calibration rows are transposed windows, so windows lie in
/// the span of the rows of `V^H` taken as column vectors.
fn signal_kernels(a: DMatrix<Complex64>, threshold: f64) -> Result<Vec<Vec<Complex64>>> {
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right-singular vectors".into()))?;
    let sigma = svd.singular_values;
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    if !(smax.is_finite() && smax > 0.0) {
        return Err(Error::Numerical("calibration matrix has no nonzero singular value".into()));
    }
    let mut order: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] >= threshold * smax).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    if order.is_empty() {
        return Err(Error::Numerical("all singular values below threshold".into()));
    }
    Ok(order
        .into_iter()
        .map(|i| v_t.row(i).iter().copied().collect())
        .collect())
}

/// Power iteration on a Hermitian PSD `n x n` matrix (row-major), started
/// from its column of largest diagonal so the start is never orthogonal to
/// a dominant eigenvector that carries any energy.
fn dominant_eigenpair(m: &[Complex64], n: usize, iters: usize) -> (f64, Vec<Complex64>) {
    let start = (0..n)
        .max_by(|&a, &b| m[a * n + a].re.total_cmp(&m[b * n + b].re))
        .unwrap_or(0);
    let mut v: Vec<Complex64> = (0..n).map(|r| m[r * n + start]).collect();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nv == 0.0 {
        return (0.0, vec![Complex64::new(0.0, 0.0); n]);
    }
    for z in v.iter_mut() {
        *z /= nv;
    }
    for _ in 0..iters {
        for r in 0..n {
            w[r] = (0..n).map(|s| m[r * n + s] * v[s]).sum();
        }
        nv = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nv == 0.0 {
            return (0.0, vec![Complex64::new(0.0, 0.0); n]);
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / nv;
        }
    }
    let lambda: f64 = (0..n)
        .map(|r| (v[r].conj() * (0..n).map(|s| m[r * n + s] * v[s]).sum::<Complex64>()).re)
        .sum();
    (lambda, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{make_uniform_mask, shepp_logan, simulate_coils};
    use crate::EncodingContext;

    fn calibration_data(nc: usize, n: usize, acs: usize) -> (CoilSensitivities, MultiCoilKspace) {
        let x = shepp_logan(n, n).unwrap();
        let coils = simulate_coils(nc, n, n).unwrap();
        let ctx = EncodingContext::fully_sampled(coils.clone());
        let y = ctx.apply_e(&x).unwrap();
        let start = n / 2 - acs / 2;
        (coils, y.extract_lines(start, acs).unwrap())
    }

    #[test]
    fn calibration_matrix_shapes() {
        let acs = MultiCoilKspace::zeros(1, 8, 8);
        let a = build_calibration_matrix(&acs, 3, 3).unwrap();
        assert_eq!(a.shape(), (36, 9));
        let acs = MultiCoilKspace::zeros(8, 24, 32);
        let a = build_calibration_matrix(&acs, 6, 6).unwrap();
        assert_eq!(a.shape(), (19 * 27, 288));
        assert!(build_calibration_matrix(&MultiCoilKspace::zeros(2, 4, 8), 6, 6).is_err());
    }

    #[test]
    fn constant_acs_gives_rank_one_matrix() {
        let mut acs = MultiCoilKspace::zeros(1, 8, 8);
        acs.data_mut().fill(Complex64::new(1.0, 0.0));
        let sv = build_calibration_matrix(&acs, 3, 3).unwrap().singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        assert!((smax - 18.0).abs() < 1e-10, "σ_max = {smax}");
        assert_eq!(sv.iter().filter(|&&s| s > 1e-10 * smax).count(), 1);
    }

    #[test]
    fn window_entries_follow_column_order() {
        let acs = MultiCoilKspace::from_vec(
            2,
            3,
            4,
            (0..24).map(|i| Complex64::new(i as f64, 0.0)).collect(),
        )
        .unwrap();
        let a = build_calibration_matrix(&acs, 2, 3).unwrap();
        assert_eq!(a.shape(), (4, 12));
        // window at (y0, x0) = (1, 1): coil 1, dy 1, dx 2 -> acs(1, 2, 3)
        assert_eq!(a[(3, 6 + 3 + 2)], acs.at(1, 2, 3));
        assert_eq!(a[(0, 0)], acs.at(0, 0, 0));
    }

    #[test]
    fn recovers_simulated_maps_on_the_object() {
        let (truth, acs) = calibration_data(4, 64, 24);
        let est = espirit(&acs, 64, 64, &EspiritConfig::default()).unwrap();
        let x = shepp_logan(64, 64).unwrap();
        let npix = 64 * 64;
        let mut checked = 0;
        for p in 0..npix {
            if x.data()[p].norm() == 0.0 || est.eigenvalues[p] < 0.9 {
                continue;
            }
            let dot: Complex64 = (0..4)
                .map(|c| est.maps.data()[c * npix + p].conj() * truth.data()[c * npix + p])
                .sum();
            assert!(dot.norm() > 0.99, "pixel {p}: |<c_est, c_true>| = {}", dot.norm());
            checked += 1;
        }
        assert!(checked > npix / 4, "only {checked} pixels above crop");
    }

    #[test]
    fn pixel_norms_are_zero_or_one_and_coil0_is_real() {
        let (_, acs) = calibration_data(4, 32, 16);
        let maps = espirit_maps(&acs, 32, 32, &EspiritConfig::default()).unwrap();
        let npix = 32 * 32;
        for p in 0..npix {
            let n2: f64 = (0..4).map(|c| maps.data()[c * npix + p].norm_sqr()).sum();
            let n = n2.sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6, "pixel {p} norm {n}");
            let c0 = maps.data()[p];
            assert!(c0.im.abs() < 1e-12 && c0.re >= 0.0);
        }
    }

    #[test]
    fn single_uniform_coil_gives_unit_magnitude() {
        let x = shepp_logan(32, 32).unwrap();
        let ctx = EncodingContext::fully_sampled(CoilSensitivities::unit(32, 32));
        let acs = ctx.apply_e(&x).unwrap().extract_lines(8, 16).unwrap();
        let maps = espirit_maps(&acs, 32, 32, &EspiritConfig::default()).unwrap();
        for (p, v) in x.data().iter().enumerate() {
            if v.norm() > 0.0 {
                assert!((maps.data()[p].norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invariant_to_global_complex_scaling() {
        let (_, acs) = calibration_data(4, 32, 16);
        let cfg = EspiritConfig::default();
        let a = espirit_maps(&acs, 32, 32, &cfg).unwrap();
        let b = espirit_maps(&acs.scaled(Complex64::new(0.0, 3.0)), 32, 32, &cfg).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "max map difference {diff}");
    }

    #[test]
    fn raising_crop_never_adds_pixels() {
        let (_, acs) = calibration_data(4, 32, 16);
        let support = |crop: f64| -> Vec<bool> {
            let cfg = EspiritConfig { eig_crop: crop, ..Default::default() };
            let m = espirit_maps(&acs, 32, 32, &cfg).unwrap();
            (0..32 * 32).map(|p| m.data()[p].norm() > 0.0).collect()
        };
        let mut prev = support(0.5);
        for crop in [0.8, 0.9, 0.95, 0.99] {
            let next = support(crop);
            assert!(prev.iter().zip(&next).all(|(&a, &b)| a || !b));
            prev = next;
        }
    }

    #[test]
    fn zero_calibration_data_is_degenerate() {
        let acs = MultiCoilKspace::zeros(2, 8, 8);
        assert!(matches!(
            espirit_maps(&acs, 16, 16, &EspiritConfig::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn maps_from_uniform_acs_block() {
        let x = shepp_logan(64, 64).unwrap();
        let coils = simulate_coils(8, 64, 64).unwrap();
        let mask = make_uniform_mask(64, 4, 24).unwrap();
        let ctx = EncodingContext::new(coils, mask.clone()).unwrap();
        let y = ctx.apply_e(&x).unwrap();
        let acs = y.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let maps = espirit_maps(&acs, 64, 64, &EspiritConfig::default()).unwrap();
        assert!(maps.is_finite());
    }
}
