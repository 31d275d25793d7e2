//! GRAPPA: k-space synthesis of missing lines from acquired neighbours.
//!
//! For acceleration R a missing line `t` sits at offset `Δ = t mod R` past
//! the acquired lattice line `a = t - Δ`. Its value in every coil is a linear
//! combination of the acquired lines `a + jR` (for `src_lines` values of `j`
//! centered on the gap) at `kx` neighbouring readout positions in all coils.
//! One weight set is calibrated per offset from the ACS block, using only
//! windows whose source lines fall on the same lattice as the mask, and
//! applied with circular boundaries in both directions.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::datamodel::cfl::{base_path, read_array, write_array, CflArray};
use crate::datamodel::{ComplexImage, MultiCoilKspace, SamplingMask};
use crate::encoding::rss_image;
use crate::error::{Error, Result};

/// Kernel footprint: `src_lines` acquired lines along ky times `kernel_kx`
/// readout points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrappaGeometry {
    pub src_lines: usize,
    pub kernel_kx: usize,
}

impl Default for GrappaGeometry {
    fn default() -> Self {
        Self { src_lines: 4, kernel_kx: 5 }
    }
}

impl GrappaGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.src_lines == 0 || self.kernel_kx == 0 {
            return Err(Error::InvalidArgument(format!("empty GRAPPA kernel {self:?}")));
        }
        Ok(())
    }

    /// Source line multipliers `j`, e.g. `[-1, 0, 1, 2]` for four lines.
    pub fn line_steps(&self) -> Vec<isize> {
        let lo = -(self.src_lines as isize / 2 - 1).max(0);
        (0..self.src_lines as isize).map(|i| lo + i).collect()
    }

    /// Readout offsets, e.g. `[-2, -1, 0, 1, 2]` for five points.
    pub fn kx_offsets(&self) -> Vec<isize> {
        let lo = -(self.kernel_kx as isize / 2);
        (0..self.kernel_kx as isize).map(|i| lo + i).collect()
    }

    fn source_len(&self, nc: usize) -> usize {
        nc * self.src_lines * self.kernel_kx
    }
}

/// Calibrated weights, `[R - 1][target coil][source coil][line][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaWeights {
    r: usize,
    nc: usize,
    geometry: GrappaGeometry,
    weights: Vec<Complex64>,
}

impl GrappaWeights {
    pub fn new(r: usize, nc: usize, geometry: GrappaGeometry, weights: Vec<Complex64>) -> Result<Self> {
        geometry.validate()?;
        if r == 0 || nc == 0 {
            return Err(Error::InvalidArgument(format!("GRAPPA weights with R={r}, nc={nc}")));
        }
        let expected = (r - 1) * nc * geometry.source_len(nc);
        if weights.len() != expected {
            return Err(Error::Shape(format!("{} GRAPPA weights, expected {expected}", weights.len())));
        }
        if weights.iter().any(|w| !(w.re.is_finite() && w.im.is_finite())) {
            return Err(Error::Numerical("non-finite GRAPPA weight".into()));
        }
        Ok(Self { r, nc, geometry, weights })
    }

    pub fn acceleration(&self) -> usize {
        self.r
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn geometry(&self) -> GrappaGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[Complex64] {
        &self.weights
    }

    /// Weights for offset `delta` (1-based) and one target coil.
    pub fn kernel(&self, delta: usize, target: usize) -> &[Complex64] {
        let len = self.geometry.source_len(self.nc);
        let start = ((delta - 1) * self.nc + target) * len;
        &self.weights[start..start + len]
    }

    pub fn norm(&self) -> f64 {
        crate::datamodel::norm(&self.weights)
    }
}

/// Gathers the source vector for acquired line `a` and readout position `x`,
/// ordered `(coil, line, kx)`, wrapping circularly.
fn gather_sources(
    y: &MultiCoilKspace,
    a: isize,
    x: isize,
    r: usize,
    steps: &[isize],
    offsets: &[isize],
    out: &mut Vec<Complex64>,
) {
    let (nc, ny, nx) = y.shape();
    out.clear();
    for c in 0..nc {
        for &j in steps {
            let line = (a + j * r as isize).rem_euclid(ny as isize) as usize;
            for &dx in offsets {
                let col = (x + dx).rem_euclid(nx as isize) as usize;
                out.push(y.at(c, line, col));
            }
        }
    }
}

/// Fits the per-offset weights on the ACS block.
///
/// `acs_start` is the global ky index of the block's first row; calibration
/// windows are restricted to those whose source lines lie on the sampling
/// lattice `{0, R, 2R, ...}` and that fit entirely inside the block (no
/// wrapping during calibration). `ridge` adds `ridge·‖S‖_F²/cols` to the
/// diagonal of the normal equations.
pub fn calibrate_kernel(
    acs: &MultiCoilKspace,
    acs_start: usize,
    r: usize,
    geometry: GrappaGeometry,
    ridge: f64,
) -> Result<GrappaWeights> {
    geometry.validate()?;
    if r == 0 {
        return Err(Error::InvalidArgument("acceleration must be at least 1".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be finite and nonnegative")));
    }
    let (nc, ay, ax) = acs.shape();
    if r == 1 {
        return GrappaWeights::new(1, nc, geometry, Vec::new());
    }
    let steps = geometry.line_steps();
    let offsets = geometry.kx_offsets();
    let (jmin, jmax) = (steps[0], *steps.last().unwrap_or(&0));
    let (dmin, dmax) = (offsets[0], *offsets.last().unwrap_or(&0));
    let cols = geometry.source_len(nc);
    let ri = r as isize;

    let mut weights = Vec::with_capacity((r - 1) * nc * cols);
    let mut src = Vec::with_capacity(cols);
    for delta in 1..r {
        // local acquired-line rows `a` whose window lies inside the block
        let anchors: Vec<isize> = (0..ay as isize)
            .filter(|&a| (acs_start as isize + a).rem_euclid(ri) == 0)
            .filter(|&a| a + jmin * ri >= 0 && a + jmax * ri < ay as isize)
            .filter(|&a| a + (delta as isize) < ay as isize)
            .collect();
        let xs: Vec<isize> = (-dmin..ax as isize - dmax).collect();
        let rows = anchors.len() * xs.len();
        if rows < cols {
            return Err(Error::InvalidArgument(format!(
                "ACS block {ay}x{ax} gives {rows} calibration windows for {cols} unknowns at offset {delta}"
            )));
        }
        let mut s = DMatrix::<Complex64>::zeros(rows, cols);
        let mut t = DMatrix::<Complex64>::zeros(rows, nc);
        for (ia, &a) in anchors.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                let row = ia * xs.len() + ix;
                gather_sources(acs, a, x, r, &steps, &offsets, &mut src);
                for (col, v) in src.iter().enumerate() {
                    s[(row, col)] = *v;
                }
                for c in 0..nc {
                    t[(row, c)] = acs.at(c, (a + delta as isize) as usize, x as usize);
                }
            }
        }
        let w = solve_ridge(&s, &t, ridge)?;
        for c in 0..nc {
            weights.extend(w.column(c).iter().copied());
        }
    }
    GrappaWeights::new(r, nc, geometry, weights)
}

fn solve_ridge(s: &DMatrix<Complex64>, t: &DMatrix<Complex64>, ridge: f64) -> Result<DMatrix<Complex64>> {
    if ridge == 0.0 {
        let svd = s.clone().svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        return svd
            .solve(t, 1e-12 * smax)
            .map_err(|e| Error::Numerical(format!("GRAPPA least squares: {e}")));
    }
    let cols = s.ncols();
    let lambda = ridge * s.norm_squared() / cols as f64;
    let sh = s.adjoint();
    let mut normal = &sh * s;
    for i in 0..cols {
        normal[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let rhs = &sh * t;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numerical("GRAPPA normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Fills every unsampled line of `y` and returns the completed k-space and
/// its root-sum-of-squares image. Sampled entries are copied unchanged.
pub fn grappa_reconstruct(
    y: &MultiCoilKspace,
    w: &GrappaWeights,
    mask: &SamplingMask,
) -> Result<(MultiCoilKspace, ComplexImage)> {
    let filled = grappa_fill(y, w, mask)?;
    let image = rss_image(&filled);
    Ok((filled, image))
}

pub fn grappa_fill(y: &MultiCoilKspace, w: &GrappaWeights, mask: &SamplingMask) -> Result<MultiCoilKspace> {
    let (nc, ny, nx) = y.shape();
    let r = w.acceleration();
    if mask.ny() != ny {
        return Err(Error::Shape(format!("mask has {} lines, k-space {ny}", mask.ny())));
    }
    if nc != w.nc() {
        return Err(Error::Shape(format!("weights for {} coils, k-space has {nc}", w.nc())));
    }
    if mask.acceleration() != r {
        return Err(Error::InvalidArgument(format!(
            "mask acceleration {} does not match GRAPPA weights R={r}",
            mask.acceleration()
        )));
    }
    if ny % r != 0 {
        return Err(Error::InvalidArgument(format!("{ny} lines not divisible by R={r}")));
    }
    if let Some(a) = (0..ny).step_by(r).find(|&a| !mask.is_sampled(a)) {
        return Err(Error::InvalidArgument(format!(
            "line {a} of the R={r} lattice is not sampled; GRAPPA needs a uniform mask"
        )));
    }
    let geometry = w.geometry();
    let steps = geometry.line_steps();
    let offsets = geometry.kx_offsets();
    let mut out = y.clone();
    let mut src = Vec::with_capacity(geometry.source_len(nc));
    for t in (0..ny).filter(|&t| !mask.is_sampled(t)) {
        let delta = t % r;
        let a = (t - delta) as isize;
        for x in 0..nx {
            gather_sources(y, a, x as isize, r, &steps, &offsets, &mut src);
            for c in 0..nc {
                let v: Complex64 = w.kernel(delta, c).iter().zip(&src).map(|(k, s)| k * s).sum();
                out.set(c, t, x, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsSidecar {
    acceleration: usize,
    coils: usize,
    src_lines: usize,
    kernel_kx: usize,
}

fn sidecar_path(base: &Path) -> std::path::PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".toml");
    s.into()
}

/// Writes `<base>.cfl/.hdr` (dims `[source, target coil, offset]`) and a
/// `<base>.toml` geometry sidecar.
pub fn write_weights(path: impl AsRef<Path>, w: &GrappaWeights) -> Result<()> {
    let base = base_path(path.as_ref());
    let len = w.geometry.source_len(w.nc);
    let data: Vec<Complex32> = w.weights.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect();
    let dims = vec![len, w.nc, (w.r - 1).max(1)];
    let data = if data.is_empty() { vec![Complex32::new(0.0, 0.0); len * w.nc] } else { data };
    write_array(&base, &CflArray::new(dims, data)?)?;
    let side = WeightsSidecar {
        acceleration: w.r,
        coils: w.nc,
        src_lines: w.geometry.src_lines,
        kernel_kx: w.geometry.kernel_kx,
    };
    let text = toml::to_string(&side).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(sidecar_path(&base), text)?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<GrappaWeights> {
    let base = base_path(path.as_ref());
    let text = fs::read_to_string(sidecar_path(&base))?;
    let side: WeightsSidecar = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let arr = read_array(&base)?;
    let geometry = GrappaGeometry { src_lines: side.src_lines, kernel_kx: side.kernel_kx };
    let data: Vec<Complex64> = if side.acceleration == 1 {
        Vec::new()
    } else {
        arr.data.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect()
    };
    GrappaWeights::new(side.acceleration, side.coils, geometry, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{make_uniform_mask, shepp_logan, simulate_coils};
    use crate::harness::metrics::nrmse;
    use crate::EncodingContext;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_c(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
        Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    }

    /// Full k-space whose missing lines obey `w` exactly: lattice lines are
    /// random, every other line is synthesized from them.
    fn kernel_consistent(nc: usize, ny: usize, nx: usize, r: usize, seed: u64) -> (GrappaWeights, MultiCoilKspace) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geometry = GrappaGeometry::default();
        let len = (r - 1) * nc * geometry.source_len(nc);
        let w = GrappaWeights::new(r, nc, geometry, (0..len).map(|_| random_c(&mut rng, 0.1)).collect()).unwrap();
        let mut y = MultiCoilKspace::zeros(nc, ny, nx);
        for c in 0..nc {
            for a in (0..ny).step_by(r) {
                for x in 0..nx {
                    y.set(c, a, x, random_c(&mut rng, 1.0));
                }
            }
        }
        let lattice = SamplingMask::new(
            (0..ny).map(|t| t % r == 0).collect(),
            0,
            0,
            crate::MaskKind::Uniform,
            r,
        )
        .unwrap();
        let full = grappa_fill(&y, &w, &lattice).unwrap();
        (w, full)
    }

    fn masked(y: &MultiCoilKspace, mask: &SamplingMask) -> MultiCoilKspace {
        let mut out = y.clone();
        let (nc, ny, nx) = y.shape();
        for c in 0..nc {
            for t in (0..ny).filter(|&t| !mask.is_sampled(t)) {
                for x in 0..nx {
                    out.set(c, t, x, Complex64::new(0.0, 0.0));
                }
            }
        }
        out
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
        (num / crate::datamodel::norm_sqr(b)).sqrt()
    }

    #[test]
    fn geometry_offsets() {
        let g = GrappaGeometry::default();
        assert_eq!(g.line_steps(), vec![-1, 0, 1, 2]);
        assert_eq!(g.kx_offsets(), vec![-2, -1, 0, 1, 2]);
        let g2 = GrappaGeometry { src_lines: 2, kernel_kx: 3 };
        assert_eq!(g2.line_steps(), vec![0, 1]);
        assert_eq!(g2.kx_offsets(), vec![-1, 0, 1]);
    }

    #[test]
    fn calibration_recovers_generating_weights() {
        let (w, full) = kernel_consistent(3, 64, 32, 4, 11);
        let mask = make_uniform_mask(64, 4, 24).unwrap();
        let acs = full.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let est = calibrate_kernel(&acs, mask.acs_start(), 4, GrappaGeometry::default(), 0.0).unwrap();
        let err = rel(est.data(), w.data());
        assert!(err < 1e-6, "relative weight error {err}");
    }

    #[test]
    fn reconstruction_is_exact_on_kernel_consistent_data() {
        let (_, full) = kernel_consistent(4, 64, 32, 4, 5);
        let mask = make_uniform_mask(64, 4, 24).unwrap();
        let y = masked(&full, &mask);
        let acs = y.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let w = calibrate_kernel(&acs, mask.acs_start(), 4, GrappaGeometry::default(), 0.0).unwrap();
        let (filled, _) = grappa_reconstruct(&y, &w, &mask).unwrap();
        let err = rel(filled.data(), full.data());
        assert!(err < 1e-6, "relative k-space error {err}");
        for c in 0..4 {
            for t in mask.sampled_lines() {
                for x in 0..32 {
                    assert_eq!(filled.at(c, t, x).re.to_bits(), y.at(c, t, x).re.to_bits());
                    assert_eq!(filled.at(c, t, x).im.to_bits(), y.at(c, t, x).im.to_bits());
                }
            }
        }
    }

    #[test]
    fn duplicate_coils_still_predict_missing_lines() {
        let (_, single) = kernel_consistent(1, 64, 32, 2, 9);
        let mut data = single.data().to_vec();
        data.extend_from_slice(single.data());
        let full = MultiCoilKspace::from_vec(2, 64, 32, data).unwrap();
        let mask = make_uniform_mask(64, 2, 24).unwrap();
        let y = masked(&full, &mask);
        let acs = y.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let w = calibrate_kernel(&acs, mask.acs_start(), 2, GrappaGeometry::default(), 1e-12).unwrap();
        let (filled, _) = grappa_reconstruct(&y, &w, &mask).unwrap();
        let err = rel(filled.data(), full.data());
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn huge_ridge_drives_weights_to_zero() {
        let (_, full) = kernel_consistent(2, 64, 32, 4, 3);
        let acs = full.extract_lines(20, 24).unwrap();
        let w0 = calibrate_kernel(&acs, 20, 4, GrappaGeometry::default(), 1e-4).unwrap();
        let w = calibrate_kernel(&acs, 20, 4, GrappaGeometry::default(), 1e12).unwrap();
        assert!(w.norm() < 1e-9 * w0.norm(), "{} vs {}", w.norm(), w0.norm());
    }

    #[test]
    fn acceleration_one_is_identity() {
        let (_, full) = kernel_consistent(2, 16, 16, 2, 1);
        let mask = make_uniform_mask(16, 1, 0).unwrap();
        let w = calibrate_kernel(&full, 0, 1, GrappaGeometry::default(), 1e-4).unwrap();
        let (filled, _) = grappa_reconstruct(&full, &w, &mask).unwrap();
        assert_eq!(filled, full);
    }

    #[test]
    fn too_small_acs_is_rejected() {
        let acs = MultiCoilKspace::zeros(8, 12, 16);
        assert!(matches!(
            calibrate_kernel(&acs, 0, 4, GrappaGeometry::default(), 1e-4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mismatched_acceleration_is_rejected() {
        let (w, full) = kernel_consistent(2, 32, 16, 4, 2);
        let mask = make_uniform_mask(32, 2, 8).unwrap();
        assert!(grappa_reconstruct(&full, &w, &mask).is_err());
    }

    #[test]
    fn kx_shift_commutes_with_reconstruction() {
        let (_, full) = kernel_consistent(3, 64, 32, 4, 21);
        let mask = make_uniform_mask(64, 4, 24).unwrap();
        let y = masked(&full, &mask);
        let acs = y.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let w = calibrate_kernel(&acs, mask.acs_start(), 4, GrappaGeometry::default(), 0.0).unwrap();
        let shift = |k: &MultiCoilKspace, s: usize| {
            let (nc, ny, nx) = k.shape();
            let mut out = k.clone();
            for c in 0..nc {
                for t in 0..ny {
                    for x in 0..nx {
                        out.set(c, t, (x + s) % nx, k.at(c, t, x));
                    }
                }
            }
            out
        };
        let a = grappa_fill(&shift(&y, 5), &w, &mask).unwrap();
        let b = shift(&grappa_fill(&y, &w, &mask).unwrap(), 5);
        let err = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max deviation {err}");
    }

    #[test]
    fn beats_zero_filling_on_phantom() {
        let x = shepp_logan(128, 128).unwrap();
        let coils = simulate_coils(8, 128, 128).unwrap();
        let full_ctx = EncodingContext::fully_sampled(coils.clone());
        let full = full_ctx.apply_e(&x).unwrap();
        let mask = make_uniform_mask(128, 4, 24).unwrap();
        let y = full_ctx.with_mask(mask.clone()).unwrap().apply_e(&x).unwrap();
        let acs = y.extract_lines(mask.acs_start(), mask.acs_count()).unwrap();
        let w = calibrate_kernel(&acs, mask.acs_start(), 4, GrappaGeometry::default(), 1e-4).unwrap();
        let (_, img) = grappa_reconstruct(&y, &w, &mask).unwrap();
        let reference = rss_image(&full);
        let zf = nrmse(&rss_image(&y), &reference).unwrap();
        let g = nrmse(&img, &reference).unwrap();
        assert!(g < zf, "grappa {g} vs zero-filled {zf}");
    }

    #[test]
    fn weights_round_trip_through_files() {
        let (w, _) = kernel_consistent(2, 36, 16, 3, 4);
        let dir = tempfile::tempdir().unwrap();
        write_weights(dir.path().join("w"), &w).unwrap();
        let back = read_weights(dir.path().join("w.cfl")).unwrap();
        assert_eq!(back.acceleration(), 3);
        assert_eq!(back.geometry(), w.geometry());
        let err = rel(back.data(), w.data());
        assert!(err < 1e-6);
    }
}
