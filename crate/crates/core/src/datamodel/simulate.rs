use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::phantom::pixel_coordinate;
use super::{CoilSensitivities, ComplexImage, MultiCoilKspace, SamplingMask};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

/// Parameters of the acquisition simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub nc: usize,
    pub ny: usize,
    pub nx: usize,
    /// Standard deviation of the k-space noise, per real component.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn noiseless(nc: usize, ny: usize, nx: usize) -> Self {
        Self { nc, ny, nx, noise_sigma: 0.0, seed: 0 }
    }
}

/// Shape of the synthetic receive profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoilProfile {
    /// Distance of the lobe centers from the FOV center (FOV half-width = 1).
    pub radius: f64,
    /// Gaussian lobe width.
    pub width: f64,
    /// Linear phase slope in radians per unit distance.
    pub phase_slope: f64,
}

impl Default for CoilProfile {
    fn default() -> Self {
        Self { radius: 1.0, width: 0.6, phase_slope: PI }
    }
}

/// Smooth surface-coil-like maps, normalized so that `Σ_c |c(p)|² = 1`.
pub fn simulate_coils(nc: usize, ny: usize, nx: usize) -> Result<CoilSensitivities> {
    simulate_coils_with(nc, ny, nx, CoilProfile::default())
}

pub fn simulate_coils_with(
    nc: usize,
    ny: usize,
    nx: usize,
    profile: CoilProfile,
) -> Result<CoilSensitivities> {
    if nc == 0 || ny == 0 || nx == 0 {
        return Err(Error::InvalidArgument(format!("empty coil geometry {nc}x{ny}x{nx}")));
    }
    if !(profile.width > 0.0) {
        return Err(Error::InvalidArgument("coil lobe width must be positive".into()));
    }
    let n = ny * nx;
    let mut data = vec![Complex64::new(0.0, 0.0); nc * n];
    for c in 0..nc {
        let theta = 2.0 * PI * c as f64 / nc as f64 + PI / 4.0;
        let (ux, uy) = (theta.cos(), theta.sin());
        let (cx, cy) = (profile.radius * ux, profile.radius * uy);
        for y in 0..ny {
            for x in 0..nx {
                let (px, py) = pixel_coordinate(ny, nx, y, x);
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                let mag = (-d2 / (2.0 * profile.width * profile.width)).exp();
                // Ramp runs perpendicular to the lobe direction plus a per-coil offset.
                let phase = theta + profile.phase_slope * (-px * uy + py * ux);
                data[c * n + y * nx + x] = Complex64::from_polar(mag, phase);
            }
        }
    }
    for p in 0..n {
        let s: f64 = (0..nc).map(|c| data[c * n + p].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..nc {
            data[c * n + p] /= s;
        }
    }
    CoilSensitivities::from_vec(nc, ny, nx, data)
}

/// `y_Ω = E_Ω x + n` with circular Gaussian noise on sampled lines only.
pub fn synthesize_kspace(
    x: &ComplexImage,
    coils: &CoilSensitivities,
    mask: &SamplingMask,
    cfg: &SimulationConfig,
) -> Result<MultiCoilKspace> {
    if x.shape() != (coils.ny(), coils.nx()) {
        return Err(Error::Shape(format!(
            "image {:?} vs coil maps {:?}",
            x.shape(),
            coils.shape()
        )));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let ctx = EncodingContext::new(coils.clone(), mask.clone())?;
    let mut y = ctx.apply_e(x)?;
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (nc, ny, nx) = y.shape();
        for c in 0..nc {
            for ky in (0..ny).filter(|&k| mask.is_sampled(k)) {
                for kx in 0..nx {
                    let v = y.at(c, ky, kx)
                        + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                    y.set(c, ky, kx, v);
                }
            }
        }
    }
    Ok(y)
}
