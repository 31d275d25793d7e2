//! Ellipse phantoms on the normalized field of view `[-1, 1]²`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ComplexImage;
use crate::error::{Error, Result};

/// One ellipse: additive intensity, semi-axes, center and rotation (degrees).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub angle_deg: f64,
}

impl Ellipse {
    const fn new(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi: f64) -> Self {
        Self {
            intensity,
            semi_x: a,
            semi_y: b,
            center_x: x0,
            center_y: y0,
            angle_deg: phi,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / self.semi_x).powi(2) + (yr / self.semi_y).powi(2) <= 1.0
    }
}

/// Modified (high-contrast) Shepp-Logan table.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Normalized coordinate of pixel `(y, x)`: pixel centers, x to the right, y up.
pub fn pixel_coordinate(ny: usize, nx: usize, y: usize, x: usize) -> (f64, f64) {
    let px = -1.0 + (2.0 * x as f64 + 1.0) / nx as f64;
    let py = 1.0 - (2.0 * y as f64 + 1.0) / ny as f64;
    (px, py)
}

/// Rasterizes a set of ellipses, clamping intensities to `[0, 1]`.
pub fn render_ellipses(ny: usize, nx: usize, ellipses: &[Ellipse]) -> ComplexImage {
    ComplexImage::from_fn(ny, nx, |y, x| {
        let (px, py) = pixel_coordinate(ny, nx, y, x);
        let v: f64 = ellipses
            .iter()
            .filter(|e| e.contains(px, py))
            .map(|e| e.intensity)
            .sum();
        Complex64::new(v.clamp(0.0, 1.0), 0.0)
    })
}

pub fn shepp_logan(ny: usize, nx: usize) -> Result<ComplexImage> {
    if ny < 16 || nx < 16 {
        return Err(Error::InvalidArgument(format!(
            "phantom needs at least 16x16, got {ny}x{nx}"
        )));
    }
    Ok(render_ellipses(ny, nx, &SHEPP_LOGAN))
}

/// Seeded random variation of the Shepp-Logan table, for training sets.
///
/// Seed 0 reproduces [`shepp_logan`] exactly.
pub fn random_phantom(ny: usize, nx: usize, seed: u64) -> Result<ComplexImage> {
    if seed == 0 {
        return shepp_logan(ny, nx);
    }
    if ny < 16 || nx < 16 {
        return Err(Error::InvalidArgument(format!(
            "phantom needs at least 16x16, got {ny}x{nx}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.random_range(0.8..1.0);
    let (sx, sy) = (rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06));
    let rot: f64 = rng.random_range(-12.0..12.0);
    let (s, c) = rot.to_radians().sin_cos();
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let intensity = if i < 2 {
                e.intensity
            } else {
                e.intensity * rng.random_range(0.5..1.8)
            };
            let cx = e.center_x * c - e.center_y * s;
            let cy = e.center_x * s + e.center_y * c;
            Ellipse {
                intensity,
                semi_x: e.semi_x * scale,
                semi_y: e.semi_y * scale,
                center_x: cx * scale + sx,
                center_y: cy * scale + sy,
                angle_deg: e.angle_deg - rot,
            }
        })
        .collect();
    Ok(render_ellipses(ny, nx, &ellipses))
}
