//! Magnitude-image quality metrics.

use serde::{Deserialize, Serialize};

use crate::datamodel::ComplexImage;
use crate::error::{Error, Result};

fn magnitudes(a: &ComplexImage, reference: &ComplexImage) -> Result<(Vec<f64>, Vec<f64>)> {
    a.ensure_same_shape(reference, "metric inputs")?;
    Ok((a.magnitude(), reference.magnitude()))
}

/// `‖|a| − |ref|‖₂ / ‖|ref|‖₂` over the full field of view.
pub fn nrmse(a: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (ma, mr) = magnitudes(a, reference)?;
    let den: f64 = mr.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::InvalidArgument("NRMSE reference image is zero".into()));
    }
    let num: f64 = ma.iter().zip(&mr).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `20 log10(max|ref| / rmse)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let (ma, mr) = magnitudes(a, reference)?;
    let peak = mr.iter().copied().fold(0.0, f64::max);
    let mse = ma.iter().zip(&mr).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ma.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// One (method, condition) cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub method: String,
    pub condition: String,
    pub nrmse: f64,
    pub psnr: f64,
    /// `ε / ‖z_Ω‖∞` of the perturbation fed to this cell (0 when clean).
    pub linf_input_ratio: f64,
    /// NRMSE relative to the matched random baseline, for attacked cells.
    pub ratio_vs_baseline: Option<f64>,
    /// Wall time of the reconstruction. Excluded from `metrics.csv`.
    pub wall_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::shepp_logan;

    #[test]
    fn nrmse_basic_values() {
        let x = shepp_logan(32, 32).unwrap();
        assert_eq!(nrmse(&x, &x).unwrap(), 0.0);
        assert!((nrmse(&ComplexImage::zeros(32, 32), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((nrmse(&x.scaled(2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(nrmse(&x, &ComplexImage::zeros(32, 32)).is_err());
    }

    #[test]
    fn psnr_values() {
        let x = shepp_logan(32, 32).unwrap();
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let big = x.map(|v| v + 0.02);
        let small = x.map(|v| v + 0.01);
        let gain = psnr(&small, &x).unwrap() - psnr(&big, &x).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((gain - 6.02).abs() < 0.01);
        // Monotone in NRMSE for a fixed reference.
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let a = x.map(|v| v * (1.0 + 0.05 * k as f64));
            let p = psnr(&a, &x).unwrap();
            assert!(p < last);
            last = p;
        }
    }
}
