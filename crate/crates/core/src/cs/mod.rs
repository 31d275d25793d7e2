//! Wavelet-ℓ1 compressed sensing by half-quadratic splitting.
//!
//! Minimizes `F(x, u) = ½‖y − E x‖² + λ‖W u‖₁ + (μ/2)‖x − u‖²` by exact
//! alternation: `u` is the wavelet soft-threshold of `x` at `λ/μ`, and `x`
//! solves `(E^H E + μ I) x = E^H y + μ u` with a fixed number of CG steps.

pub mod wavelet;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use wavelet::{dwt2, idwt2, shrink, soft_threshold, Wavelet, WaveletCoeffs};

use crate::cgsense::dc_unit;
use crate::datamodel::{ComplexImage, MultiCoilKspace};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsConfig {
    /// ℓ1 weight; multiplied by `‖z‖∞` when `lambda_relative` is set.
    pub lambda: f64,
    pub lambda_relative: bool,
    /// Splitting penalty.
    pub mu: f64,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub levels: usize,
    pub wavelet: Wavelet,
    /// Also shrink the coarsest approximation band.
    pub threshold_approx: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            lambda_relative: true,
            mu: 0.1,
            outer_iters: 20,
            cg_iters: 10,
            levels: 3,
            wavelet: Wavelet::D4,
            threshold_approx: false,
        }
    }
}

impl CsConfig {
    pub fn validate(&self, ny: usize, nx: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu {} must be positive", self.mu)));
        }
        if self.outer_iters == 0 || self.cg_iters == 0 || self.levels == 0 {
            return Err(Error::InvalidArgument(
                "outer_iters, cg_iters and levels must be positive".into(),
            ));
        }
        let f = 1usize << self.levels.min(usize::BITS as usize - 1);
        if ny % f != 0 || nx % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "{ny}x{nx} image is not divisible by 2^{}",
                self.levels
            )));
        }
        Ok(())
    }
}

/// Objective terms after one outer round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub round: usize,
    /// `½‖y − Ex‖²`, or `½⟨x, E^H E x⟩ − Re⟨x, z⟩` (same up to a constant)
    /// when only the zero-filled image is known.
    pub data: f64,
    /// `λ‖W u‖₁` over the thresholded bands.
    pub l1: f64,
    /// `(μ/2)‖x − u‖²`
    pub penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data + self.l1 + self.penalty
    }
}

#[derive(Clone, Debug)]
pub struct CsOutput {
    pub image: ComplexImage,
    pub trace: Vec<ObjectiveTerms>,
    /// Absolute `λ` actually used.
    pub lambda: f64,
}

pub fn cs_reconstruct(y: &MultiCoilKspace, ctx: &EncodingContext, cfg: &CsConfig) -> Result<CsOutput> {
    let z = ctx.apply_eh(y)?;
    run(&z, ctx, cfg, Some(y))
}

/// Same iteration driven by a (possibly perturbed) zero-filled image.
pub fn cs_from_zero_filled(z: &ComplexImage, ctx: &EncodingContext, cfg: &CsConfig) -> Result<CsOutput> {
    run(z, ctx, cfg, None)
}

fn run(z: &ComplexImage, ctx: &EncodingContext, cfg: &CsConfig, y: Option<&MultiCoilKspace>) -> Result<CsOutput> {
    let (ny, nx) = ctx.image_shape();
    cfg.validate(ny, nx)?;
    if z.shape() != (ny, nx) {
        return Err(Error::Shape(format!("zero-filled image {:?} vs grid {:?}", z.shape(), (ny, nx))));
    }
    let lambda = if cfg.lambda_relative { cfg.lambda * z.linf() } else { cfg.lambda };
    let tau = lambda / cfg.mu;

    let data_term = |x: &ComplexImage| -> Result<f64> {
        match y {
            Some(y) => {
                let ex = ctx.apply_e(x)?;
                Ok(0.5 * y.data().iter().zip(ex.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>())
            }
            None => {
                let hx = ctx.normal_op(x, 0.0)?;
                Ok(0.5 * x.inner_re(&hx) - x.inner_re(z))
            }
        }
    };

    let mut x = z.clone();
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    for round in 0..cfg.outer_iters {
        let coeffs = soft_threshold(&dwt2(&x, cfg.levels, cfg.wavelet)?, tau, cfg.threshold_approx)?;
        let l1 = lambda * coeffs.l1(cfg.threshold_approx);
        let u = idwt2(&coeffs)?;
        x = dc_unit(ctx, z, &u, cfg.mu, cfg.cg_iters)?;
        if !x.is_finite() {
            return Err(Error::Numerical(format!("CS iterate became non-finite in round {round}")));
        }
        trace.push(ObjectiveTerms {
            round,
            data: data_term(&x)?,
            l1,
            penalty: 0.5 * cfg.mu * x.sub(&u).norm_sqr(),
        });
    }
    Ok(CsOutput { image: x, trace, lambda })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[ObjectiveTerms]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "round,data_term,l1_term,penalty_term,total")?;
    for t in trace {
        writeln!(f, "{},{:e},{:e},{:e},{:e}", t.round, t.data, t.l1, t.penalty, t.total())?;
    }
    f.flush()?;
    Ok(())
}
