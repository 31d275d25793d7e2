//! One-step FGSM perturbations of the zero-filled image.
//!
//! The attacked program is `b ↦ x_K`, a fixed number of CG iterations on the
//! normal equations started from zero. The loss is the mean squared error
//! against a reference image, and its gradient with respect to `b` comes from
//! a single reverse sweep over the recorded CG tape. The perturbation then
//! takes the sign of every real and imaginary partial independently.
//!
//! k-space reconstructors (GRAPPA) receive the minimum-norm sampled-k-space
//! perturbation `q` whose adjoint image is the image-domain attack.

use std::path::Path;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cgsense::{cg_solve, cg_solve_tol};
use crate::datamodel::{cfl, ComplexImage, MultiCoilKspace};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

/// How the ℓ∞ budget is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsilonRule {
    Fixed { value: f64 },
    /// `ε = ‖z‖∞ / divisor`, with the component-wise ℓ∞ norm.
    ZeroFilledMax { divisor: f64 },
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule::ZeroFilledMax { divisor: 255.0 }
    }
}

impl EpsilonRule {
    pub fn resolve(&self, z: &ComplexImage) -> Result<f64> {
        let eps = match *self {
            EpsilonRule::Fixed { value } => value,
            EpsilonRule::ZeroFilledMax { divisor } => z.linf() / divisor,
        };
        if eps > 0.0 && eps.is_finite() {
            Ok(eps)
        } else {
            Err(Error::InvalidArgument(format!("attack budget must be positive, got {eps}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    /// MSE against the fully sampled coil-combined reference.
    #[default]
    ReferenceImage,
    /// MSE against a caller-supplied image.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epsilon: EpsilonRule,
    pub loss_target: LossTarget,
    pub cg_iters: usize,
    /// Seed of the matched random baseline.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: EpsilonRule::default(),
            loss_target: LossTarget::default(),
            cg_iters: 10,
            seed: 0,
        }
    }
}

/// An image-domain perturbation with its ℓ∞ budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub r: ComplexImage,
    pub epsilon_used: f64,
    /// ℓ2 norm of the loss gradient it was generated from (0 for baselines).
    pub grad_norm: f64,
}

impl Perturbation {
    pub fn zero(ny: usize, nx: usize) -> Self {
        Self { r: ComplexImage::zeros(ny, nx), epsilon_used: 0.0, grad_norm: 0.0 }
    }

    /// `z + r`
    pub fn apply(&self, z: &ComplexImage) -> Result<ComplexImage> {
        z.ensure_same_shape(&self.r, "perturbation")?;
        Ok(z.add(&self.r))
    }

    pub fn within_budget(&self) -> bool {
        self.r.linf() <= self.epsilon_used + 1e-12
    }
}

/// `Σ |a − b|² / n` over the `n` pixels.
pub fn mse(a: &ComplexImage, b: &ComplexImage) -> f64 {
    a.sub(b).norm_sqr() / a.len() as f64
}

/// Gradient of [`mse`] with respect to `a`, real and imaginary parts packed.
pub fn mse_gradient(a: &ComplexImage, b: &ComplexImage) -> ComplexImage {
    a.sub(b).scaled(2.0 / a.len() as f64)
}

#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: ComplexImage,
    /// Output of the unrolled solve at the evaluation point.
    pub output: ComplexImage,
}

/// Loss `MSE(CG_K(b), x_ref)` and its gradient at `b = z`.
pub fn unrolled_cg_loss_and_gradient(
    ctx: &EncodingContext,
    z: &ComplexImage,
    x_ref: &ComplexImage,
    iters: usize,
) -> Result<LossGradient> {
    z.ensure_same_shape(x_ref, "attack reference")?;
    let out = cg_solve(ctx, z, 0.0, iters, true)?;
    let loss = mse(&out.image, x_ref);
    let x_bar = mse_gradient(&out.image, x_ref);
    let tape = out.tape.expect("tape recorded");
    let gradient = tape.backward(ctx, &x_bar)?;
    Ok(LossGradient { loss, gradient, output: out.image })
}

/// `∇_b MSE(CG_K(b), x_ref)` at `b = z`, by reverse sweep over the CG tape.
pub fn grad_through_unrolled_cg(
    ctx: &EncodingContext,
    z: &ComplexImage,
    x_ref: &ComplexImage,
    iters: usize,
) -> Result<ComplexImage> {
    Ok(unrolled_cg_loss_and_gradient(ctx, z, x_ref, iters)?.gradient)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `ε · sign(g)` per real component; exactly-zero partials give zero.
pub fn fgsm_from_gradient(gradient: &ComplexImage, epsilon: f64) -> Result<Perturbation> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !gradient.is_finite() {
        return Err(Error::Numerical("non-finite attack gradient".into()));
    }
    if gradient.data().iter().all(|v| v.re == 0.0 && v.im == 0.0) {
        return Err(Error::DegenerateAttack);
    }
    let r = gradient.map(|g| Complex64::new(epsilon * sign(g.re), epsilon * sign(g.im)));
    Ok(Perturbation { r, epsilon_used: epsilon, grad_norm: gradient.norm() })
}

/// Single-step FGSM through `cfg.cg_iters` unrolled CG iterations.
pub fn fgsm_attack(
    ctx: &EncodingContext,
    z: &ComplexImage,
    x_ref: &ComplexImage,
    cfg: &AttackConfig,
) -> Result<Perturbation> {
    let epsilon = cfg.epsilon.resolve(z)?;
    let grad = grad_through_unrolled_cg(ctx, z, x_ref, cfg.cg_iters)?;
    fgsm_from_gradient(&grad, epsilon)
}

/// Sign-random perturbation with the same per-component magnitude as FGSM.
pub fn random_perturbation(ny: usize, nx: usize, epsilon: f64, seed: u64) -> Result<Perturbation> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || if rng.random_bool(0.5) { epsilon } else { -epsilon };
    let r = ComplexImage::from_fn(ny, nx, |_, _| {
        let re = draw();
        Complex64::new(re, draw())
    });
    Ok(Perturbation { r, epsilon_used: epsilon, grad_norm: 0.0 })
}

/// Result of lifting an image perturbation into sampled k-space.
#[derive(Clone, Debug)]
pub struct KspaceLift {
    pub q: MultiCoilKspace,
    /// `‖E^H q − r‖ / ‖r‖`
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum-ℓ2 `q` supported on Ω with `E^H q = r`: `q = E w`, `E^H E w = r`.
///
/// If CG stops at `cg_iters` above `tol`, the lift is still returned with
/// `converged = false` and a warning is logged.
pub fn lift_to_kspace_min_l2(
    ctx: &EncodingContext,
    r: &ComplexImage,
    cg_iters: usize,
    tol: f64,
) -> Result<KspaceLift> {
    if !r.is_finite() {
        return Err(Error::Numerical("perturbation to lift is not finite".into()));
    }
    let solve = cg_solve_tol(ctx, r, 0.0, cg_iters, tol)?;
    let q = ctx.apply_e(&solve.image)?;
    let rnorm = r.norm();
    let relative_residual = if rnorm == 0.0 {
        0.0
    } else {
        ctx.apply_eh(&q)?.sub(r).norm() / rnorm
    };
    let converged = relative_residual <= tol;
    if !converged {
        warn!(
            "ill-conditioned k-space lift: residual {relative_residual:.3e} > {tol:.1e} after {} CG iterations",
            solve.iterations
        );
    }
    Ok(KspaceLift { q, relative_residual, iterations: solve.iterations, converged })
}

/// JSON sidecar written next to a serialized perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackMetadata {
    pub kind: String,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub grad_norm: f64,
    pub lift_residual: Option<f64>,
    pub lift_converged: Option<bool>,
}

/// Writes `<base>.cfl/.hdr`, optionally `<base>_kspace.cfl/.hdr`, and `<base>.json`.
pub fn write_perturbation(
    base: impl AsRef<Path>,
    perturbation: &Perturbation,
    lift: Option<&KspaceLift>,
    meta: &AttackMetadata,
) -> Result<()> {
    let base = base.as_ref();
    cfl::write_image(base, &perturbation.r)?;
    if let Some(lift) = lift {
        let mut k = base.as_os_str().to_owned();
        k.push("_kspace");
        cfl::write_kspace(Path::new(&k), &lift.q)?;
    }
    let mut json = base.as_os_str().to_owned();
    json.push(".json");
    std::fs::write(Path::new(&json), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_perturbation(base: impl AsRef<Path>) -> Result<(Perturbation, AttackMetadata)> {
    let base = base.as_ref();
    let r = cfl::read_image(base)?;
    let mut json = base.as_os_str().to_owned();
    json.push(".json");
    let meta: AttackMetadata = serde_json::from_str(&std::fs::read_to_string(Path::new(&json))?)?;
    Ok((
        Perturbation { r, epsilon_used: meta.epsilon, grad_norm: meta.grad_norm },
        meta,
    ))
}
