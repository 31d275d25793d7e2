//! Conjugate-gradient solves of `(E^H E + mu I) x = b` with a fixed unroll.
//!
//! The fixed-iteration solver optionally records a [`CgTape`] so that the
//! whole map `b -> x_K` can be differentiated in reverse mode. The
//! recursion treats complex images as real vectors with the inner product
//! `Re⟨a, b⟩`; for Hermitian `H` the CG scalars are real anyway.

use crate::datamodel::{ComplexImage, MultiCoilKspace};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

/// Relative curvature threshold below which CG stops updating.
pub const BREAKDOWN_TOL: f64 = 1e-30;

/// State of one CG iteration, as consumed by the reverse sweep.
#[derive(Clone, Debug)]
pub struct CgStep {
    /// Iterate `x_k` entering the step.
    pub x: ComplexImage,
    /// Residual `r_k`.
    pub r: ComplexImage,
    /// Search direction `p_k`.
    pub p: ComplexImage,
    /// `H p_k`.
    pub hp: ComplexImage,
    /// `r_{k+1}`, needed for the `β_k` adjoint.
    pub r_next: ComplexImage,
    pub alpha: f64,
    pub beta: f64,
    /// `⟨r_k, r_k⟩`
    pub rr: f64,
    /// `⟨r_{k+1}, r_{k+1}⟩`
    pub rr_next: f64,
    /// `⟨p_k, H p_k⟩`
    pub php: f64,
}

/// Forward record of an unrolled CG solve.
#[derive(Clone, Debug)]
pub struct CgTape {
    pub steps: Vec<CgStep>,
    /// Requested iteration count; may exceed `steps.len()` after breakdown.
    pub iterations: usize,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct CgOutput {
    pub image: ComplexImage,
    pub tape: Option<CgTape>,
    /// Iterations that actually updated the iterate.
    pub active_iterations: usize,
}

fn finite(v: f64, what: &str, k: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} became non-finite at CG iteration {k}")))
    }
}

/// Fixed-iteration CG on an arbitrary Hermitian PSD operator, starting at 0.
pub fn conjugate_gradient<F>(
    mut apply: F,
    b: &ComplexImage,
    iters: usize,
    record: bool,
) -> Result<(ComplexImage, Vec<CgStep>, usize)>
where
    F: FnMut(&ComplexImage) -> Result<ComplexImage>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("CG needs at least one iteration".into()));
    }
    let (ny, nx) = b.shape();
    let mut x = ComplexImage::zeros(ny, nx);
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rr = finite(r.norm_sqr(), "residual norm", 0)?;
    let mut steps = Vec::new();
    let mut active = 0;

    for k in 0..iters {
        let pp = p.norm_sqr();
        let hp = apply(&p)?;
        let php = finite(p.inner_re(&hp), "curvature", k)?;
        if !(php > BREAKDOWN_TOL * pp) {
            break;
        }
        let alpha = rr / php;
        let x_prev = if record { Some(x.clone()) } else { None };
        x.axpy(alpha, &p);
        let mut r_next = r.clone();
        r_next.axpy(-alpha, &hp);
        let rr_next = finite(r_next.norm_sqr(), "residual norm", k + 1)?;
        let beta = rr_next / rr;
        let mut p_next = r_next.clone();
        p_next.axpy(beta, &p);
        active += 1;

        if let Some(x_prev) = x_prev {
            steps.push(CgStep {
                x: x_prev,
                r: std::mem::replace(&mut r, r_next.clone()),
                p: std::mem::replace(&mut p, p_next),
                hp,
                r_next,
                alpha,
                beta,
                rr,
                rr_next,
                php,
            });
        } else {
            r = r_next;
            p = p_next;
        }
        rr = rr_next;
    }
    if !x.is_finite() {
        return Err(Error::Numerical("CG iterate became non-finite".into()));
    }
    Ok((x, steps, active))
}

/// Reverse sweep through recorded CG steps.
///
/// Given `x̄ = ∂L/∂x_K` (real and imaginary partials packed as a complex
/// image) returns `∂L/∂b`. `apply` must be the same Hermitian operator used
/// in the forward pass; it is self-adjoint, so it is reused for the adjoint
/// of `q = H p`.
pub fn conjugate_gradient_backward<F>(
    mut apply: F,
    steps: &[CgStep],
    x_bar: &ComplexImage,
) -> Result<ComplexImage>
where
    F: FnMut(&ComplexImage) -> Result<ComplexImage>,
{
    let (ny, nx) = x_bar.shape();
    let xb = x_bar.clone();
    let mut rb = ComplexImage::zeros(ny, nx);
    let mut pb = ComplexImage::zeros(ny, nx);
    // ∂L/∂γ_{k+1}, accumulated from step k+1 before step k is processed.
    let mut gamma_next_bar = 0.0;

    for (k, s) in steps.iter().enumerate().rev() {
        // p_{k+1} = r_{k+1} + β p_k
        rb.axpy(1.0, &pb);
        let beta_bar = pb.inner_re(&s.p);
        let mut pkb = pb.scaled(s.beta);

        // β = γ_{k+1} / γ_k
        gamma_next_bar += beta_bar / s.rr;
        let mut gamma_bar = -beta_bar * s.rr_next / (s.rr * s.rr);

        // γ_{k+1} = ⟨r_{k+1}, r_{k+1}⟩
        rb.axpy(2.0 * gamma_next_bar, &s.r_next);

        // r_{k+1} = r_k - α H p_k
        let mut alpha_bar = -rb.inner_re(&s.hp);
        let mut hpb = rb.scaled(-s.alpha);
        let mut rkb = rb;

        // x_{k+1} = x_k + α p_k
        alpha_bar += xb.inner_re(&s.p);
        pkb.axpy(s.alpha, &xb);

        // α = γ_k / δ_k
        gamma_bar += alpha_bar / s.php;
        let delta_bar = -alpha_bar * s.rr / (s.php * s.php);

        // δ_k = ⟨p_k, H p_k⟩
        pkb.axpy(delta_bar, &s.hp);
        hpb.axpy(delta_bar, &s.p);

        // H p_k
        let h_adj = apply(&hpb)?;
        pkb.axpy(1.0, &h_adj);

        // γ_k = ⟨r_k, r_k⟩, completed below by the previous step's β.
        rkb.axpy(2.0 * gamma_bar, &s.r);
        gamma_next_bar = 0.0;
        if k == 0 {
            // r_0 = p_0 = b; x_0 = 0 carries no dependence.
            rkb.axpy(1.0, &pkb);
            return check_adjoint(rkb);
        }
        rb = rkb;
        pb = pkb;
    }
    // No active steps: x_K = 0 regardless of b.
    Ok(ComplexImage::zeros(ny, nx))
}

fn check_adjoint(g: ComplexImage) -> Result<ComplexImage> {
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::Numerical("non-finite adjoint in CG reverse sweep".into()))
    }
}

/// Runs exactly `iters` CG iterations on `(E^H E + mu I) x = b` from `x₀ = 0`.
pub fn cg_solve(
    ctx: &EncodingContext,
    b: &ComplexImage,
    mu: f64,
    iters: usize,
    record: bool,
) -> Result<CgOutput> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("shift mu must be >= 0, got {mu}")));
    }
    if b.shape() != ctx.image_shape() {
        return Err(Error::Shape(format!(
            "right-hand side {:?} vs encoding grid {:?}",
            b.shape(),
            ctx.image_shape()
        )));
    }
    let (image, steps, active) =
        conjugate_gradient(|v| ctx.normal_op(v, mu), b, iters, record)?;
    let tape = record.then_some(CgTape { steps, iterations: iters, mu });
    Ok(CgOutput { image, tape, active_iterations: active })
}

impl CgTape {
    /// `∂L/∂b` given `∂L/∂x_K`.
    pub fn backward(&self, ctx: &EncodingContext, x_bar: &ComplexImage) -> Result<ComplexImage> {
        conjugate_gradient_backward(|v| ctx.normal_op(v, self.mu), &self.steps, x_bar)
    }
}

/// Result of a tolerance-controlled CG solve.
#[derive(Clone, Debug)]
pub struct CgConvergence {
    pub image: ComplexImage,
    pub iterations: usize,
    /// Final recursive residual `‖r‖ / ‖b‖`.
    pub relative_residual: f64,
    pub converged: bool,
}

/// CG with a relative-residual stopping rule. Not used on differentiated paths.
pub fn cg_solve_tol(
    ctx: &EncodingContext,
    b: &ComplexImage,
    mu: f64,
    max_iters: usize,
    tol: f64,
) -> Result<CgConvergence> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("CG needs at least one iteration".into()));
    }
    let bnorm = b.norm();
    let (ny, nx) = b.shape();
    if bnorm == 0.0 {
        return Ok(CgConvergence {
            image: ComplexImage::zeros(ny, nx),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut x = ComplexImage::zeros(ny, nx);
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rr = r.norm_sqr();
    let mut it = 0;
    while it < max_iters && rr.sqrt() > tol * bnorm {
        let hp = ctx.normal_op(&p, mu)?;
        let php = finite(p.inner_re(&hp), "curvature", it)?;
        if !(php > BREAKDOWN_TOL * p.norm_sqr()) {
            break;
        }
        let alpha = rr / php;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &hp);
        let rr_next = finite(r.norm_sqr(), "residual norm", it + 1)?;
        let beta = rr_next / rr;
        let mut p_next = r.clone();
        p_next.axpy(beta, &p);
        p = p_next;
        rr = rr_next;
        it += 1;
    }
    let relative_residual = rr.sqrt() / bnorm;
    Ok(CgConvergence {
        image: x,
        iterations: it,
        relative_residual,
        converged: relative_residual <= tol,
    })
}

/// CG-SENSE: `iters` unregularized CG iterations on the normal equations.
pub fn cgsense(y: &MultiCoilKspace, ctx: &EncodingContext, iters: usize) -> Result<ComplexImage> {
    let z = ctx.apply_eh(y)?;
    Ok(cg_solve(ctx, &z, 0.0, iters, false)?.image)
}

/// CG-SENSE run directly on a zero-filled image `z = E^H y`.
pub fn cgsense_from_zero_filled(
    z: &ComplexImage,
    ctx: &EncodingContext,
    iters: usize,
) -> Result<ComplexImage> {
    Ok(cg_solve(ctx, z, 0.0, iters, false)?.image)
}

/// Data-consistency unit `(E^H E + mu I)^{-1} (z + mu u)`, solved by `iters` CG steps.
pub fn dc_unit(
    ctx: &EncodingContext,
    z: &ComplexImage,
    u: &ComplexImage,
    mu: f64,
    iters: usize,
) -> Result<ComplexImage> {
    Ok(dc_unit_recorded(ctx, z, u, mu, iters, false)?.image)
}

pub(crate) fn dc_unit_recorded(
    ctx: &EncodingContext,
    z: &ComplexImage,
    u: &ComplexImage,
    mu: f64,
    iters: usize,
    record: bool,
) -> Result<CgOutput> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("data-consistency mu must be > 0, got {mu}")));
    }
    z.ensure_same_shape(u, "data-consistency inputs")?;
    let mut b = z.clone();
    b.axpy(mu, u);
    cg_solve(ctx, &b, mu, iters, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{
        make_uniform_mask, shepp_logan, simulate_coils, CoilSensitivities, SamplingMask,
    };
    use crate::harness::metrics::nrmse;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, ny: usize, nx: usize) -> ComplexImage {
        ComplexImage::from_fn(ny, nx, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// Materializes `H` column by column and solves densely.
    fn dense_solve(ctx: &EncodingContext, b: &ComplexImage, mu: f64) -> ComplexImage {
        let (ny, nx) = b.shape();
        let n = ny * nx;
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            let mut e = ComplexImage::zeros(ny, nx);
            e.data_mut()[j] = Complex64::new(1.0, 0.0);
            let col = ctx.normal_op(&e, mu).unwrap();
            for i in 0..n {
                h[(i, j)] = col.data()[i];
            }
        }
        let rhs = DVector::from_column_slice(b.data());
        let x = h.lu().solve(&rhs).unwrap();
        ComplexImage::from_vec(ny, nx, x.iter().copied().collect()).unwrap()
    }

    fn a_norm_err(ctx: &EncodingContext, x: &ComplexImage, xs: &ComplexImage, mu: f64) -> f64 {
        let e = x.sub(xs);
        ctx.normal_op(&e, mu).unwrap().inner_re(&e).sqrt()
    }

    #[test]
    fn identity_operator_converges_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = EncodingContext::fully_sampled(simulate_coils(3, 16, 16).unwrap());
        let b = random_image(&mut rng, 16, 16);
        let one = cg_solve(&ctx, &b, 0.0, 1, true).unwrap();
        assert!(one.image.sub(&b).norm() < 1e-12 * b.norm());
        assert_eq!(one.tape.unwrap().steps.len(), 1);
        let more = cg_solve(&ctx, &b, 0.0, 5, false).unwrap();
        assert!(more.image.sub(&b).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn tiny_instance_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coils = CoilSensitivities::from_vec(
            1,
            2,
            2,
            vec![
                Complex64::new(0.9, 0.1),
                Complex64::new(0.4, -0.3),
                Complex64::new(0.7, 0.2),
                Complex64::new(1.1, 0.0),
            ],
        )
        .unwrap();
        let ctx = EncodingContext::fully_sampled(coils);
        let b = random_image(&mut rng, 2, 2);
        let xs = dense_solve(&ctx, &b, 0.0);
        let x = cg_solve(&ctx, &b, 0.0, 4, false).unwrap().image;
        assert!(x.sub(&xs).norm() < 1e-8 * xs.norm());
    }

    #[test]
    fn a_norm_error_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = make_uniform_mask(8, 2, 2).unwrap();
        let ctx = EncodingContext::new(simulate_coils(2, 8, 8).unwrap(), mask).unwrap();
        let b = random_image(&mut rng, 8, 8);
        let mu = 0.01;
        let xs = dense_solve(&ctx, &b, mu);
        let mut prev = f64::INFINITY;
        for k in 1..=30 {
            let x = cg_solve(&ctx, &b, mu, k, false).unwrap().image;
            let err = a_norm_err(&ctx, &x, &xs, mu);
            assert!(err <= prev * (1.0 + 1e-9) + 1e-13, "iteration {k}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn cgsense_full_sampling_is_zero_filled() {
        let x = shepp_logan(32, 32).unwrap();
        let ctx = EncodingContext::fully_sampled(simulate_coils(4, 32, 32).unwrap());
        let y = ctx.apply_e(&x).unwrap();
        let z = ctx.apply_eh(&y).unwrap();
        let rec = cgsense(&y, &ctx, 10).unwrap();
        assert!(rec.sub(&z).norm() < 1e-10 * z.norm());
    }

    #[test]
    fn cgsense_beats_zero_filled_at_r4() {
        let x = shepp_logan(64, 64).unwrap();
        let mask = make_uniform_mask(64, 4, 12).unwrap();
        let ctx = EncodingContext::new(simulate_coils(8, 64, 64).unwrap(), mask).unwrap();
        let y = ctx.apply_e(&x).unwrap();
        let z = ctx.apply_eh(&y).unwrap();
        let rec = cgsense(&y, &ctx, 10).unwrap();
        assert!(nrmse(&rec, &x).unwrap() < nrmse(&z, &x).unwrap());
    }

    #[test]
    fn truncated_cg_is_homogeneous_but_not_additive() {
        // α and β are invariant to scaling b, so the fixed unroll is positively
        // homogeneous; the step sizes still depend on b, which breaks additivity.
        let x = shepp_logan(32, 32).unwrap();
        let mask = make_uniform_mask(32, 4, 4).unwrap();
        let ctx = EncodingContext::new(simulate_coils(4, 32, 32).unwrap(), mask).unwrap();
        let y = ctx.apply_e(&x).unwrap();
        let a = cgsense(&y.scaled(Complex64::new(2.0, 0.0)), &ctx, 3).unwrap();
        let b = cgsense(&y, &ctx, 3).unwrap().scaled(2.0);
        assert!(a.sub(&b).norm() <= 1e-12 * b.norm());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z1 = ctx.apply_eh(&y).unwrap();
        let z2 = random_image(&mut rng, 32, 32);
        let sum = cgsense_from_zero_filled(&z1.add(&z2), &ctx, 3).unwrap();
        let parts = cgsense_from_zero_filled(&z1, &ctx, 3)
            .unwrap()
            .add(&cgsense_from_zero_filled(&z2, &ctx, 3).unwrap());
        assert!(sum.sub(&parts).norm() > 1e-3 * parts.norm());
    }

    #[test]
    fn dc_unit_scalar_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = EncodingContext::fully_sampled(CoilSensitivities::unit(8, 8));
        let z = random_image(&mut rng, 8, 8);
        let u = random_image(&mut rng, 8, 8);
        let mu = 0.7;
        let out = dc_unit(&ctx, &z, &u, mu, 1).unwrap();
        let mut expect = z.clone();
        expect.axpy(mu, &u);
        let expect = expect.scaled(1.0 / (1.0 + mu));
        assert!(out.sub(&expect).norm() < 1e-8 * expect.norm());
    }

    #[test]
    fn dc_unit_large_mu_returns_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = EncodingContext::new(
            simulate_coils(3, 16, 16).unwrap(),
            make_uniform_mask(16, 4, 4).unwrap(),
        )
        .unwrap();
        let z = random_image(&mut rng, 16, 16);
        let u = random_image(&mut rng, 16, 16);
        let out = dc_unit(&ctx, &z, &u, 1e6, 5).unwrap();
        assert!(out.sub(&u).norm() < 1e-4 * u.norm());
    }

    #[test]
    fn dc_unit_small_mu_approaches_unshifted_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ctx = EncodingContext::new(
            simulate_coils(3, 16, 16).unwrap(),
            make_uniform_mask(16, 2, 4).unwrap(),
        )
        .unwrap();
        let z = random_image(&mut rng, 16, 16);
        let u = random_image(&mut rng, 16, 16);
        let xs = dense_solve(&ctx, &z, 0.0);
        let errs: Vec<f64> = [1e-4, 1e-6, 1e-8, 1e-10]
            .iter()
            .map(|&mu| dc_unit(&ctx, &z, &u, mu, 256).unwrap().sub(&xs).norm() / xs.norm())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] < 1e-5, "{errs:?}");
        // u = x* is a fixed point for any mu.
        let out = dc_unit(&ctx, &z, &xs, 1e-3, 256).unwrap();
        assert!(out.sub(&xs).norm() < 1e-6 * xs.norm());
    }

    #[test]
    fn dc_unit_rejects_nonpositive_mu() {
        let ctx = EncodingContext::fully_sampled(CoilSensitivities::unit(4, 4));
        let z = ComplexImage::zeros(4, 4);
        assert!(dc_unit(&ctx, &z, &z, 0.0, 1).is_err());
    }

    #[test]
    fn zero_iterations_rejected_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ctx = EncodingContext::new(
            simulate_coils(2, 16, 16).unwrap(),
            make_uniform_mask(16, 4, 2).unwrap(),
        )
        .unwrap();
        let b = random_image(&mut rng, 16, 16);
        assert!(cg_solve(&ctx, &b, 0.0, 0, false).is_err());
        let a = cg_solve(&ctx, &b, 0.0, 10, false).unwrap().image;
        let c = cg_solve(&ctx, &b, 0.0, 10, true).unwrap().image;
        assert_eq!(a, c);
    }

    #[test]
    fn zero_rhs_freezes_immediately() {
        let ctx = EncodingContext::fully_sampled(CoilSensitivities::unit(4, 4));
        let out = cg_solve(&ctx, &ComplexImage::zeros(4, 4), 0.0, 3, true).unwrap();
        assert_eq!(out.active_iterations, 0);
        assert_eq!(out.image.norm(), 0.0);
    }

    #[test]
    fn tolerance_variant_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ctx = EncodingContext::new(
            simulate_coils(3, 16, 16).unwrap(),
            SamplingMask::full(16),
        )
        .unwrap();
        let b = random_image(&mut rng, 16, 16);
        let out = cg_solve_tol(&ctx, &b, 0.1, 100, 1e-10).unwrap();
        assert!(out.converged);
        let check = ctx.normal_op(&out.image, 0.1).unwrap().sub(&b);
        assert!(check.norm() < 1e-9 * b.norm());
    }
}
