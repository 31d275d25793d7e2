//! Toy unrolled network: `K` alternations of a shared residual CNN
//! regularizer and the linear data-consistency solve
//! `x ← (E^H E + μI)^{-1}(z + μ u)`, with end-to-end reverse mode.

pub mod cnn;
pub mod train;

use std::fs;
use std::path::Path;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

pub use cnn::{regularizer_backward, regularizer_forward, regularizer_forward_taped, ConvParams, CnnTape};
pub use train::{build_dataset, dataset_for_context, init_weights, train_on, train_toy, DatasetSpec, TrainConfig, TrainReport, TrainingSample};

use crate::attack::{fgsm_from_gradient, mse, mse_gradient, Perturbation};
use crate::cgsense::{dc_unit, dc_unit_recorded, CgTape};
use crate::datamodel::cfl::{read_array, write_array, CflArray};
use crate::datamodel::ComplexImage;
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub params: ConvParams,
    /// Number of unrolls `K`.
    pub unrolls: usize,
    pub mu: f64,
    /// CG iterations inside each data-consistency unit.
    pub cg_iters: usize,
}

impl NetWeights {
    /// All-zero CNN (the regularizer is then the identity).
    pub fn zeros(hidden: usize, unrolls: usize, mu: f64, cg_iters: usize) -> Self {
        Self { params: ConvParams::zeros(hidden), unrolls, mu, cg_iters }
    }

    /// Defaults: 8 hidden channels, `K = 5`, `μ = 0.05`, 5 CG iterations.
    pub fn default_zeros() -> Self {
        Self::zeros(8, 5, 0.05, 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unrolls == 0 || self.cg_iters == 0 {
            return Err(Error::InvalidArgument("unrolls and cg_iters must be positive".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu {} must be positive", self.mu)));
        }
        if self.params.data.len() != ConvParams::len_for(self.params.hidden) {
            return Err(Error::Shape("parameter vector does not match hidden width".into()));
        }
        if self.params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network weight".into()));
        }
        Ok(())
    }
}

/// Per-unroll record for the reverse sweep.
#[derive(Clone, Debug)]
struct UnrollStep {
    cnn: CnnTape,
    dc: CgTape,
}

#[derive(Clone, Debug)]
pub struct NetTape {
    steps: Vec<UnrollStep>,
}

pub fn unrolled_forward(ctx: &EncodingContext, z: &ComplexImage, w: &NetWeights) -> Result<ComplexImage> {
    w.validate()?;
    let mut x = z.clone();
    for _ in 0..w.unrolls {
        let u = regularizer_forward(&x, &w.params);
        x = dc_unit(ctx, z, &u, w.mu, w.cg_iters)?;
    }
    Ok(x)
}

pub fn unrolled_forward_taped(ctx: &EncodingContext, z: &ComplexImage, w: &NetWeights) -> Result<(ComplexImage, NetTape)> {
    w.validate()?;
    let mut x = z.clone();
    let mut steps = Vec::with_capacity(w.unrolls);
    for _ in 0..w.unrolls {
        let (u, cnn) = regularizer_forward_taped(&x, &w.params);
        let out = dc_unit_recorded(ctx, z, &u, w.mu, w.cg_iters, true)?;
        x = out.image;
        steps.push(UnrollStep { cnn, dc: out.tape.expect("tape recorded") });
    }
    Ok((x, NetTape { steps }))
}

/// Reverse sweep: returns `∂L/∂z` and accumulates `∂L/∂θ` into `grad`.
pub fn unrolled_backward(
    ctx: &EncodingContext,
    tape: &NetTape,
    w: &NetWeights,
    x_bar: &ComplexImage,
    grad: &mut ConvParams,
) -> Result<ComplexImage> {
    let (ny, nx) = x_bar.shape();
    let mut z_bar = ComplexImage::zeros(ny, nx);
    let mut x_bar = x_bar.clone();
    for step in tape.steps.iter().rev() {
        let b_bar = step.dc.backward(ctx, &x_bar)?;
        z_bar = z_bar.add(&b_bar);
        let u_bar = b_bar.scaled(w.mu);
        x_bar = regularizer_backward(&step.cnn, &w.params, &u_bar, grad);
    }
    let z_bar = z_bar.add(&x_bar);
    if !z_bar.is_finite() {
        return Err(Error::Numerical("non-finite gradient in unrolled network".into()));
    }
    Ok(z_bar)
}

#[derive(Clone, Debug)]
pub struct NetLossGradient {
    pub loss: f64,
    pub output: ComplexImage,
    /// `∂L/∂z`, real and imaginary parts packed.
    pub input_gradient: ComplexImage,
    pub param_gradient: ConvParams,
}

/// `MSE(net(z), x_ref)` with its gradients with respect to `z` and the weights.
pub fn unrolled_loss_and_gradient(
    ctx: &EncodingContext,
    z: &ComplexImage,
    x_ref: &ComplexImage,
    w: &NetWeights,
) -> Result<NetLossGradient> {
    z.ensure_same_shape(x_ref, "network reference")?;
    let (out, tape) = unrolled_forward_taped(ctx, z, w)?;
    let loss = mse(&out, x_ref);
    let mut param_gradient = ConvParams::zeros(w.params.hidden);
    let input_gradient = unrolled_backward(ctx, &tape, w, &mse_gradient(&out, x_ref), &mut param_gradient)?;
    Ok(NetLossGradient { loss, output: out, input_gradient, param_gradient })
}

/// End-to-end FGSM on the network input.
pub fn fgsm_unrolled(
    ctx: &EncodingContext,
    z: &ComplexImage,
    x_ref: &ComplexImage,
    w: &NetWeights,
    epsilon: f64,
) -> Result<Perturbation> {
    let g = unrolled_loss_and_gradient(ctx, z, x_ref, w)?;
    fgsm_from_gradient(&g.input_gradient, epsilon)
}

/// Deviations caused by one perturbation in a single regularizer, a single
/// data-consistency unit, and the full network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitwiseReport {
    pub d_reg: f64,
    pub d_dc: f64,
    pub d_full: f64,
    pub dc_over_reg: f64,
    pub full_over_reg: f64,
    pub full_over_dc: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        a / b
    }
}

pub fn unitwise_attack_response(
    ctx: &EncodingContext,
    z: &ComplexImage,
    r: &Perturbation,
    w: &NetWeights,
) -> Result<UnitwiseReport> {
    let zr = r.apply(z)?;
    let u0 = regularizer_forward(z, &w.params);
    let d_reg = regularizer_forward(&zr, &w.params).sub(&u0).norm();
    let d_dc = dc_unit(ctx, &zr, &u0, w.mu, w.cg_iters)?
        .sub(&dc_unit(ctx, z, &u0, w.mu, w.cg_iters)?)
        .norm();
    let d_full = unrolled_forward(ctx, &zr, w)?.sub(&unrolled_forward(ctx, z, w)?).norm();
    Ok(UnitwiseReport {
        d_reg,
        d_dc,
        d_full,
        dc_over_reg: ratio(d_dc, d_reg),
        full_over_reg: ratio(d_full, d_reg),
        full_over_dc: ratio(d_full, d_dc),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    architecture: String,
    hidden: usize,
    kernel: usize,
    unrolls: usize,
    mu: f64,
    cg_iters: usize,
    arrays: Vec<String>,
}

fn write_real(path: &Path, dims: Vec<usize>, v: &[f64]) -> Result<()> {
    let data = v.iter().map(|&a| Complex32::new(a as f32, 0.0)).collect();
    write_array(path, &CflArray::new(dims, data)?)
}

fn read_real(path: &Path, len: usize) -> Result<Vec<f64>> {
    let a = read_array(path)?;
    if a.data.len() != len {
        return Err(Error::Shape(format!("{} holds {} values, expected {len}", path.display(), a.data.len())));
    }
    Ok(a.data.iter().map(|c| c.re as f64).collect())
}

/// Writes `w1`, `b1`, `w2`, `b2` CFL arrays and `manifest.json` into `dir`.
///
/// Weights are stored as 32-bit floats, like every CFL array.
pub fn save_weights(dir: impl AsRef<Path>, w: &NetWeights) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let h = w.params.hidden;
    let k = cnn::KSIZE;
    write_real(&dir.join("w1"), vec![k, k, 2, h], w.params.w1())?;
    write_real(&dir.join("b1"), vec![h], w.params.b1())?;
    write_real(&dir.join("w2"), vec![k, k, h, 2], w.params.w2())?;
    write_real(&dir.join("b2"), vec![2], w.params.b2())?;
    let manifest = Manifest {
        architecture: format!("residual CNN 2-{h}-2, {k}x{k} kernels, ReLU, shared across unrolls"),
        hidden: h,
        kernel: k,
        unrolls: w.unrolls,
        mu: w.mu,
        cg_iters: w.cg_iters,
        arrays: ["w1", "b1", "w2", "b2"].iter().map(|s| s.to_string()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_weights(dir: impl AsRef<Path>) -> Result<NetWeights> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.kernel != cnn::KSIZE {
        return Err(Error::Unsupported(format!("kernel size {}", manifest.kernel)));
    }
    let h = manifest.hidden;
    let t = cnn::KSIZE * cnn::KSIZE;
    let mut data = read_real(&dir.join("w1"), h * 2 * t)?;
    data.extend(read_real(&dir.join("b1"), h)?);
    data.extend(read_real(&dir.join("w2"), 2 * h * t)?);
    data.extend(read_real(&dir.join("b2"), 2)?);
    let w = NetWeights {
        params: ConvParams { hidden: h, data },
        unrolls: manifest.unrolls,
        mu: manifest.mu,
        cg_iters: manifest.cg_iters,
    };
    w.validate()?;
    Ok(w)
}

/// Rounds weights to the precision they are stored at.
pub fn quantize_like_storage(w: &NetWeights) -> NetWeights {
    let mut out = w.clone();
    for v in out.params.data.iter_mut() {
        *v = *v as f32 as f64;
    }
    out
}
