//! Toy trainer: Adam on the mean MSE over a synthetic phantom set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{unrolled_backward, unrolled_forward, unrolled_forward_taped, ConvParams, NetWeights};
use crate::attack::{mse, mse_gradient};
use crate::datamodel::{make_random_mask, make_uniform_mask, random_phantom, simulate_coils, ComplexImage, MaskKind};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};

/// Which phantoms and masks make up the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub samples: usize,
    pub ny: usize,
    pub nx: usize,
    pub nc: usize,
    pub mask: MaskKind,
    pub acceleration: usize,
    pub acs: usize,
    /// Phantom `i` uses seed `seed + i`; random masks share it.
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { samples: 4, ny: 32, nx: 32, nc: 4, mask: MaskKind::Uniform, acceleration: 4, acs: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds weight initialization and sample shuffling.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub hidden: usize,
    pub unrolls: usize,
    pub mu: f64,
    pub cg_iters: usize,
    /// Standard deviation of the second-layer initial weights.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-2,
            batch_size: 4,
            seed: 0,
            dataset: DatasetSpec::default(),
            hidden: 8,
            unrolls: 5,
            mu: 0.05,
            cg_iters: 5,
            init_scale: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and nonnegative", self.lr)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size and hidden must be positive".into()));
        }
        if self.dataset.samples == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub ctx: EncodingContext,
    pub z: ComplexImage,
    pub x_ref: ComplexImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean loss over the whole set after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Noiseless samples: `z = E^H E x` for each phantom `x`.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Vec<TrainingSample>> {
    let coils = simulate_coils(spec.nc, spec.ny, spec.nx)?;
    let mut out = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let mask = match spec.mask {
            MaskKind::Uniform => make_uniform_mask(spec.ny, spec.acceleration, spec.acs)?,
            MaskKind::Random => make_random_mask(spec.ny, spec.acceleration, spec.acs, spec.seed.wrapping_add(i as u64))?,
            MaskKind::Full => crate::datamodel::SamplingMask::full(spec.ny),
        };
        let ctx = EncodingContext::new(coils.clone(), mask)?;
        let x_ref = random_phantom(spec.ny, spec.nx, spec.seed.wrapping_add(i as u64))?;
        let z = ctx.apply_eh(&ctx.apply_e(&x_ref)?)?;
        out.push(TrainingSample { ctx, z, x_ref });
    }
    Ok(out)
}

/// Noiseless random phantoms encoded with a fixed context.
pub fn dataset_for_context(ctx: &EncodingContext, samples: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    let (ny, nx) = ctx.image_shape();
    (0..samples)
        .map(|i| {
            let x_ref = random_phantom(ny, nx, seed.wrapping_add(i as u64))?;
            let z = ctx.apply_eh(&ctx.apply_e(&x_ref)?)?;
            Ok(TrainingSample { ctx: ctx.clone(), z, x_ref })
        })
        .collect()
}

/// Seeded initialization: He-scaled first layer, small second layer, zero biases,
/// so the untrained net stays close to iterated data consistency.
pub fn init_weights(cfg: &TrainConfig) -> NetWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = NetWeights::zeros(cfg.hidden, cfg.unrolls, cfg.mu, cfg.cg_iters);
    let fan_in = (2 * super::cnn::KSIZE * super::cnn::KSIZE) as f64;
    let n1 = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
    let n2 = Normal::new(0.0, cfg.init_scale).expect("valid std");
    let h = cfg.hidden;
    let t = super::cnn::KSIZE * super::cnn::KSIZE;
    let (l1, l2) = (h * 2 * t, 2 * h * t);
    for v in &mut w.params.data[..l1] {
        *v = n1.sample(&mut rng);
    }
    for v in &mut w.params.data[l1 + h..l1 + h + l2] {
        *v = n2.sample(&mut rng);
    }
    w
}

pub fn dataset_loss(samples: &[TrainingSample], w: &NetWeights) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += mse(&unrolled_forward(&s.ctx, &s.z, w)?, &s.x_ref);
    }
    Ok(total / samples.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains from `init` on `samples`. Mini-batches are drawn from a seeded shuffle.
pub fn train_on(samples: &[TrainingSample], init: NetWeights, cfg: &TrainConfig) -> Result<(NetWeights, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    init.validate()?;
    let mut w = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut adam = Adam::new(w.params.data.len());
    let initial_loss = dataset_loss(samples, &w)?;
    if !initial_loss.is_finite() {
        return Err(Error::Numerical("initial training loss is not finite".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = ConvParams::zeros(w.params.hidden);
            for &i in batch {
                let s = &samples[i];
                let (out, tape) = unrolled_forward_taped(&s.ctx, &s.z, &w)?;
                let x_bar = mse_gradient(&out, &s.x_ref).scaled(1.0 / batch.len() as f64);
                unrolled_backward(&s.ctx, &tape, &w, &x_bar, &mut grad)
                    .map_err(|e| Error::Numerical(format!("training diverged at epoch {epoch}: {e}")))?;
            }
            adam.step(&mut w.params.data, &grad.data, cfg.lr);
        }
        let loss = if w.params.data.iter().all(|v| v.is_finite()) {
            dataset_loss(samples, &w).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {epoch}: loss is {loss}")));
        }
        log::debug!("epoch {epoch}: loss {loss:.6e}");
        epoch_losses.push(loss);
    }
    Ok((w, TrainReport { initial_loss, epoch_losses }))
}

pub fn train_toy(cfg: &TrainConfig) -> Result<(NetWeights, TrainReport)> {
    cfg.validate()?;
    let samples = build_dataset(&cfg.dataset)?;
    train_on(&samples, init_weights(cfg), cfg)
}
