//! TOML experiment description. Every field has a default, so an empty file
//! describes the standard desk-scale run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, EpsilonRule};
use crate::coilmaps::EspiritConfig;
use crate::cs::CsConfig;
use crate::datamodel::MaskKind;
use crate::error::{Error, Result};
use crate::grappa::GrappaGeometry;
use crate::unrolled::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    SheppLogan { ny: usize, nx: usize },
    Random { ny: usize, nx: usize, seed: u64 },
    /// Fully sampled multi-coil slice from a fastMRI HDF5 file.
    Fastmri { path: PathBuf, slice: usize },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::SheppLogan { ny: 128, nx: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoilSpec {
    Simulated { nc: usize },
    /// Maps estimated from the ACS of the acquired data; phantoms are still
    /// encoded with `nc` simulated coils.
    Espirit {
        #[serde(default = "default_nc")]
        nc: usize,
        #[serde(default)]
        espirit: EspiritConfig,
    },
}

fn default_nc() -> usize {
    8
}

impl Default for CoilSpec {
    fn default() -> Self {
        CoilSpec::Simulated { nc: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    /// Scenario label; defaults to `<kind>_r<R>`.
    pub name: Option<String>,
    pub kind: MaskKind,
    pub acceleration: usize,
    pub acs: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { name: None, kind: MaskKind::Uniform, acceleration: 4, acs: 24, seed: 0 }
    }
}

impl MaskSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let kind = match self.kind {
                MaskKind::Full => "full",
                MaskKind::Uniform => "uniform",
                MaskKind::Random => "random",
            };
            format!("{kind}_r{}", self.acceleration)
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// FGSM through unrolled CG plus the matched random baseline.
    #[default]
    Fgsm,
    /// Random baseline only.
    Random,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: EpsilonRule,
    /// Unrolled CG iterations the attack differentiates through.
    pub cg_iters: usize,
    /// Seed of the random baseline.
    pub seed: u64,
    pub lift_iters: usize,
    pub lift_tol: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self { kind: AttackKind::Fgsm, epsilon: EpsilonRule::default(), cg_iters: 10, seed: 0, lift_iters: 500, lift_tol: 1e-6 }
    }
}

impl AttackSpec {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig { epsilon: self.epsilon, cg_iters: self.cg_iters, seed: self.seed, ..AttackConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReconSpec {
    Cgsense {
        #[serde(default = "default_cg_iters")]
        iters: usize,
    },
    Grappa {
        #[serde(default)]
        geometry: GrappaGeometry,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    Cs {
        #[serde(default)]
        cs: CsConfig,
    },
    Unrolled {
        /// Directory written by `save_weights`; trained in-run when absent.
        #[serde(default)]
        weights: Option<PathBuf>,
        #[serde(default = "default_train")]
        train: TrainConfig,
        /// Training phantoms drawn with the scenario's coils and mask.
        #[serde(default = "default_train_samples")]
        samples: usize,
    },
}

fn default_cg_iters() -> usize {
    10
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_train() -> TrainConfig {
    TrainConfig { epochs: 40, batch_size: 2, seed: 7, ..TrainConfig::default() }
}

fn default_train_samples() -> usize {
    2
}

impl ReconSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ReconSpec::Cgsense { .. } => "cgsense",
            ReconSpec::Grappa { .. } => "grappa",
            ReconSpec::Cs { .. } => "cs",
            ReconSpec::Unrolled { .. } => "unrolled",
        }
    }

    pub fn default_set() -> Vec<ReconSpec> {
        vec![
            ReconSpec::Cgsense { iters: default_cg_iters() },
            ReconSpec::Grappa { geometry: GrappaGeometry::default(), ridge: default_ridge() },
            ReconSpec::Cs { cs: CsConfig::default() },
            ReconSpec::Unrolled { weights: None, train: default_train(), samples: default_train_samples() },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: SourceSpec,
    pub coils: CoilSpec,
    /// k-space noise standard deviation per real component.
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub masks: Vec<MaskSpec>,
    pub attack: AttackSpec,
    pub recon: Vec<ReconSpec>,
    pub out_dir: Option<PathBuf>,
    pub emit_png: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            source: SourceSpec::default(),
            coils: CoilSpec::default(),
            noise_sigma: 0.0,
            noise_seed: 0,
            masks: vec![
                MaskSpec::default(),
                MaskSpec { kind: MaskKind::Random, seed: 1, ..MaskSpec::default() },
            ],
            attack: AttackSpec::default(),
            recon: ReconSpec::default_set(),
            out_dir: None,
            emit_png: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative paths inside the file resolve against its directory.
        let base = path.parent().unwrap_or(Path::new("."));
        if let SourceSpec::Fastmri { path: p, .. } = &mut cfg.source {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for r in &mut cfg.recon {
            if let ReconSpec::Unrolled { weights: Some(p), .. } = r {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces every seed in the config with one derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        if let SourceSpec::Random { seed: s, .. } = &mut self.source {
            *s = seed;
        }
        self.noise_seed = seed.wrapping_add(1);
        for (i, m) in self.masks.iter_mut().enumerate() {
            m.seed = seed.wrapping_add(2 + i as u64);
        }
        self.attack.seed = seed.wrapping_add(100);
        for r in &mut self.recon {
            if let ReconSpec::Unrolled { train, .. } = r {
                train.seed = seed.wrapping_add(200);
                train.dataset.seed = seed.wrapping_add(300);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recon.is_empty() {
            return Err(Error::Config("at least one reconstructor is required".into()));
        }
        if self.masks.is_empty() {
            return Err(Error::Config("at least one mask is required".into()));
        }
        let mut labels: Vec<String> = self.masks.iter().map(MaskSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.masks.len() {
            return Err(Error::Config("mask scenario names must be distinct".into()));
        }
        let mut names: Vec<&str> = self.recon.iter().map(ReconSpec::name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.recon.len() {
            return Err(Error::Config("each reconstructor may appear once".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and nonnegative".into()));
        }
        match &self.source {
            SourceSpec::SheppLogan { ny, nx } | SourceSpec::Random { ny, nx, .. } => {
                if *ny == 0 || *nx == 0 {
                    return Err(Error::Config("empty phantom".into()));
                }
            }
            SourceSpec::Fastmri { path, .. } => {
                if !path.exists() {
                    return Err(Error::Config(format!("fastMRI file {} does not exist", path.display())));
                }
            }
        }
        match &self.coils {
            CoilSpec::Simulated { nc } | CoilSpec::Espirit { nc, .. } if *nc == 0 => {
                return Err(Error::Config("nc must be positive".into()));
            }
            CoilSpec::Espirit { espirit, .. } => espirit.validate()?,
            _ => {}
        }
        for r in &self.recon {
            match r {
                ReconSpec::Cgsense { iters } if *iters == 0 => {
                    return Err(Error::Config("cgsense iters must be positive".into()));
                }
                ReconSpec::Grappa { geometry, ridge } => {
                    geometry.validate()?;
                    if !(*ridge >= 0.0 && ridge.is_finite()) {
                        return Err(Error::Config("grappa ridge must be finite and nonnegative".into()));
                    }
                }
                ReconSpec::Unrolled { weights, train, samples } => {
                    if let Some(p) = weights {
                        if !p.join("manifest.json").exists() {
                            return Err(Error::Config(format!("no network manifest in {}", p.display())));
                        }
                    } else {
                        train.validate()?;
                        if *samples == 0 {
                            return Err(Error::Config("unrolled training needs samples".into()));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}
