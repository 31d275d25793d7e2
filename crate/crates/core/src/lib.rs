//! Multi-coil MRI reconstruction with an adversarial-stability engine.
//!
//! The crate bundles conventional parallel-imaging reconstructors (CG-SENSE,
//! GRAPPA, wavelet-regularized compressed sensing), ESPIRiT coil-map
//! estimation, a toy unrolled network, and the machinery to attack all of
//! them with a single FGSM perturbation generated by back-propagating
//! through an unrolled conjugate-gradient solver.
//!
//! Every reconstructor goes through [`encoding::EncodingContext`], the
//! single implementation of the forward model `y = E x`.

pub mod attack;
pub mod cgsense;
pub mod coilmaps;
pub mod cs;
pub mod datamodel;
pub mod encoding;
pub mod error;
pub mod grappa;
pub mod harness;
pub mod unrolled;

pub use datamodel::{
    CoilSensitivities, ComplexImage, MaskKind, MultiCoilKspace, SamplingMask, SimulationConfig,
};
pub use encoding::EncodingContext;
pub use error::{Error, Result};
pub use num_complex::Complex64;
