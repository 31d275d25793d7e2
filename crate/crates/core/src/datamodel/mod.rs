//! Core array types, sampling masks, phantoms, coil simulation and file I/O.

mod array;
pub mod cfl;
pub mod fastmri;
mod mask;
pub mod phantom;
mod simulate;

pub use array::{
    inner, inner_re, linf_components, norm, norm_sqr, CoilSensitivities, ComplexImage,
    MultiCoilKspace,
};
pub use cfl::{read_array, write_array, CflArray};
pub use fastmri::load_fastmri_slice;
pub use mask::{make_random_mask, make_uniform_mask, MaskKind, SamplingMask};
pub use phantom::{random_phantom, shepp_logan};
pub use simulate::{
    simulate_coils, simulate_coils_with, synthesize_kspace, CoilProfile, SimulationConfig,
};
