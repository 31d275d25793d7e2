//! Shared fixtures for the benchmarks.

use advmri::datamodel::{make_random_mask, make_uniform_mask, shepp_logan, simulate_coils};
use advmri::{ComplexImage, EncodingContext, MultiCoilKspace};

pub struct Fixture {
    pub ctx: EncodingContext,
    pub x: ComplexImage,
    pub y: MultiCoilKspace,
    pub z: ComplexImage,
}

/// Shepp-Logan phantom with simulated coils and an R=4, 24-line ACS mask.
pub fn fixture(n: usize, nc: usize, random: bool) -> Fixture {
    let mask = if random {
        make_random_mask(n, 4, 24, 0).unwrap()
    } else {
        make_uniform_mask(n, 4, 24).unwrap()
    };
    let ctx = EncodingContext::new(simulate_coils(nc, n, n).unwrap(), mask).unwrap();
    let x = shepp_logan(n, n).unwrap();
    let y = ctx.apply_e(&x).unwrap();
    let z = ctx.apply_eh(&y).unwrap();
    Fixture { ctx, x, y, z }
}
