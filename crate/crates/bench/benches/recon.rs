use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use advmri::attack::{fgsm_attack, lift_to_kspace_min_l2, AttackConfig};
use advmri::cgsense::cgsense_from_zero_filled;
use advmri::coilmaps::{espirit, EspiritConfig};
use advmri::cs::{cs_from_zero_filled, dwt2, idwt2, CsConfig, Wavelet};
use advmri::grappa::{calibrate_kernel, grappa_reconstruct, GrappaGeometry};
use advmri::unrolled::{unrolled_forward, NetWeights};
use advmri_bench::fixture;

fn encoding(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoding");
    for n in [64, 128] {
        let f = fixture(n, 8, false);
        g.bench_with_input(BenchmarkId::new("normal_op", n), &f, |b, f| {
            b.iter(|| f.ctx.normal_op(black_box(&f.x), 0.0).unwrap())
        });
    }
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let f = fixture(128, 8, false);
    c.bench_function("cgsense_10", |b| b.iter(|| cgsense_from_zero_filled(black_box(&f.z), &f.ctx, 10).unwrap()));
    c.bench_function("fgsm_through_cg_10", |b| {
        b.iter(|| fgsm_attack(&f.ctx, black_box(&f.z), &f.x, &AttackConfig::default()).unwrap())
    });
    let r = fgsm_attack(&f.ctx, &f.z, &f.x, &AttackConfig::default()).unwrap();
    c.bench_function("lift_min_l2", |b| b.iter(|| lift_to_kspace_min_l2(&f.ctx, black_box(&r.r), 200, 1e-6).unwrap()));
    let cs = CsConfig { outer_iters: 5, ..CsConfig::default() };
    c.bench_function("cs_5_rounds", |b| b.iter(|| cs_from_zero_filled(black_box(&f.z), &f.ctx, &cs).unwrap()));
    let w = NetWeights::default_zeros();
    c.bench_function("unrolled_forward", |b| b.iter(|| unrolled_forward(&f.ctx, black_box(&f.z), &w).unwrap()));
}

fn kspace_methods(c: &mut Criterion) {
    let f = fixture(128, 8, false);
    let m = f.ctx.mask();
    let acs = f.y.extract_lines(m.acs_start(), m.acs_count()).unwrap();
    c.bench_function("grappa_calibrate", |b| {
        b.iter(|| calibrate_kernel(black_box(&acs), m.acs_start(), 4, GrappaGeometry::default(), 1e-3).unwrap())
    });
    let w = calibrate_kernel(&acs, m.acs_start(), 4, GrappaGeometry::default(), 1e-3).unwrap();
    c.bench_function("grappa_fill", |b| b.iter(|| grappa_reconstruct(black_box(&f.y), &w, m).unwrap()));
    let mut g = c.benchmark_group("espirit");
    g.sample_size(10);
    g.bench_function("maps_128", |b| b.iter(|| espirit(black_box(&acs), 128, 128, &EspiritConfig::default()).unwrap()));
    g.finish();
    c.bench_function("dwt_roundtrip_128", |b| {
        b.iter(|| idwt2(&dwt2(black_box(&f.x), 3, Wavelet::D4).unwrap()).unwrap())
    });
}

criterion_group!(benches, encoding, solvers, kspace_methods);
criterion_main!(benches);
