use criterion::{criterion_group, criterion_main, Criterion};
use jointrecon_core::operators::{
    fourier_adjoint, fourier_forward, make_cartesian_mask, radon_adjoint, radon_forward, RadonGeometry,
};
use jointrecon_core::{ComplexGrid, RandomStream, RealGrid};
use num_complex::Complex64;
use std::hint::black_box;

fn radon(c: &mut Criterion) {
    let geom = RadonGeometry::uniform(64, 64, 60).unwrap();
    let mut s = RandomStream::new(0, "bench/radon");
    let u = RealGrid::from_fn(geom.image_shape(), |_, _| s.uniform());
    let sino = radon_forward(&u, &geom).unwrap();
    c.bench_function("radon_forward 64x64", |b| b.iter(|| radon_forward(black_box(&u), &geom).unwrap()));
    c.bench_function("radon_adjoint 64x60", |b| b.iter(|| radon_adjoint(black_box(&sino)).unwrap()));
}

fn fourier(c: &mut Criterion) {
    let geom = RadonGeometry::uniform(64, 64, 60).unwrap();
    let shape = geom.image_shape();
    let mut s = RandomStream::new(0, "bench/fourier");
    let v = ComplexGrid::from_fn(shape, |_, _| Complex64::new(s.normal(), s.normal()));
    let mask = make_cartesian_mask(shape, 4.0, 0.08, &mut s).unwrap();
    let k = fourier_forward(&v, &mask).unwrap();
    c.bench_function("fourier_forward 64x64 R4", |b| b.iter(|| fourier_forward(black_box(&v), &mask).unwrap()));
    c.bench_function("fourier_adjoint 64x64 R4", |b| b.iter(|| fourier_adjoint(black_box(&k)).unwrap()));
}

criterion_group!(benches, radon, fourier);
criterion_main!(benches);
