use bihar_bench::{bump_pair, domain, weights};
use bihar_core::carleman::interior_ratio;
use bihar_core::discretization::ComplexField;
use bihar_core::forward::NavierSystem;
use bihar_core::geometry::GHOST_LAYERS;
use bihar_core::transport::{build_a0, t_apply, Generator, SliceOptions, SliceSetup};
use bihar_core::weights::Sign;
use bihar_core::C64;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn plane_wave(p: [f64; 3]) -> C64 {
    C64::new(0.0, 2.0 * p[0] - p[1] + 0.5 * p[2]).exp()
}

fn transport(c: &mut Criterion) {
    let dom = domain(33);
    let wp = weights();
    let f = ComplexField::from_fn(&dom, GHOST_LAYERS, plane_wave);
    c.bench_function("t_apply 33", |b| b.iter(|| t_apply(black_box(&f), &wp, Sign::Plus).unwrap()));
    c.bench_function("slice setup + a0 33", |b| {
        b.iter(|| {
            let setup = SliceSetup::new(&dom, &wp, SliceOptions::default()).unwrap();
            build_a0(&setup, &Generator::one(), Sign::Plus)
        })
    });
}

fn forward(c: &mut Criterion) {
    let dom = domain(33);
    let pert = bump_pair();
    let sys = NavierSystem::assemble(&dom, &pert).unwrap();
    let mut g = c.benchmark_group("navier");
    g.sample_size(10);
    g.bench_function("assemble 33", |b| b.iter(|| NavierSystem::assemble(&dom, &pert).unwrap()));
    g.bench_function("solve 33", |b| {
        b.iter(|| sys.solve(&|p| plane_wave(p), &|_| C64::new(0.0, 0.0), None).unwrap())
    });
    g.finish();
}

fn carleman(c: &mut Criterion) {
    let dom = domain(33);
    let wp = weights();
    let pert = bump_pair();
    let u = ComplexField::from_fn(&dom, GHOST_LAYERS, |p| {
        let r2 = p[0] * p[0] + p[1] * p[1] + (p[2] - 4.0) * (p[2] - 4.0);
        C64::new((0.25 - r2).max(0.0).powi(5), 0.0) * plane_wave(p)
    });
    c.bench_function("interior ratio 33", |b| b.iter(|| interior_ratio(black_box(&u), &pert, &wp, 0.25).unwrap()));
}

criterion_group!(benches, transport, forward, carleman);
criterion_main!(benches);
