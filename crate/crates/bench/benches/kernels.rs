use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use hatqmc::problems::{horizon_state, horizon_states};
use hatqmc::{estimate, select_and_allocate, Density1D, DigitalSequence, HatDensity1D, Knots1D};
use hatqmc_bench::{banana_surrogate, predprey_batch};

fn points(c: &mut Criterion) {
    let seq = DigitalSequence::sobol(4).unwrap();
    c.bench_function("sobol_4d_block_4096", |b| b.iter(|| seq.block(black_box(1000), 4096).unwrap()));
    c.bench_function("sobol_4d_iter_4096", |b| {
        b.iter(|| {
            let mut it = seq.iter_from(0).unwrap();
            let mut x = [0.0; 4];
            let mut acc = 0.0;
            for _ in 0..4096 {
                it.next_into(&mut x);
                acc += x[3];
            }
            acc
        })
    });
}

fn inverse_cdf(c: &mut Criterion) {
    let knots = Knots1D::uniform(-2.0, 2.0, 64).unwrap();
    let hat = HatDensity1D::new(&knots, 17).unwrap();
    c.bench_function("hat_inv_cdf", |b| {
        let mut z = 0.0f64;
        b.iter(|| {
            z = (z + 0.618_033_988_749_895) % 1.0;
            hat.inv_cdf(black_box(z))
        })
    });
}

fn estimator(c: &mut Criterion) {
    let surrogate = banana_surrogate(5e-3);
    let comps = surrogate.to_mixture().unwrap();
    let weights: Vec<f64> = comps.iter().map(|k| k.weight).collect();
    let seq = DigitalSequence::sobol(2).unwrap();
    let mut group = c.benchmark_group("mixture_estimate");
    group.sample_size(20);
    group.bench_function("banana_eps5e-3_n65536", |b| {
        b.iter_batched(
            || select_and_allocate(&weights, 65536, 0.5).unwrap(),
            |alloc| estimate(&comps, &alloc, |x| x[0] * x[1], &seq).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn ode(c: &mut Criterion) {
    let xs = predprey_batch(64);
    let mut group = c.benchmark_group("predprey_horizon");
    group.sample_size(20);
    group.bench_function("single_x64", |b| {
        b.iter(|| xs.chunks(4).map(|x| horizon_state(x).unwrap().0).sum::<f64>())
    });
    group.bench_function("batched_x64", |b| b.iter(|| horizon_states(black_box(&xs))));
    group.finish();
}

criterion_group!(benches, points, inverse_cdf, estimator, ode);
criterion_main!(benches);
