use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixflow::flow::FlowIntegrator;
use mixflow::{choi_distance, run, ComplexMatrix, FlowConfig, FlowEvaluator, InitialGuess, MixedUnitaryChannel, SolverState};
use mixflow_bench::{instance, point};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn field(c: &mut Criterion) {
    let mut g = c.benchmark_group("field");
    for pairs in [1, 20, 100] {
        let (_, inst) = instance(5, 5, pairs, 1);
        let (p, us) = point(5, 10, 2);
        let mut ev = FlowEvaluator::new(5, 10);
        let mut dp = vec![0.0; 10];
        let mut du = vec![ComplexMatrix::zeros(5, 5); 10];
        g.bench_with_input(BenchmarkId::new("eval_n5_r10", pairs), &pairs, |b, _| {
            b.iter(|| black_box(ev.eval(&inst, &p, &us, &mut dp, &mut du)))
        });
        g.bench_with_input(BenchmarkId::new("value_n5_r10", pairs), &pairs, |b, _| {
            b.iter(|| black_box(inst.value(&p, &us).unwrap()))
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let (_, inst) = instance(5, 5, 100, 3);
    let (p, us) = point(5, 10, 4);
    let cfg = FlowConfig::default();
    let start = SolverState::new(p, us).unwrap();
    c.bench_function("step_n5_r10_m100", |b| {
        b.iter_batched(
            || (FlowIntegrator::new(&inst, &cfg, &start).unwrap(), start.clone()),
            |(mut integ, mut state)| black_box(integ.integrate_step(&mut state).unwrap()),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn single_shot_run(c: &mut Criterion) {
    let (_, inst) = instance(5, 5, 1, 5);
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    g.bench_function("n5_r10_m1", |b| {
        b.iter(|| black_box(run(&inst, InitialGuess::Random { components: 10 }, &FlowConfig::default()).unwrap().steps))
    });
    g.finish();
}

fn choi(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = MixedUnitaryChannel::random(5, 10, &mut rng);
    let b = MixedUnitaryChannel::random(5, 10, &mut rng);
    c.bench_function("choi_distance_n5_r10", |bch| bch.iter(|| black_box(choi_distance(&a, &b).unwrap())));
}

criterion_group!(benches, field, step, single_shot_run, choi);
criterion_main!(benches);
