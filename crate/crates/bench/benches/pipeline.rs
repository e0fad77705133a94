use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use diffcast::analytic::{Evaluator, Mode};
use diffcast::experiments::scenario_with_loss;
use diffcast::params::{ElementSize, ProtocolParams, ScenarioParams, Strategy};
use diffcast::sim::{simulate, SimConfig};
use diffcast::stationary::{build_kernel, solve_stationary};
use diffcast::tuner::tune;
use diffcast::TuneOptions;

fn scenario(capacity: usize) -> ScenarioParams {
    let bits = ElementSize::from_bits(16).unwrap();
    scenario_with_loss(0.5, 0.01, capacity, bits, 0.001, 10, 0.1, 0.95).unwrap()
}

fn stationary(c: &mut Criterion) {
    let s = scenario(1000);
    c.bench_function("kernel R=1000", |b| b.iter(|| build_kernel(black_box(&s)).unwrap()));
    let k = build_kernel(&s).unwrap();
    c.bench_function("solve R=1000", |b| b.iter(|| solve_stationary(black_box(&k)).unwrap()));
}

fn tuning(c: &mut Criterion) {
    let mut g = c.benchmark_group("tune");
    g.sample_size(10);
    let s = scenario(1000);
    let options = TuneOptions::default();
    g.bench_function("exact R=1000", |b| b.iter(|| tune(black_box(&s), Mode::Exact, &options).unwrap()));
    g.bench_function("asymptotic R=1000", |b| b.iter(|| tune(black_box(&s), Mode::Asymptotic, &options).unwrap()));
    let ev = Evaluator::new(&s, Mode::Exact).unwrap();
    g.bench_function("evaluate one triple", |b| b.iter(|| ev.evaluate(black_box(50), 2, 2).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    let s = scenario(200);
    let p = ProtocolParams::new(Strategy::Incremental, 50, 2, 2).unwrap();
    let config = SimConfig::with_measured(&s, 1, 100_000, 4);
    g.bench_function("4 runs x 1e5 slots R=200", |b| {
        b.iter_batched(|| config.clone(), |cfg| simulate(&s, &p, &cfg).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, stationary, tuning, simulation);
criterion_main!(benches);
