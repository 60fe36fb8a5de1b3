use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbl_core::analysis::drift_expected;
use rbl_core::dynamics::{propose_action, sgd_step_with};
use rbl_core::quadrature::integrate_default;
use rbl_core::runner::{run_trajectory, RunConfig};
use rbl_core::sphere::{sample_tangent, sample_unit};
use rbl_core::{LinkFunction, SgdState, StreamKey};

fn tangent(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_tangent");
    for d in [3usize, 20, 100] {
        let mut rng = StreamKey::new(1).rng();
        let theta = sample_unit(d, &mut rng).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| sample_tangent(black_box(&theta), &mut rng).unwrap())
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let link = LinkFunction::cubic();
    let mut g = c.benchmark_group("sgd_step");
    for d in [20usize, 100] {
        let mut rng = StreamKey::new(2).rng();
        let state = SgdState::new(sample_unit(d, &mut rng).unwrap());
        let sample = propose_action(&state, 0.5, &mut rng).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| sgd_step_with(black_box(&state), &sample, 0.3, 0.002, &link, false).unwrap())
        });
    }
    g.finish();
}

fn trajectory(c: &mut Criterion) {
    let cfg = RunConfig::from_json(
        r#"{"d": 20, "link": "cubic", "horizon": 10000, "record_every": 10000}"#,
    )
    .unwrap();
    c.bench_function("trajectory_10k_steps_d20", |b| {
        b.iter(|| run_trajectory(black_box(&cfg), 0).unwrap())
    });
}

fn drift(c: &mut Criterion) {
    let link = LinkFunction::cubic();
    c.bench_function("drift_expected_1e5", |b| {
        b.iter(|| drift_expected(&link, 20, 0.3, 0.002, 0.5, 100_000, StreamKey::new(3)).unwrap())
    });
}

fn quadrature(c: &mut Criterion) {
    let cubic = LinkFunction::cubic();
    c.bench_function("burnin_integrand_cubic", |b| {
        b.iter(|| {
            integrate_default(
                |m| {
                    let fp = cubic.df(m);
                    m / (fp * fp)
                },
                black_box(0.125),
                0.975,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, tangent, step, trajectory, drift, quadrature);
criterion_main!(benches);
