use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hka::kernels::{check_propagation, Eigenfunction, KernelSpec, Model, TraceFamily};
use hka::mc::Execution;
use hka::pricing::{swaption_price_mc, SwaptionSpec, TenorStructure};
use hka::processes::{ProcessSpec, State};

fn executions() -> Vec<(&'static str, Execution)> {
    vec![("sequential", Execution::Sequential), ("parallel", Execution::Parallel { threads: None })]
}

fn propagation(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagation_check");
    group.sample_size(10);
    let cases = [
        ("trace_gauss", TraceFamily::GaussHeat),
        ("trace_vg", TraceFamily::VarianceGamma { eta: 2.0, gamma: 1.0 }),
    ];
    for (name, family) in cases {
        let kernel = KernelSpec::Trace { family, lambda: 1.0, c: 3.0 };
        let driver = family.driver(1);
        for (label, exec) in executions() {
            group.bench_with_input(BenchmarkId::new(name, label), &exec, |b, &exec| {
                b.iter(|| check_propagation(&kernel, &driver, 0.7, 0.5, &State::scalar(0.2), 100_000, 1, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn swaption(c: &mut Criterion) {
    let mut group = c.benchmark_group("swaption_mc");
    group.sample_size(10);
    let mu = -0.3;
    let model = Model::new(
        KernelSpec::Eigen {
            mu,
            g: Eigenfunction::Exponential { c: vec![1.0] },
        },
        ProcessSpec::brownian(vec![0.5 - mu]).unwrap(),
        State::scalar(0.1),
    )
    .unwrap();
    let spec = SwaptionSpec::new(TenorStructure::regular(1.0, 0.5, 8).unwrap(), 0.04).unwrap();
    for (label, exec) in executions() {
        group.bench_with_input(BenchmarkId::new("eigen_bm", label), &exec, |b, &exec| {
            b.iter(|| swaption_price_mc(&model, &spec, 0.0, &model.x0, 200_000, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, propagation, swaption);
criterion_main!(benches);
