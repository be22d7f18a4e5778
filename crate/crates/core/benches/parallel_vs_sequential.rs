use brwlab::moment_solver::{solve_moments, MomentOptions, TruncatedOperator, Variant};
use brwlab::montecarlo::{SimulationOptions, Simulator};
use brwlab::walk_kernel::{build_kernel, KernelSpec};
use brwlab::{Execution, OffspringLaw};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn replicas(c: &mut Criterion) {
    let k = build_kernel(&KernelSpec::simple_symmetric(1, 1.0)).unwrap();
    let law = OffspringLaw::binary(1.0, 0.1).unwrap();
    let sim = Simulator::new(&k, &law).unwrap();
    let mut group = c.benchmark_group("montecarlo_replicas");
    for (name, execution) in MODES {
        let mut opts = SimulationOptions::new(1, vec![1.0, 5.0], 2000, 9);
        opts.execution = execution;
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sim.run(&opts)));
    }
    group.finish();
}

fn quadrature(c: &mut Criterion) {
    let k = build_kernel(&KernelSpec::simple_symmetric(3, 1.0)).unwrap();
    let o = [0, 0, 0];
    let mut group = c.benchmark_group("green_quadrature");
    for (name, execution) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| k.green_with(execution, 0.2, &o, &[1, 1, 0], 1e-10).unwrap())
        });
    }
    group.finish();
}

fn operator(c: &mut Criterion) {
    let k = build_kernel(&KernelSpec::simple_symmetric(3, 1.0)).unwrap();
    let law = OffspringLaw::binary(1.0, 0.3).unwrap();
    let mut group = c.benchmark_group("operator_apply");
    for (name, execution) in MODES {
        let op = TruncatedOperator::new(&k, &law, 40).with_execution(execution);
        let v = vec![1.0; op.len()];
        let mut out = vec![0.0; op.len()];
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| op.apply(&v, &mut out)));
    }
    group.finish();
}

fn moments(c: &mut Criterion) {
    let k = build_kernel(&KernelSpec::simple_symmetric(3, 1.0)).unwrap();
    let law = OffspringLaw::binary(1.0, 0.3).unwrap();
    let mut group = c.benchmark_group("moment_solve");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut opts = MomentOptions::new(16, 2, 2.0, Variant::local_origin(3));
        opts.leak_tol = 1.0;
        opts.execution = execution;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solve_moments(&k, &law, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replicas, quadrature, operator, moments);
criterion_main!(benches);
