use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stode_bench::node_states;
use stode_core::graph::{heat_kernel_oracle, symmetric_normalize};
use stode_core::verify::{diffuse, ring_graph};
use stode_core::SolverSpec;

fn graph_diffusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("graph_diffusion");
    for n in [8usize, 32] {
        let a = symmetric_normalize(&ring_graph(n)).unwrap();
        let h0 = node_states(n, 16, 12);
        for (name, spec) in [
            ("euler_k8", SolverSpec::euler(1.0, 1.0 / 8.0).unwrap()),
            ("euler_k32", SolverSpec::euler(1.0, 1.0 / 32.0).unwrap()),
            ("rk4_k8", SolverSpec::rk4(1.0, 1.0 / 8.0).unwrap()),
        ] {
            group.bench_function(BenchmarkId::new(name, n), |b| {
                b.iter(|| diffuse(&a, &h0, &spec).unwrap())
            });
        }
        group.bench_function(BenchmarkId::new("heat_kernel", n), |b| {
            b.iter(|| heat_kernel_oracle(&a, 1.0, &h0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, graph_diffusion);
criterion_main!(benches);
