use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stegan_core::baselines::{DctParams, LsbParams};
use stegan_core::evalbench::{run_benchmark, write_fixture_dataset, BenchConfig, Method};
use stegan_tensor::Exec;

fn benchmark_run(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    write_fixture_dataset(dir.path(), 8, 128, 128, 3, 5).unwrap();
    let methods = [
        Method::Lsb(LsbParams::new(2).unwrap()),
        Method::Dct(DctParams::default()),
    ];
    let mut group = c.benchmark_group("run_benchmark_8x128");
    group.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        let config = BenchConfig {
            exec,
            ..BenchConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| run_benchmark(dir.path(), &methods, config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, benchmark_run);
criterion_main!(benches);
