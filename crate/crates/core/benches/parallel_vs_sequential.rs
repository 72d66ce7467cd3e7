use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cltm::distances::{distance_matrix, DistanceConfig};
use cltm::em::{fit_em, EmConfig};
use cltm::pipeline::{generate_synthetic, SyntheticData, SyntheticSpec, TreeShape};
use cltm::predict::predict_series;
use cltm::Execution;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn data() -> SyntheticData {
    generate_synthetic(&SyntheticSpec {
        shape: TreeShape {
            n_observed: 12,
            n_hidden: 3,
            ..TreeShape::default()
        },
        time_steps: 1000,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn bench(c: &mut Criterion) {
    let data = data();
    let ds = &data.dataset;

    let mut g = c.benchmark_group("distance_matrix");
    for (name, execution) in POLICIES {
        let cfg = DistanceConfig {
            conditional: true,
            execution,
            ..DistanceConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| distance_matrix(ds, cfg).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("predict_series");
    for (name, execution) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predict_series(&data.model, ds, ds.burn_in..ds.len(), 20, 3, execution).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("fit_em");
    g.sample_size(10);
    for (name, execution) in POLICIES {
        let cfg = EmConfig {
            max_iterations: 2,
            restarts: 1,
            execution,
            ..EmConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| fit_em(&data.model.structure, ds, &ds.schema, cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
