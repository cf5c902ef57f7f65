//! Batch gradient throughput, sequential against the rayon strategy.

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dlr_core::datagen::{
    synthetic_topology, ConductorAssignment, GeneratedData, SyntheticGridConfig, WeatherConfig, WindowSpec,
};
use dlr_core::graph::to_line_graph;
use dlr_core::model::{ModelConfig, Variant};
use dlr_core::train::{batch_gradient, build_model};
use dlr_core::Execution;

fn batch(c: &mut Criterion) {
    let grid = SyntheticGridConfig {
        buses: 20,
        lines: 30,
        parallel_lines: 0,
        lat_range: [30.0, 33.0],
        lon_range: [-99.0, -95.0],
    };
    let start = NaiveDate::from_ymd_opt(2021, 5, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let data = GeneratedData::generate(
        synthetic_topology(&grid, 7).unwrap(),
        20,
        start,
        &WeatherConfig::default(),
        &ConductorAssignment::default(),
        7,
        Execution::Parallel,
    )
    .unwrap();
    let (train, _) = data.split(WindowSpec::default(), Execution::Parallel).unwrap();
    let lg = to_line_graph(&data.grid);
    let cfg = ModelConfig {
        hidden: 16,
        head_hidden: 16,
        ..ModelConfig::for_variant(Variant::DLgclstm)
    };
    let model = build_model(&cfg, &train, &lg, 1).unwrap();
    let idx: Vec<usize> = (0..train.len()).collect();

    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::new(name, idx.len()), &exec, |b, &exec| {
            b.iter(|| batch_gradient(&model, &train, &idx, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
