use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tgn_bench::synthetic_edges;
use tgn_core::aggregators::AggregatorKind;
use tgn_core::config::Config;
use tgn_core::engine::{batches, Engine, Mode};

fn process_batch(c: &mut Criterion) {
    let stream = synthetic_edges(2_000, 1).expect("synthetic stream");
    let mut group = c.benchmark_group("process_batch");
    group.sample_size(10);
    for kind in [AggregatorKind::Last, AggregatorKind::Bita] {
        for size in [100, 200] {
            let mut cfg = Config::default();
            cfg.aggregator = kind;
            let mut engine = Engine::new(&cfg, &stream).expect("engine");
            // Warm the memory so flushes do real work.
            for b in batches(&stream.events()[..1_000], size) {
                engine.process_batch(b, Mode::Replay, 0).expect("replay");
            }
            let batch = &stream.events()[1_000..1_000 + size];
            group.throughput(Throughput::Elements(size as u64));
            group.bench_with_input(BenchmarkId::new(kind.to_string(), size), batch, |bench, batch| {
                bench.iter_batched(
                    || engine.clone(),
                    |mut e| e.process_batch(batch, Mode::Eval, 0).expect("batch"),
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, process_batch);
criterion_main!(benches);
