use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vaxledger_core::netsim::EventQueue;
use vaxledger_core::scenario::{run_with_fixture, Fixture, RunOptions, ScenarioConfig, Step};
use vaxledger_core::SimTime;

fn event_queue(c: &mut Criterion) {
    c.bench_function("event_queue_100k", |b| {
        b.iter(|| {
            let mut q = EventQueue::new();
            for i in 0..100_000u64 {
                q.schedule(SimTime::from_micros((i * 7919) % 1_000_000), i).unwrap();
            }
            let mut sum = 0u64;
            while let Some((_, e)) = q.pop_until(SimTime::from_secs(2)) {
                sum = sum.wrapping_add(e);
            }
            black_box(sum)
        })
    });
}

fn scenario(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    for step in [Step::Register, Step::Verify] {
        let mut cfg = ScenarioConfig::new(step);
        cfg.tps_levels = vec![28.0];
        cfg.duration_seconds = 10.0;
        cfg.drain_seconds = 5.0;
        cfg.preloaded_records = 1000;
        let fx = Fixture::new(cfg.seed, cfg.preloaded_records).unwrap();
        group.bench_function(format!("{step}_28tps_10s"), |b| {
            b.iter(|| run_with_fixture(&cfg, &fx, &RunOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, event_queue, scenario);
criterion_main!(benches);
