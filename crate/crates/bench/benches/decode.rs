use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use vista_bench::{chain_taxonomy, random_probs, synth_fixture};
use vista_core::ated::{self, EventMode, TransitMode};
use vista_core::DecodeConfig;

fn long_video(c: &mut Criterion) {
    let tax = chain_taxonomy(5, 21, 7);
    let frames = 100_000;
    let probs = random_probs(&tax, frames, 3);
    let mut group = c.benchmark_group("decode_long_video");
    group.sample_size(10);
    group.throughput(Throughput::Elements(frames as u64));
    for (name, transit, events) in [
        ("dp_per_label", TransitMode::Dp, EventMode::PerLabel),
        ("ratchet_per_label", TransitMode::Ratchet, EventMode::PerLabel),
        ("dp_tuple", TransitMode::Dp, EventMode::Tuple),
    ] {
        let mut cfg = DecodeConfig::with_defaults(tax.clone());
        cfg.transit_mode = transit;
        cfg.event_mode = events;
        group.bench_function(name, |b| b.iter(|| ated::decode(black_box(&probs), &cfg).unwrap()));
    }
    group.finish();
}

fn stages(c: &mut Criterion) {
    let fixture = synth_fixture(1, 20_000);
    let probs = &fixture.probs[0];
    let cfg = DecodeConfig::with_defaults(fixture.taxonomy.clone());
    let mut group = c.benchmark_group("decode_stages");
    group.bench_function("smooth", |b| b.iter(|| ated::smooth(black_box(probs), &fixture.taxonomy).unwrap()));
    group.bench_function("prepare", |b| b.iter(|| ated::prepare(black_box(probs), &cfg).unwrap()));
    let prepared = ated::prepare(probs, &cfg).unwrap();
    group.bench_function("finish", |b| {
        b.iter_batched(|| prepared.clone(), |p| ated::finish(&p, &cfg, &cfg.thresholds).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, long_video, stages);
criterion_main!(benches);
