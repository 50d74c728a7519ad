//! QA generation stages on a fixture frame, plus response parsing.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use duskbench_core::eval::parse_response;
use duskbench_core::qa::fixture::{build_bundle, corpus_frames};
use duskbench_core::qa::{extract_segment_stats, generate_from_stats, QaConfig, QaTables};

fn bench_qa(c: &mut Criterion) {
    let tables = QaTables::builtin();
    let cfg = QaConfig::default();
    let spec = &corpus_frames(1)[0];
    let bundle = build_bundle(spec, &tables).unwrap();
    let stats = extract_segment_stats(&bundle, &tables.classes, &cfg).unwrap();

    c.bench_function("extract_segment_stats_160x120", |b| {
        b.iter(|| {
            black_box(extract_segment_stats(black_box(&bundle), &tables.classes, &cfg).unwrap())
        })
    });

    c.bench_function("generate_from_stats", |b| {
        b.iter(|| black_box(generate_from_stats(black_box(&stats), &tables, &cfg, 7).unwrap()))
    });

    let choices: Vec<String> = [
        "bedroom",
        "bathroom",
        "kitchen",
        "dining room",
        "living room",
        "office",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    c.bench_function("parse_response", |b| {
        b.iter(|| {
            black_box(parse_response(
                black_box("I believe this is the living room."),
                &choices,
            ))
        })
    });
}

criterion_group!(benches, bench_qa);
criterion_main!(benches);
