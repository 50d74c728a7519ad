//! Hot paths of the low-light synthesis pipeline on a 256x256 frame.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use duskbench_core::color::{apply_ev_drop, decode_srgb_to_linear, encode_linear_to_srgb, EvDrop};
use duskbench_core::isp::{demosaic_bilinear, render};
use duskbench_core::noise::inject_noise;
use duskbench_core::pipeline::{synthesize_pair, DegradationLevel, SynthesisOptions};
use duskbench_core::qa::fixture::testcard_image;
use duskbench_core::seed::derive_rng;
use duskbench_core::unprocess::{
    sample_camera_params, unprocess, CcmBank, SamplingConfig, SensorProfile,
};

fn bench_pipeline(c: &mut Criterion) {
    let img = testcard_image(256, 256, 1);
    let config = SamplingConfig::default();
    let bank = CcmBank::builtin();
    let profile = SensorProfile::builtin();
    let (camera, noise) = sample_camera_params(3, &config, &bank, &profile).unwrap();
    let raw = unprocess(&img, &camera).unwrap();
    let ev = EvDrop::new(6.0).unwrap();

    c.bench_function("decode_encode_round_trip_256", |b| {
        b.iter(|| {
            let linear = decode_srgb_to_linear(black_box(&img));
            black_box(encode_linear_to_srgb(&apply_ev_drop(&linear, ev)))
        })
    });

    c.bench_function("unprocess_256", |b| {
        b.iter(|| black_box(unprocess(black_box(&img), &camera).unwrap()))
    });

    c.bench_function("inject_noise_256", |b| {
        b.iter(|| {
            let mut rng = derive_rng(7, &["bench", "noise"]);
            black_box(inject_noise(black_box(&raw), &camera, &noise, &mut rng).unwrap())
        })
    });

    c.bench_function("demosaic_bilinear_256", |b| {
        b.iter(|| black_box(demosaic_bilinear(black_box(&raw))))
    });

    c.bench_function("render_256", |b| {
        b.iter(|| black_box(render(black_box(&raw), &camera, ev).unwrap()))
    });

    c.bench_function("synthesize_pair_l3_256", |b| {
        let opts = SynthesisOptions::new(11);
        b.iter(|| {
            black_box(
                synthesize_pair(black_box(&img), DegradationLevel::L3, "s", "f", &opts).unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
