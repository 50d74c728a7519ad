//! Statistical invariant suite behind the `selftest` subcommand.
//!
//! Re-checks, on every installation, the invariants the test suite pins at
//! development time: transfer-function round trips, noise moments, ladder
//! monotonicity, reconstruction quality and QA self-consistency.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::color::{decode_srgb_to_linear, EvDrop, SrgbImage};
use crate::isp::render;
use crate::noise::{add_quant_noise, add_row_noise, add_shot_noise};
use crate::pipeline::{synthesize_pair, DegradationLevel, SynthesisOptions};
use crate::qa::fixture::{build_bundle, corpus_frames, gradient_image, testcard_image};
use crate::qa::{extract_segment_stats, generate_from_stats, verify_pair, QaConfig, QaTables};
use crate::seed::derive_rng;
use crate::unprocess::{
    sample_camera_params, unprocess, BayerRaw, CameraParams, NoiseParams, RawDomain,
    SamplingConfig, SensorProfile,
};

/// Outcome of one invariant check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check {
            name,
            passed,
            detail,
        }
    }
}

fn mean_and_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var, n)
}

fn psnr(a: &SrgbImage, b: &SrgbImage) -> f64 {
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    -10.0 * mse.log10()
}

fn noise_params(k: f64, r: f64) -> NoiseParams {
    let profile = SensorProfile {
        read_residual_sigma: 0.0,
        row_residual_sigma: 0.0,
        ..SensorProfile::builtin()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    NoiseParams::for_gain(k, r, &profile, &mut rng)
}

fn check_gamma_round_trip() -> Check {
    let mut worst: f64 = 0.0;
    for i in 1..=1000 {
        let x = 0.001 + 0.999 * (i as f64 / 1000.0);
        let back = crate::color::encode_scalar(crate::color::decode_scalar(x));
        worst = worst.max((back - x).abs());
    }
    Check::new(
        "gamma round trip",
        worst < 1e-6,
        format!("max |encode(decode(x)) - x| = {worst:.2e} (limit 1e-6)"),
    )
}

fn check_ev_ladder(seed: u64) -> Check {
    let img = testcard_image(128, 96, seed);
    let opts = SynthesisOptions::new(seed);
    // Quantize the source the way file I/O would.
    let src = SrgbImage::from_u8(img.width(), img.height(), &img.to_u8()).unwrap();
    let base = decode_srgb_to_linear(&src).mean();
    let mut worst_rel: f64 = 0.0;
    let mut last_mean = f64::INFINITY;
    let mut monotone = true;
    for level in [
        DegradationLevel::L1,
        DegradationLevel::L2,
        DegradationLevel::L3,
        DegradationLevel::L4,
        DegradationLevel::L5,
    ] {
        let pair = synthesize_pair(&src, level, "selftest", "f", &opts).unwrap();
        let quantized = SrgbImage::from_u8(
            pair.noise_free.width(),
            pair.noise_free.height(),
            &pair.noise_free.to_u8(),
        )
        .unwrap();
        let mean = decode_srgb_to_linear(&quantized).mean();
        let expect = base * (-level.delta_ev()).exp2();
        worst_rel = worst_rel.max((mean - expect).abs() / expect);
        if mean >= last_mean {
            monotone = false;
        }
        last_mean = mean;
    }
    Check::new(
        "EV ladder scaling and monotonicity",
        worst_rel < 0.01 && monotone,
        format!("worst relative mean error {worst_rel:.4} (limit 0.01), monotone: {monotone}"),
    )
}

fn check_shot_mean(seed: u64) -> Check {
    let raw = BayerRaw::constant(160, 160, 1000.0, RawDomain::Adu);
    let mut rng = derive_rng(seed, &["selftest", "shot-mean"]);
    let out = add_shot_noise(&raw, &noise_params(2.0, 150.0), &mut rng).unwrap();
    let (mean, _, n) = mean_and_var((0..4).flat_map(|p| out.plane(p).to_vec()));
    Check::new(
        "shot noise mean preservation",
        n >= 100_000 && (mean - 1000.0).abs() < 10.0,
        format!("mean {mean:.2} ADU over {n} sites (limit 1000 +/- 10)"),
    )
}

fn check_shot_variance_slope(seed: u64) -> Check {
    let params = noise_params(1.5, 120.0);
    let signals = [100.0, 400.0, 1600.0];
    let mut vars = Vec::new();
    for (i, &s) in signals.iter().enumerate() {
        let raw = BayerRaw::constant(160, 160, s, RawDomain::Adu);
        let mut rng = derive_rng(seed, &["selftest", "shot-var", &i.to_string()]);
        let out = add_shot_noise(&raw, &params, &mut rng).unwrap();
        let (_, var, _) = mean_and_var((0..4).flat_map(|p| out.plane(p).to_vec()));
        vars.push(var);
    }
    let n = signals.len() as f64;
    let sx: f64 = signals.iter().sum();
    let sy: f64 = vars.iter().sum();
    let sxx: f64 = signals.iter().map(|x| x * x).sum();
    let sxy: f64 = signals.iter().zip(&vars).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let ss_res: f64 = signals
        .iter()
        .zip(&vars)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let mean_y = sy / n;
    let ss_tot: f64 = vars.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    Check::new(
        "shot noise variance grows with signal",
        slope > 0.0 && r2 > 0.95,
        format!("slope {slope:.1}, R^2 {r2:.5} (limits > 0 and > 0.95)"),
    )
}

fn check_quant_moments(seed: u64) -> Check {
    let raw = BayerRaw::constant(500, 500, 0.0, RawDomain::Adu);
    let mut rng = derive_rng(seed, &["selftest", "quant"]);
    let out = add_quant_noise(&raw, &mut rng).unwrap();
    let (mean, var, _) = mean_and_var((0..4).flat_map(|p| out.plane(p).to_vec()));
    let var_err = (var - 1.0 / 12.0).abs() / (1.0 / 12.0);
    Check::new(
        "quantization noise moments",
        mean.abs() < 0.002 && var_err < 0.02,
        format!("mean {mean:.5} (limit 0.002), variance error {var_err:.4} (limit 0.02)"),
    )
}

fn check_row_noise(seed: u64) -> Check {
    let rows = 10_000;
    let raw = BayerRaw::constant(4, rows, 0.0, RawDomain::Adu);
    let mut params = noise_params(2.0, 100.0);
    params.sigma_row = 2.5;
    let mut rng = derive_rng(seed, &["selftest", "row"]);
    let out = add_row_noise(&raw, &params, &mut rng).unwrap();
    let mut constant = true;
    for p in 0..4 {
        for y in 0..rows {
            let row = &out.plane(p)[y * 4..(y + 1) * 4];
            if row.iter().any(|&v| (v - row[0]).abs() > 1e-12) {
                constant = false;
            }
        }
    }
    let offsets: Vec<f64> = (0..rows).map(|y| out.plane(0)[y * 4]).collect();
    let (_, var, _) = mean_and_var(offsets.into_iter());
    let expect = params.sigma_row * params.sigma_row;
    let var_err = (var - expect).abs() / expect;
    Check::new(
        "row noise banding statistics",
        constant && var_err < 0.05,
        format!("rows constant: {constant}, variance error {var_err:.4} (limit 0.05)"),
    )
}

fn check_round_trip_psnr() -> Check {
    let params = CameraParams::neutral(16383);
    let ev0 = EvDrop::new(0.0).unwrap();

    let gradient = gradient_image(128, 96);
    let back = render(&unprocess(&gradient, &params).unwrap(), &params, ev0).unwrap();
    let gradient_psnr = psnr(&gradient, &back);

    let mut worst_natural = f64::INFINITY;
    for seed in 0..3 {
        let card = testcard_image(128, 96, seed);
        let back = render(&unprocess(&card, &params).unwrap(), &params, ev0).unwrap();
        worst_natural = worst_natural.min(psnr(&card, &back));
    }
    Check::new(
        "unprocess/render round trip PSNR",
        gradient_psnr >= 40.0 && worst_natural >= 30.0,
        format!(
            "gradient {gradient_psnr:.1} dB (limit 40), worst testcard {worst_natural:.1} dB (limit 30)"
        ),
    )
}

fn check_gain_distribution() -> Check {
    let config = SamplingConfig::default();
    let bank = crate::unprocess::CcmBank::builtin();
    let profile = SensorProfile::builtin();
    let mut logs: Vec<f64> = (0..10_000)
        .map(|seed| {
            sample_camera_params(seed, &config, &bank, &profile)
                .unwrap()
                .1
                .system_gain_k
                .ln()
        })
        .collect();
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (0.1f64.ln(), 6.0f64.ln());
    let n = logs.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, v) in logs.iter().enumerate() {
        let cdf = (v - lo) / (hi - lo);
        ks = ks
            .max((cdf - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - cdf).abs());
    }
    Check::new(
        "log-uniform gain sampling",
        ks < 0.02,
        format!("KS statistic {ks:.4} over 10000 draws (limit 0.02)"),
    )
}

fn check_qa_consistency(seed: u64) -> Check {
    let tables = QaTables::builtin();
    let cfg = QaConfig::default();
    let mut pairs_total = 0;
    for spec in corpus_frames(12) {
        let bundle = match build_bundle(&spec, &tables) {
            Ok(b) => b,
            Err(e) => return Check::new("QA self-verification", false, e.to_string()),
        };
        let stats = match extract_segment_stats(&bundle, &tables.classes, &cfg) {
            Ok(s) => s,
            Err(e) => return Check::new("QA self-verification", false, e.to_string()),
        };
        let pairs = match generate_from_stats(&stats, &tables, &cfg, seed) {
            Ok(p) => p,
            Err(e) => return Check::new("QA self-verification", false, e.to_string()),
        };
        for pair in &pairs {
            if !verify_pair(pair, &stats, &tables, &cfg) {
                return Check::new(
                    "QA self-verification",
                    false,
                    format!("{} failed re-evaluation", pair.key()),
                );
            }
        }
        pairs_total += pairs.len();
    }
    Check::new(
        "QA self-verification",
        pairs_total == 12 * 5,
        format!("{pairs_total} pairs over 12 fixture frames, all re-verified"),
    )
}

fn check_determinism(seed: u64) -> Check {
    let img = testcard_image(64, 48, seed);
    let opts = SynthesisOptions::new(seed);
    let a = synthesize_pair(&img, DegradationLevel::L3, "s", "f", &opts).unwrap();
    let b = synthesize_pair(&img, DegradationLevel::L3, "s", "f", &opts).unwrap();
    let bitwise =
        a.noisy.to_u8() == b.noisy.to_u8() && a.noise_free.to_u8() == b.noise_free.to_u8();
    Check::new(
        "seeded synthesis determinism",
        bitwise,
        format!("identical reruns bitwise-equal: {bitwise}"),
    )
}

/// Runs every invariant check; all must pass on a healthy build.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    vec![
        check_gamma_round_trip(),
        check_ev_ladder(seed),
        check_shot_mean(seed),
        check_shot_variance_slope(seed),
        check_quant_moments(seed),
        check_row_noise(seed),
        check_round_trip_psnr(),
        check_gain_distribution(),
        check_qa_consistency(seed),
        check_determinism(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_on_a_clean_build() {
        for check in run_selftest(0) {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
