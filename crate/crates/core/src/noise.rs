//! Physics-based sensor noise injection in the RAW ADU domain.
//!
//! Four components are composed in a fixed order: photon shot noise, heavy-
//! tailed read noise (Tukey-lambda with a per-plane DC offset), row-wise
//! banding, and quantization noise. Each operator takes an explicit random
//! stream, so an image's output depends only on its own seed.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::unprocess::{BayerRaw, CameraParams, NoiseParams, RawDomain};

/// Quantile function of the Tukey-lambda distribution.
///
/// `Q(p; shape) = (p^shape - (1-p)^shape) / shape`, with the logistic limit at
/// `shape = 0`.
#[inline]
pub fn tukey_lambda_quantile(p: f64, shape: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    if shape.abs() < 1e-12 {
        (p / (1.0 - p)).ln()
    } else {
        (p.powf(shape) - (1.0 - p).powf(shape)) / shape
    }
}

/// Draws one Tukey-lambda sample via inverse-CDF.
#[inline]
fn tukey_lambda_sample(rng: &mut impl Rng, shape: f64) -> f64 {
    tukey_lambda_quantile(rng.random::<f64>(), shape)
}

fn require_adu(raw: &BayerRaw, op: &str) -> Result<()> {
    if raw.domain() != RawDomain::Adu {
        return Err(Error::Domain(format!(
            "{op} operates on the ADU domain; convert with to_adu first"
        )));
    }
    Ok(())
}

/// Photon shot noise: divide the signal by the ISO ratio r, replace each
/// site's photoelectron count with a Poisson draw, and amplify back.
///
/// Expectation is preserved at every signal level.
pub fn add_shot_noise(
    raw_adu: &BayerRaw,
    params: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<BayerRaw> {
    require_adu(raw_adu, "add_shot_noise")?;
    if raw_adu
        .plane(0)
        .iter()
        .chain(raw_adu.plane(1))
        .chain(raw_adu.plane(2))
        .chain(raw_adu.plane(3))
        .any(|&v| v < 0.0)
    {
        return Err(Error::Domain(
            "shot noise requires non-negative ADU values".into(),
        ));
    }
    let r = params.iso_ratio_r;
    let k = params.system_gain_k;
    let mut out = raw_adu.clone();
    for p in 0..4 {
        for v in out.plane_mut(p) {
            let electrons = *v / r / k;
            let n = if electrons > 0.0 {
                Poisson::new(electrons)
                    .map_err(|e| Error::Domain(format!("poisson mean {electrons}: {e}")))?
                    .sample(rng)
            } else {
                0.0
            };
            *v = n * k * r;
        }
    }
    Ok(out)
}

/// Read noise: i.i.d. Tukey-lambda samples scaled by `sigma_tl`, plus a
/// per-plane DC offset.
pub fn add_read_noise(
    raw_adu: &BayerRaw,
    params: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<BayerRaw> {
    require_adu(raw_adu, "add_read_noise")?;
    let sigma = params.sigma_tl;
    let shape = params.tukey_lambda_shape;
    let mut out = raw_adu.clone();
    for p in 0..4 {
        let bias = params.color_bias[p];
        for v in out.plane_mut(p) {
            if sigma > 0.0 {
                *v += sigma * tukey_lambda_sample(rng, shape);
            }
            *v += bias;
        }
    }
    Ok(out)
}

/// Row noise: every site in mosaic row `i` receives the same Gaussian offset
/// `n_r(i) ~ N(0, sigma_row^2)`, shared across the four planes.
pub fn add_row_noise(
    raw_adu: &BayerRaw,
    params: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<BayerRaw> {
    require_adu(raw_adu, "add_row_noise")?;
    if params.sigma_row < 0.0 {
        return Err(Error::Domain("sigma_row must be non-negative".into()));
    }
    let mut out = raw_adu.clone();
    if params.sigma_row == 0.0 {
        return Ok(out);
    }
    let offsets: Vec<f64> = (0..out.height_half())
        .map(|_| {
            rand_distr::Normal::new(0.0, params.sigma_row)
                .expect("valid sigma")
                .sample(rng)
        })
        .collect();
    let w = out.width_half();
    for p in 0..4 {
        let plane = out.plane_mut(p);
        for (y, &offset) in offsets.iter().enumerate() {
            for v in &mut plane[y * w..(y + 1) * w] {
                *v += offset;
            }
        }
    }
    Ok(out)
}

/// Quantization noise: i.i.d. uniform on `[-0.5, 0.5]` ADU, modeling the
/// 1 ADU rounding step of analog-to-digital conversion.
pub fn add_quant_noise(raw_adu: &BayerRaw, rng: &mut impl Rng) -> Result<BayerRaw> {
    require_adu(raw_adu, "add_quant_noise")?;
    let mut out = raw_adu.clone();
    for p in 0..4 {
        for v in out.plane_mut(p) {
            *v += rng.random_range(-0.5..=0.5);
        }
    }
    Ok(out)
}

/// Per-component noise fields in ADU, retained for diagnostics.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub shot: BayerRaw,
    pub read: BayerRaw,
    pub row: BayerRaw,
    pub quant: BayerRaw,
    /// Clean signal plus all components, before clamping (ADU domain).
    pub composed: BayerRaw,
}

/// Injects the four noise components into a normalized `[0,1]` mosaic.
///
/// Converts to ADU using the camera's white level, applies shot, read, row
/// and quantization noise in that order (honoring `params.components`),
/// clamps to `[0, white_level]`, and converts back to `[0,1]`.
pub fn inject_noise(
    raw: &BayerRaw,
    camera: &CameraParams,
    params: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<BayerRaw> {
    let adu = apply_components(&raw.to_adu(camera.white_level), params, rng, None)?;
    Ok(adu.to_normalized(camera.white_level))
}

/// As [`inject_noise`], additionally returning the per-component fields.
pub fn inject_noise_with_diagnostics(
    raw: &BayerRaw,
    camera: &CameraParams,
    params: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<(BayerRaw, NoiseRealization)> {
    let mut diag = Vec::with_capacity(4);
    let adu = apply_components(
        &raw.to_adu(camera.white_level),
        params,
        rng,
        Some(&mut diag),
    )?;
    let mut fields = diag.into_iter();
    let realization = NoiseRealization {
        shot: fields.next().unwrap(),
        read: fields.next().unwrap(),
        row: fields.next().unwrap(),
        quant: fields.next().unwrap(),
        composed: adu.clone(),
    };
    Ok((adu.to_normalized(camera.white_level), realization))
}

fn apply_components(
    adu: &BayerRaw,
    params: &NoiseParams,
    rng: &mut impl Rng,
    mut diagnostics: Option<&mut Vec<BayerRaw>>,
) -> Result<BayerRaw> {
    let mut current = adu.clone();
    let steps: [(bool, &str); 4] = [
        (params.components.shot, "shot"),
        (params.components.read, "read"),
        (params.components.row, "row"),
        (params.components.quant, "quant"),
    ];
    for (enabled, name) in steps {
        let next = if enabled {
            match name {
                "shot" => add_shot_noise(&current, params, rng)?,
                "read" => add_read_noise(&current, params, rng)?,
                "row" => add_row_noise(&current, params, rng)?,
                "quant" => add_quant_noise(&current, rng)?,
                _ => unreachable!(),
            }
        } else {
            current.clone()
        };
        if let Some(diag) = diagnostics.as_deref_mut() {
            diag.push(difference(&next, &current));
        }
        current = next;
    }
    Ok(current)
}

fn difference(a: &BayerRaw, b: &BayerRaw) -> BayerRaw {
    let mut out = a.clone();
    for p in 0..4 {
        let bp = b.plane(p).to_vec();
        for (v, o) in out.plane_mut(p).iter_mut().zip(bp) {
            *v -= o;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;
    use crate::unprocess::{NoiseComponents, SensorProfile};

    fn params_with(k: f64, r: f64) -> NoiseParams {
        let profile = SensorProfile {
            read_residual_sigma: 0.0,
            row_residual_sigma: 0.0,
            ..SensorProfile::builtin()
        };
        let mut rng = derive_rng(0, &["test", "params"]);
        NoiseParams::for_gain(k, r, &profile, &mut rng)
    }

    fn stats(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = values.collect();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var, n)
    }

    #[test]
    fn shot_noise_vanishes_at_zero_signal() {
        let raw = BayerRaw::constant(8, 8, 0.0, RawDomain::Adu);
        let mut rng = derive_rng(1, &["shot", "zero"]);
        let out = add_shot_noise(&raw, &params_with(2.0, 150.0), &mut rng).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shot_noise_rejects_negative_input() {
        let mut raw = BayerRaw::constant(2, 2, 10.0, RawDomain::Adu);
        raw.plane_mut(2)[1] = -1.0;
        let mut rng = derive_rng(1, &["shot", "neg"]);
        assert!(matches!(
            add_shot_noise(&raw, &params_with(2.0, 150.0), &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn shot_noise_preserves_expectation() {
        // 4 * 160 * 160 > 1e5 sites at 1000 ADU; mean within 1%.
        let raw = BayerRaw::constant(160, 160, 1000.0, RawDomain::Adu);
        let mut rng = derive_rng(7, &["shot", "mean"]);
        let out = add_shot_noise(&raw, &params_with(2.0, 150.0), &mut rng).unwrap();
        let (mean, _, n) = stats((0..4).flat_map(|p| out.plane(p).to_vec()));
        assert!(n >= 100_000);
        assert!(
            (mean - 1000.0).abs() < 10.0,
            "sample mean {mean} deviates more than 1%"
        );
    }

    #[test]
    fn shot_noise_variance_grows_linearly_with_signal() {
        let params = params_with(1.5, 120.0);
        let signals = [100.0, 400.0, 1600.0];
        let mut vars = Vec::new();
        for (i, &s) in signals.iter().enumerate() {
            let raw = BayerRaw::constant(160, 160, s, RawDomain::Adu);
            let mut rng = derive_rng(11, &["shot", "var", &i.to_string()]);
            let out = add_shot_noise(&raw, &params, &mut rng).unwrap();
            let (_, var, _) = stats((0..4).flat_map(|p| out.plane(p).to_vec()));
            vars.push(var);
        }
        // Least-squares regression of variance against signal level.
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
        assert!(slope > 0.0, "slope {slope} not positive");
        assert!(r2 > 0.95, "R^2 {r2} too low");
    }

    #[test]
    fn read_noise_degenerate_scale_is_identity() {
        let raw = BayerRaw::constant(16, 16, 500.0, RawDomain::Adu);
        let mut params = params_with(1.0, 100.0);
        params.sigma_tl = 0.0;
        params.color_bias = [0.0; 4];
        let mut rng = derive_rng(3, &["read", "degenerate"]);
        let out = add_read_noise(&raw, &params, &mut rng).unwrap();
        for p in 0..4 {
            for (a, b) in out.plane(p).iter().zip(raw.plane(p)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn read_noise_bias_shifts_single_plane() {
        let raw = BayerRaw::constant(8, 8, 100.0, RawDomain::Adu);
        let mut params = params_with(1.0, 100.0);
        params.sigma_tl = 0.0;
        params.color_bias = [2.5, 0.0, 0.0, 0.0];
        let mut rng = derive_rng(4, &["read", "bias"]);
        let out = add_read_noise(&raw, &params, &mut rng).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == 102.5));
        for p in 1..4 {
            assert!(out.plane(p).iter().all(|&v| v == 100.0));
        }
    }

    #[test]
    fn read_scale_follows_log_linear_law_in_gain() {
        // Doubling K shifts the median of log sigma_TL by read_slope * ln 2.
        let profile = SensorProfile::builtin();
        let median = |k: f64| -> f64 {
            let mut logs: Vec<f64> = (0..2000)
                .map(|i| {
                    let mut rng = derive_rng(21, &["law", &k.to_string(), &i.to_string()]);
                    NoiseParams::for_gain(k, 150.0, &profile, &mut rng)
                        .sigma_tl
                        .ln()
                })
                .collect();
            logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (logs[999] + logs[1000]) / 2.0
        };
        let shift = median(2.0) - median(1.0);
        let expected = profile.read_slope * 2.0f64.ln();
        assert!(
            (shift - expected).abs() < 0.05 * expected,
            "shift {shift} vs expected {expected}"
        );
    }

    #[test]
    fn row_noise_zero_sigma_is_identity() {
        let raw = BayerRaw::constant(8, 8, 100.0, RawDomain::Adu);
        let mut params = params_with(1.0, 100.0);
        params.sigma_row = 0.0;
        let mut rng = derive_rng(5, &["row", "zero"]);
        let out = add_row_noise(&raw, &params, &mut rng).unwrap();
        assert_eq!(out, raw);
    }

    #[test]
    fn row_noise_is_constant_within_rows() {
        let raw = BayerRaw::constant(16, 12, 100.0, RawDomain::Adu);
        let mut params = params_with(2.0, 100.0);
        params.sigma_row = 3.0;
        let mut rng = derive_rng(6, &["row", "const"]);
        let out = add_row_noise(&raw, &params, &mut rng).unwrap();
        for p in 0..4 {
            for y in 0..12 {
                let row = &out.plane(p)[y * 16..(y + 1) * 16];
                let added: Vec<f64> = row.iter().map(|v| v - 100.0).collect();
                let first = added[0];
                assert!(added.iter().all(|&a| (a - first).abs() < 1e-12));
            }
        }
        // All four planes share the offset of their mosaic row.
        for y in 0..12 {
            let r0 = out.plane(0)[y * 16] - 100.0;
            for p in 1..4 {
                assert!((out.plane(p)[y * 16] - 100.0 - r0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_noise_offset_variance_matches_sigma() {
        let rows = 10_000;
        let raw = BayerRaw::constant(4, rows, 0.0, RawDomain::Adu);
        let mut params = params_with(2.0, 100.0);
        params.sigma_row = 2.5;
        let mut rng = derive_rng(8, &["row", "variance"]);
        let out = add_row_noise(&raw, &params, &mut rng).unwrap();
        let offsets: Vec<f64> = (0..rows).map(|y| out.plane(0)[y * 4]).collect();
        let (_, var, _) = stats(offsets.iter().copied());
        let expect = params.sigma_row * params.sigma_row;
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "row variance {var} vs sigma^2 {expect}"
        );
        // Neighbouring rows must be uncorrelated.
        let mean = offsets.iter().sum::<f64>() / rows as f64;
        let num: f64 = offsets
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum();
        let den: f64 = offsets.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((num / den).abs() < 0.05);
    }

    #[test]
    fn quant_noise_moments_match_uniform() {
        // 4 * 500 * 500 = 1e6 samples of U(-0.5, 0.5).
        let raw = BayerRaw::constant(500, 500, 0.0, RawDomain::Adu);
        let mut rng = derive_rng(9, &["quant", "moments"]);
        let out = add_quant_noise(&raw, &mut rng).unwrap();
        let all = || (0..4).flat_map(|p| out.plane(p).to_vec());
        assert!(all().all(|v| (-0.5..=0.5).contains(&v)));
        let (mean, var, n) = stats(all());
        assert_eq!(n, 1_000_000);
        assert!(mean.abs() < 0.002, "mean {mean}");
        let expect = 1.0 / 12.0;
        assert!(
            (var - expect).abs() < 0.02 * expect,
            "variance {var} vs 1/12"
        );
    }

    #[test]
    fn tukey_quantile_symmetry_and_logistic_limit() {
        for shape in [0.0, 0.15, 0.5, 1.0] {
            for p in [0.1, 0.25, 0.4] {
                let lo = tukey_lambda_quantile(p, shape);
                let hi = tukey_lambda_quantile(1.0 - p, shape);
                assert!(
                    (lo + hi).abs() < 1e-12,
                    "asymmetric at p={p}, shape={shape}"
                );
            }
        }
        // shape=1 reduces to U(-1, 1)'s quantile: 2p - 1.
        assert!((tukey_lambda_quantile(0.75, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inject_with_disabled_components_is_identity() {
        let raw = BayerRaw::constant(16, 16, 0.4, RawDomain::Normalized);
        let camera = CameraParams::neutral(16383);
        let params = NoiseParams::disabled();
        let mut rng = derive_rng(10, &["inject", "identity"]);
        let out = inject_noise(&raw, &camera, &params, &mut rng).unwrap();
        for p in 0..4 {
            for (a, b) in out.plane(p).iter().zip(raw.plane(p)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inject_is_deterministic_and_matches_manual_composition() {
        let raw = BayerRaw::constant(32, 32, 0.25, RawDomain::Normalized);
        let camera = CameraParams::neutral(16383);
        let params = params_with(2.0, 150.0);

        let mut rng1 = derive_rng(42, &["inject", "order"]);
        let out1 = inject_noise(&raw, &camera, &params, &mut rng1).unwrap();
        let mut rng2 = derive_rng(42, &["inject", "order"]);
        let out2 = inject_noise(&raw, &camera, &params, &mut rng2).unwrap();
        assert_eq!(out1, out2);

        let mut rng3 = derive_rng(42, &["inject", "order"]);
        let adu = raw.to_adu(camera.white_level);
        let manual = add_quant_noise(
            &add_row_noise(
                &add_read_noise(
                    &add_shot_noise(&adu, &params, &mut rng3).unwrap(),
                    &params,
                    &mut rng3,
                )
                .unwrap(),
                &params,
                &mut rng3,
            )
            .unwrap(),
            &mut rng3,
        )
        .unwrap()
        .to_normalized(camera.white_level);
        assert_eq!(out1, manual);
    }

    #[test]
    fn inject_output_stays_normalized() {
        let raw = BayerRaw::constant(32, 32, 0.98, RawDomain::Normalized);
        let camera = CameraParams::neutral(1023);
        let params = params_with(6.0, 300.0);
        let mut rng = derive_rng(12, &["inject", "clamp"]);
        let out = inject_noise(&raw, &camera, &params, &mut rng).unwrap();
        for p in 0..4 {
            assert!(out.plane(p).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn diagnostics_decompose_the_composition() {
        let raw = BayerRaw::constant(16, 16, 0.3, RawDomain::Normalized);
        let camera = CameraParams::neutral(16383);
        let params = params_with(1.5, 120.0);
        let mut rng = derive_rng(13, &["inject", "diag"]);
        let (_, real) = inject_noise_with_diagnostics(&raw, &camera, &params, &mut rng).unwrap();
        let clean = raw.to_adu(camera.white_level);
        for p in 0..4 {
            for i in 0..clean.plane(p).len() {
                let sum = clean.plane(p)[i]
                    + real.shot.plane(p)[i]
                    + real.read.plane(p)[i]
                    + real.row.plane(p)[i]
                    + real.quant.plane(p)[i];
                assert!((sum - real.composed.plane(p)[i]).abs() < 1e-9);
            }
        }
        // The row field is constant along each row.
        let w = real.row.width_half();
        for y in 0..real.row.height_half() {
            let row = &real.row.plane(2)[y * w..(y + 1) * w];
            assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn snr_decreases_as_gain_rises() {
        let camera = CameraParams::neutral(16383);
        let raw = BayerRaw::constant(96, 96, 0.3, RawDomain::Normalized);
        let mut last_snr = f64::INFINITY;
        for k in [0.1, 0.5, 1.0, 2.0, 4.0, 6.0] {
            let params = params_with(k, 150.0);
            let mut rng = derive_rng(14, &["snr", &k.to_string()]);
            let out = inject_noise(&raw, &camera, &params, &mut rng).unwrap();
            let (mean, var, _) = stats((0..4).flat_map(|p| out.plane(p).to_vec()));
            let snr = mean / var.sqrt();
            assert!(
                snr < last_snr,
                "SNR did not decrease at K={k}: {snr} >= {last_snr}"
            );
            last_snr = snr;
        }
    }

    #[test]
    fn component_flags_gate_each_operator() {
        let raw = BayerRaw::constant(16, 16, 0.5, RawDomain::Normalized);
        let camera = CameraParams::neutral(16383);
        let mut params = params_with(2.0, 150.0);
        params.components = NoiseComponents {
            shot: false,
            read: false,
            row: false,
            quant: true,
        };
        let mut rng = derive_rng(15, &["flags"]);
        let out = inject_noise(&raw, &camera, &params, &mut rng).unwrap();
        let white = camera.white_level as f64;
        for p in 0..4 {
            for (a, b) in out.plane(p).iter().zip(raw.plane(p)) {
                // Only quantization noise remains: at most 0.5 ADU of change.
                assert!((a - b).abs() <= 0.5 / white + 1e-12);
            }
        }
    }
}
