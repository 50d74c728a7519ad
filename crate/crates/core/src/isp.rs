//! Simplified forward ISP: (noisy) RAW mosaic to 8-bit sRGB.
//!
//! Steps, in order: white-balance gains, bilinear demosaicing from RGGB to
//! full-resolution RGB, camera-to-RGB color correction, exposure drop in
//! linear space, gamma compression, and clamping/quantization to 8 bits.

use crate::color::{encode_scalar, quantize_u8, EvDrop, SrgbImage};
use crate::error::Result;
use crate::unprocess::{BayerRaw, CameraParams, RawDomain};

/// Mirror-reflect an out-of-range coordinate back into `[0, len)`.
#[inline]
fn mirror(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * len - 2 - i;
    }
    i as usize
}

/// Bilinear demosaic of an RGGB mosaic into full-resolution RGB
/// (camera-space, interleaved). Edges are handled by mirror padding.
pub fn demosaic_bilinear(raw: &BayerRaw) -> Vec<f64> {
    let (wh, hh) = (raw.width_half(), raw.height_half());
    let (w, h) = (wh * 2, hh * 2);

    // Full-resolution CFA with the plane value at each site.
    let cfa = |x: isize, y: isize| -> f64 {
        let x = mirror(x, w);
        let y = mirror(y, h);
        let plane = match (y % 2, x % 2) {
            (0, 0) => 0,
            (0, 1) => 1,
            (1, 0) => 2,
            _ => 3,
        };
        raw.site(plane, x / 2, y / 2)
    };

    let mut rgb = vec![0.0; w * h * 3];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let cross = (cfa(x - 1, y) + cfa(x + 1, y) + cfa(x, y - 1) + cfa(x, y + 1)) / 4.0;
            let diag =
                (cfa(x - 1, y - 1) + cfa(x + 1, y - 1) + cfa(x - 1, y + 1) + cfa(x + 1, y + 1))
                    / 4.0;
            let horiz = (cfa(x - 1, y) + cfa(x + 1, y)) / 2.0;
            let vert = (cfa(x, y - 1) + cfa(x, y + 1)) / 2.0;
            let here = cfa(x, y);

            let (r, g, b) = match (y % 2, x % 2) {
                // Red site: green from the 4-neighbour cross, blue from diagonals.
                (0, 0) => (here, cross, diag),
                // Green site on a red row: red left/right, blue above/below.
                (0, 1) => (horiz, here, vert),
                // Green site on a blue row: red above/below, blue left/right.
                (1, 0) => (vert, here, horiz),
                // Blue site.
                _ => (diag, cross, here),
            };
            let i = (y as usize * w + x as usize) * 3;
            rgb[i] = r;
            rgb[i + 1] = g;
            rgb[i + 2] = b;
        }
    }
    rgb
}

/// Renders a normalized RGGB mosaic to an 8-bit-quantized sRGB image.
///
/// Output dimensions are twice the mosaic planes. Values are quantized with
/// round-half-away-from-zero; the returned image holds exact multiples of
/// 1/255.
pub fn render(raw: &BayerRaw, camera: &CameraParams, drop: EvDrop) -> Result<SrgbImage> {
    let normalized;
    let raw = if raw.domain() == RawDomain::Adu {
        normalized = raw.to_normalized(camera.white_level);
        &normalized
    } else {
        raw
    };

    // (i) white balance and brightness gains
    let mut balanced = raw.clone();
    let gains = [
        camera.wb_gain_red * camera.brightness_gain,
        camera.brightness_gain,
        camera.brightness_gain,
        camera.wb_gain_blue * camera.brightness_gain,
    ];
    for (p, g) in gains.iter().enumerate() {
        for v in balanced.plane_mut(p) {
            *v *= g;
        }
    }

    // (ii) bilinear demosaic
    let mut rgb = demosaic_bilinear(&balanced);

    // (iii) color correction, (iv) exposure drop, (v) gamma, (vi) quantize
    let scale = drop.scale();
    let mut bytes = Vec::with_capacity(rgb.len());
    for px in rgb.chunks_exact_mut(3) {
        let corrected = camera.ccm_cam_to_rgb.mul_vec([px[0], px[1], px[2]]);
        for c in corrected {
            bytes.push(quantize_u8(encode_scalar(c * scale)));
        }
    }

    SrgbImage::from_u8(raw.width_half() * 2, raw.height_half() * 2, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{apply_ev_drop, decode_srgb_to_linear, encode_linear_to_srgb};
    use crate::unprocess::unprocess;

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

    #[test]
    fn constant_mosaic_renders_constant_white() {
        let raw = BayerRaw::constant(4, 4, 1.0, RawDomain::Normalized);
        let out = render(
            &raw,
            &CameraParams::neutral(16383),
            EvDrop::new(0.0).unwrap(),
        )
        .unwrap();
        assert!(out.to_u8().iter().all(|&b| b == 255));
    }

    #[test]
    fn ev_drop_values_match_scalar_pipeline_oracle() {
        // Unit mosaic with dEV=2: linear 0.25, so round(0.25^(1/2.2)*255).
        // The high-precision oracle gives 135.7927..., which quantizes to 136.
        let raw = BayerRaw::constant(4, 4, 1.0, RawDomain::Normalized);
        let params = CameraParams::neutral(16383);
        let out = render(&raw, &params, EvDrop::new(2.0).unwrap()).unwrap();
        assert!(out.to_u8().iter().all(|&b| b == 136));

        // dEV=9: linear 2^-9, oracle value 14.9642..., quantizes to 15.
        let out = render(&raw, &params, EvDrop::new(9.0).unwrap()).unwrap();
        assert!(out.to_u8().iter().all(|&b| b == 15));
    }

    #[test]
    fn demosaic_of_constant_mosaic_is_constant() {
        let raw = BayerRaw::constant(5, 3, 0.37, RawDomain::Normalized);
        let rgb = demosaic_bilinear(&raw);
        assert_eq!(rgb.len(), 10 * 6 * 3);
        assert!(rgb.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn rendered_mean_scales_with_ev_drop() {
        // Mid-tone gradient; mean linear intensity of the render must scale
        // by 2^-dEV within 2% (quantization-limited).
        let (w, h) = (64, 64);
        let mut data = vec![0.0; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let v = 0.3 + 0.6 * (x as f64 / (w - 1) as f64) * (y as f64 / (h - 1) as f64);
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = v;
                }
            }
        }
        let img = SrgbImage::new(w, h, data).unwrap();
        let params = CameraParams::neutral(16383);
        let raw = unprocess(&img, &params).unwrap();

        let base = render(&raw, &params, EvDrop::new(0.0).unwrap()).unwrap();
        let base_mean = decode_srgb_to_linear(&base).mean();
        for ev in [1.0, 2.0, 4.0] {
            let dropped = render(&raw, &params, EvDrop::new(ev).unwrap()).unwrap();
            let mean = decode_srgb_to_linear(&dropped).mean();
            let expect = base_mean * (-ev).exp2();
            assert!(
                (mean - expect).abs() < 0.02 * expect,
                "dEV={ev}: mean {mean} vs expected {expect}"
            );
        }
    }

    #[test]
    fn round_trip_on_smooth_gradient_exceeds_40db() {
        let (w, h) = (64, 48);
        let mut data = vec![0.0; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 / (w - 1) as f64;
                let fy = y as f64 / (h - 1) as f64;
                data[(y * w + x) * 3] = 0.15 + 0.7 * fx;
                data[(y * w + x) * 3 + 1] = 0.2 + 0.6 * fy;
                data[(y * w + x) * 3 + 2] = 0.25 + 0.5 * (fx + fy) / 2.0;
            }
        }
        let img = SrgbImage::new(w, h, data).unwrap();
        let params = CameraParams::neutral(16383);
        let raw = unprocess(&img, &params).unwrap();
        let back = render(&raw, &params, EvDrop::new(0.0).unwrap()).unwrap();
        let p = psnr(&img, &back);
        assert!(p >= 40.0, "PSNR {p} below 40 dB");
    }

    #[test]
    fn noise_free_branch_and_isp_agree_on_ev_scale() {
        // The two branches share the same dEV by construction; their decoded
        // mean intensities must agree closely on a neutral configuration.
        let (w, h) = (32, 32);
        let data: Vec<f64> = (0..w * h * 3)
            .map(|i| 0.2 + 0.6 * ((i % 89) as f64 / 88.0))
            .collect();
        let img = SrgbImage::new(w, h, data).unwrap();
        let params = CameraParams::neutral(16383);
        let ev = EvDrop::new(3.0).unwrap();

        let noise_free = encode_linear_to_srgb(&apply_ev_drop(&decode_srgb_to_linear(&img), ev));
        let rendered = render(&unprocess(&img, &params).unwrap(), &params, ev).unwrap();

        let a = decode_srgb_to_linear(&noise_free).mean();
        let b = decode_srgb_to_linear(&rendered).mean();
        assert!((a - b).abs() < 0.03 * a, "branches diverge: {a} vs {b}");
    }
}
