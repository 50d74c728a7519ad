//! Gamma decode/encode between sRGB and linear RGB, plus exposure-value
//! scaling — the noise-free branch of the synthesis pipeline.
//!
//! The transfer function is a pure 2.2 power law, not the piecewise official
//! sRGB curve. Decoding floors inputs at `EPSILON` for numerical stability;
//! encoding does not. All processing is `f64`; 8-bit quantization happens only
//! at file boundaries and uses round-half-away-from-zero on `value * 255`.

use std::path::Path;

use crate::error::{Error, Result};

/// Gamma exponent of the power-law transfer function.
pub const GAMMA: f64 = 2.2;

/// Stability floor applied before gamma expansion.
pub const EPSILON: f64 = 1e-8;

/// An sRGB-encoded RGB frame with per-channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, `height * width * 3` values.
    data: Vec<f64>,
}

/// A scene-linear RGB frame; values are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// An exposure reduction in stops; scales linear intensity by `2^-delta_ev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvDrop {
    delta_ev: f64,
}

impl EvDrop {
    pub fn new(delta_ev: f64) -> Result<Self> {
        if !delta_ev.is_finite() || delta_ev < 0.0 {
            return Err(Error::Domain(format!(
                "EV drop must be a non-negative finite number of stops, got {delta_ev}"
            )));
        }
        Ok(EvDrop { delta_ev })
    }

    pub fn stops(&self) -> f64 {
        self.delta_ev
    }

    /// The linear-intensity scale factor `2^-delta_ev`.
    pub fn scale(&self) -> f64 {
        (-self.delta_ev).exp2()
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

impl SrgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for {width}x{height}x3, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("sRGB values must lie in [0, 1]".into()));
        }
        Ok(SrgbImage {
            width,
            height,
            data,
        })
    }

    /// Builds from 8-bit samples; values become exact multiples of 1/255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_dims(width, height)?;
        if bytes.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "expected {} bytes for {width}x{height}x3, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(SrgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// RGB triple at `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Quantizes to 8 bits (round half away from zero on `value * 255`).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let rgb = img.to_rgb8();
        SrgbImage::from_u8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_u8())
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::image(path, e))
    }
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for {width}x{height}x3, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(
                "linear values must be finite and non-negative".into(),
            ));
        }
        Ok(LinearImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// `(max(x, 1e-8))^2.2` on a single sample.
#[inline]
pub fn decode_scalar(x: f64) -> f64 {
    x.max(EPSILON).powf(GAMMA)
}

/// `x^(1/2.2)` on a single non-negative sample.
#[inline]
pub fn encode_scalar(x: f64) -> f64 {
    x.max(0.0).powf(1.0 / GAMMA)
}

/// Round-half-away-from-zero quantization of a `[0, 1]` value to 8 bits.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Gamma expansion of an sRGB frame into scene-linear RGB.
pub fn decode_srgb_to_linear(img: &SrgbImage) -> LinearImage {
    LinearImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| decode_scalar(v)).collect(),
    }
}

/// Gamma compression of a linear frame back to sRGB. Inputs are clamped to
/// `[0, 1]` first.
pub fn encode_linear_to_srgb(img: &LinearImage) -> SrgbImage {
    SrgbImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&v| encode_scalar(v.min(1.0)))
            .collect(),
    }
}

/// Scales every sample by `2^-delta_ev`.
pub fn apply_ev_drop(img: &LinearImage, drop: EvDrop) -> LinearImage {
    let scale = drop.scale();
    LinearImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v * scale).collect(),
    }
}
