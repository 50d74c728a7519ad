//! ISP inversion: turn an sRGB image into a camera-linear RGGB Bayer mosaic.
//!
//! The operator applies, in order: inverse tone mapping, gamma expansion,
//! RGB-to-camera color correction, inversion of white-balance/brightness gains
//! with highlight preservation, and RGGB mosaic extraction at half resolution.
//! Camera and noise parameters are sampled deterministically from a seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::color::{decode_scalar, SrgbImage};
use crate::error::{Error, Result};

/// Row-major 3x3 matrix acting on RGB column vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    #[inline]
    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn matmul(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn row_sums(&self) -> [f64; 3] {
        [
            self.0[0].iter().sum(),
            self.0[1].iter().sum(),
            self.0[2].iter().sum(),
        ]
    }

    /// Normalizes each row to sum to 1.
    pub fn row_normalized(&self) -> Result<Mat3> {
        let sums = self.row_sums();
        if sums.iter().any(|s| s.abs() < 1e-12) {
            return Err(Error::Domain("matrix row sums to zero".into()));
        }
        let mut out = self.0;
        for (row, s) in out.iter_mut().zip(sums) {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(Mat3(out))
    }

    /// Inverse via the adjugate; errors on singular matrices.
    pub fn inverse(&self) -> Result<Mat3> {
        let m = &self.0;
        let cof = |r1: usize, r2: usize, c1: usize, c2: usize| {
            m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
        };
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if det.abs() < 1e-12 {
            return Err(Error::Domain("matrix is singular".into()));
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = adj[i][j] / det;
            }
        }
        Ok(Mat3(out))
    }
}

/// Which value domain a mosaic currently lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawDomain {
    /// Values in `[0, 1]`.
    Normalized,
    /// Values in `[0, white_level]` sensor counts.
    Adu,
}

/// Plane order of the RGGB mosaic.
pub const PLANE_NAMES: [&str; 4] = ["R", "G1", "G2", "B"];

/// A half-resolution 4-plane RGGB mosaic (planes R, G1, G2, B).
#[derive(Debug, Clone, PartialEq)]
pub struct BayerRaw {
    width_half: usize,
    height_half: usize,
    planes: [Vec<f64>; 4],
    domain: RawDomain,
}

impl BayerRaw {
    pub fn new(
        width_half: usize,
        height_half: usize,
        planes: [Vec<f64>; 4],
        domain: RawDomain,
    ) -> Result<Self> {
        if width_half == 0 || height_half == 0 {
            return Err(Error::Dimension("mosaic planes must be non-empty".into()));
        }
        let n = width_half * height_half;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::Dimension(format!(
                "each plane must hold {n} values for a {width_half}x{height_half} mosaic"
            )));
        }
        Ok(BayerRaw {
            width_half,
            height_half,
            planes,
            domain,
        })
    }

    /// Constant mosaic, useful in tests and calibration sweeps.
    pub fn constant(width_half: usize, height_half: usize, value: f64, domain: RawDomain) -> Self {
        let n = width_half * height_half;
        BayerRaw {
            width_half,
            height_half,
            planes: std::array::from_fn(|_| vec![value; n]),
            domain,
        }
    }

    pub fn width_half(&self) -> usize {
        self.width_half
    }

    pub fn height_half(&self) -> usize {
        self.height_half
    }

    pub fn domain(&self) -> RawDomain {
        self.domain
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        &self.planes[i]
    }

    pub fn plane_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.planes[i]
    }

    #[inline]
    pub fn site(&self, plane: usize, x: usize, y: usize) -> f64 {
        self.planes[plane][y * self.width_half + x]
    }

    /// Converts `[0,1]` values to sensor counts.
    pub fn to_adu(&self, white_level: u32) -> BayerRaw {
        assert_eq!(self.domain, RawDomain::Normalized, "mosaic already in ADU");
        let w = white_level as f64;
        BayerRaw {
            width_half: self.width_half,
            height_half: self.height_half,
            planes: std::array::from_fn(|i| self.planes[i].iter().map(|&v| v * w).collect()),
            domain: RawDomain::Adu,
        }
    }

    /// Clamps to `[0, white_level]` and converts back to `[0,1]`.
    pub fn to_normalized(&self, white_level: u32) -> BayerRaw {
        assert_eq!(self.domain, RawDomain::Adu, "mosaic already normalized");
        let w = white_level as f64;
        BayerRaw {
            width_half: self.width_half,
            height_half: self.height_half,
            planes: std::array::from_fn(|i| {
                self.planes[i]
                    .iter()
                    .map(|&v| v.clamp(0.0, w) / w)
                    .collect()
            }),
            domain: RawDomain::Normalized,
        }
    }
}

/// Inverse tone-mapping choice applied as step (i) of unprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneMapping {
    /// Inverse of the smoothstep curve: `x -> 0.5 - sin(asin(1 - 2x) / 3)`.
    Smoothstep,
    /// No tone-mapping inversion.
    Off,
}

/// How gain inversion behaves near saturated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HighlightPolicy {
    /// Blend the inverse gain toward 1 as pixel intensity approaches 1.
    /// `inflection` is where the blend starts (0.9 in the reference scheme).
    Smooth { inflection: f64 },
    /// Apply the inverse gain everywhere.
    Plain,
}

impl Default for HighlightPolicy {
    fn default() -> Self {
        HighlightPolicy::Smooth { inflection: 0.9 }
    }
}

/// Sampled ISP parameters for one synthesis draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub ccm_rgb_to_cam: Mat3,
    pub ccm_cam_to_rgb: Mat3,
    pub wb_gain_red: f64,
    pub wb_gain_blue: f64,
    pub brightness_gain: f64,
    pub white_level: u32,
    pub tone_map: ToneMapping,
    pub highlight: HighlightPolicy,
    /// Identifier of the sampling draw this set came from.
    pub seed_tag: String,
}

impl CameraParams {
    /// Identity CCM, unit gains: the neutral configuration used by round-trip
    /// checks and calibration.
    pub fn neutral(white_level: u32) -> Self {
        CameraParams {
            ccm_rgb_to_cam: Mat3::IDENTITY,
            ccm_cam_to_rgb: Mat3::IDENTITY,
            wb_gain_red: 1.0,
            wb_gain_blue: 1.0,
            brightness_gain: 1.0,
            white_level,
            tone_map: ToneMapping::Off,
            highlight: HighlightPolicy::Plain,
            seed_tag: "neutral".into(),
        }
    }
}

/// Which of the four noise operators are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseComponents {
    pub shot: bool,
    pub read: bool,
    pub row: bool,
    pub quant: bool,
}

impl NoiseComponents {
    pub const ALL: NoiseComponents = NoiseComponents {
        shot: true,
        read: true,
        row: true,
        quant: true,
    };
    pub const NONE: NoiseComponents = NoiseComponents {
        shot: false,
        read: false,
        row: false,
        quant: false,
    };
}

impl Default for NoiseComponents {
    fn default() -> Self {
        NoiseComponents::ALL
    }
}

/// Sampled noise-model parameters for one synthesis draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// System gain K (ADU per photoelectron).
    pub system_gain_k: f64,
    /// ISO amplification ratio r used by the shot-noise operator.
    pub iso_ratio_r: f64,
    /// Realized Tukey-lambda read-noise scale (ADU).
    pub sigma_tl: f64,
    /// Realized row-noise standard deviation (ADU).
    pub sigma_row: f64,
    pub read_slope: f64,
    pub read_intercept: f64,
    pub read_residual_sigma: f64,
    pub row_slope: f64,
    pub row_intercept: f64,
    pub row_residual_sigma: f64,
    /// Shape parameter of the Tukey-lambda read-noise law.
    pub tukey_lambda_shape: f64,
    /// Per-plane DC offset in ADU, (R, G1, G2, B).
    pub color_bias: [f64; 4],
    #[serde(default)]
    pub components: NoiseComponents,
}

impl NoiseParams {
    /// Derives the realized noise scales for a given system gain using the
    /// profile's log-linear laws, `log sigma = slope * log K + intercept + eps`
    /// with `eps ~ N(0, residual_sigma)`.
    pub fn for_gain(
        system_gain_k: f64,
        iso_ratio_r: f64,
        profile: &SensorProfile,
        rng: &mut impl Rng,
    ) -> Self {
        let ln_k = system_gain_k.ln();
        let eps_read = gaussian(rng, profile.read_residual_sigma);
        let eps_row = gaussian(rng, profile.row_residual_sigma);
        let sigma_tl = (profile.read_slope * ln_k + profile.read_intercept + eps_read).exp();
        let sigma_row = (profile.row_slope * ln_k + profile.row_intercept + eps_row).exp();
        NoiseParams {
            system_gain_k,
            iso_ratio_r,
            sigma_tl,
            sigma_row,
            read_slope: profile.read_slope,
            read_intercept: profile.read_intercept,
            read_residual_sigma: profile.read_residual_sigma,
            row_slope: profile.row_slope,
            row_intercept: profile.row_intercept,
            row_residual_sigma: profile.row_residual_sigma,
            tukey_lambda_shape: profile.tukey_lambda_shape,
            color_bias: profile.color_bias,
            components: NoiseComponents::ALL,
        }
    }

    /// Degenerate parameters: every component disabled, zero scales.
    pub fn disabled() -> Self {
        NoiseParams {
            system_gain_k: 1.0,
            iso_ratio_r: 100.0,
            sigma_tl: 0.0,
            sigma_row: 0.0,
            read_slope: 0.0,
            read_intercept: 0.0,
            read_residual_sigma: 0.0,
            row_slope: 0.0,
            row_intercept: 0.0,
            row_residual_sigma: 0.0,
            tukey_lambda_shape: 0.15,
            color_bias: [0.0; 4],
            components: NoiseComponents::NONE,
        }
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

/// Calibrated sensor characteristics loaded from a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub name: String,
    pub read_slope: f64,
    pub read_intercept: f64,
    pub read_residual_sigma: f64,
    pub row_slope: f64,
    pub row_intercept: f64,
    pub row_residual_sigma: f64,
    pub tukey_lambda_shape: f64,
    /// Per-plane DC offset in ADU, (R, G1, G2, B).
    pub color_bias: [f64; 4],
    pub white_level: u32,
}

/// Built-in profile for a generic 14-bit sensor.
pub const DEFAULT_PROFILE_TOML: &str = include_str!("../data/sensor_synth14.toml");

impl SensorProfile {
    pub fn builtin() -> Self {
        toml::from_str(DEFAULT_PROFILE_TOML).expect("built-in profile parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("sensor profile {}: {e}", path.display())))
    }
}

/// Bank of fixed RGB-to-camera color matrices; draws are random convex
/// combinations of the bank entries, row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmBank {
    matrices: Vec<Mat3>,
}

/// Built-in bank: four camera colorimetries composed with the sRGB-to-XYZ
/// primaries, stored row-major, 9 values per line.
pub const DEFAULT_CCM_BANK: &str = include_str!("../data/ccm_bank.txt");

impl CcmBank {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CCM_BANK).expect("built-in bank parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("ccm bank {}: {e}", path.display())))
    }

    /// Parses a plain-text bank: one matrix per non-comment line, 9 numbers
    /// row-major.
    pub fn parse(text: &str) -> Result<Self> {
        let mut matrices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 9 {
                return Err(Error::Config(format!(
                    "line {}: expected 9 values per matrix, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            matrices.push(Mat3([
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5]],
                [vals[6], vals[7], vals[8]],
            ]));
        }
        if matrices.is_empty() {
            return Err(Error::Config("ccm bank holds no matrices".into()));
        }
        Ok(CcmBank { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Random convex combination of the bank, row-normalized.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Mat3> {
        let weights: Vec<f64> = (0..self.matrices.len())
            .map(|_| rng.random_range(0.0..1.0f64).max(1e-9))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut combined = [[0.0; 3]; 3];
        for (m, w) in self.matrices.iter().zip(&weights) {
            for (row, m_row) in combined.iter_mut().zip(&m.0) {
                for (cell, v) in row.iter_mut().zip(m_row) {
                    *cell += v * w / total;
                }
            }
        }
        Mat3(combined).row_normalized()
    }
}

/// Ranges driving `sample_camera_params`. Gain and ISO-ratio ranges follow
/// the noise model; the rest are unprocessing defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// System gain K is drawn log-uniformly from this range.
    pub gain_range: (f64, f64),
    /// ISO amplification ratio r is drawn uniformly from this range.
    pub iso_ratio_range: (f64, f64),
    pub wb_red_range: (f64, f64),
    pub wb_blue_range: (f64, f64),
    pub brightness_mean: f64,
    pub brightness_sigma: f64,
    pub brightness_clip: (f64, f64),
    pub white_level: u32,
    pub tone_map: ToneMapping,
    pub highlight: HighlightPolicy,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            gain_range: (0.1, 6.0),
            iso_ratio_range: (100.0, 300.0),
            wb_red_range: (1.9, 2.4),
            wb_blue_range: (1.5, 1.9),
            brightness_mean: 0.8,
            brightness_sigma: 0.1,
            brightness_clip: (0.5, 1.1),
            white_level: 16383,
            tone_map: ToneMapping::Smoothstep,
            highlight: HighlightPolicy::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("gain_range", self.gain_range),
            ("iso_ratio_range", self.iso_ratio_range),
            ("wb_red_range", self.wb_red_range),
            ("wb_blue_range", self.wb_blue_range),
            ("brightness_clip", self.brightness_clip),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::Config(format!(
                    "{name} is inverted: min {lo} > max {hi}"
                )));
            }
        }
        if self.gain_range.0 <= 0.0 {
            return Err(Error::Config("gain_range must be positive".into()));
        }
        if self.white_level == 0 {
            return Err(Error::Config("white_level must be positive".into()));
        }
        Ok(())
    }
}

/// Optionally pins the gain/ratio draw to fixed quantiles of their ranges
/// (used by the ladder-coupled severity mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainSampling {
    Free,
    Quantile(f64),
}

fn log_uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    (lo + rng.random_range(0.0..1.0f64) * (hi - lo)).exp()
}

fn uniform_in(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        return range.0;
    }
    rng.random_range(range.0..range.1)
}

/// Samples one (CameraParams, NoiseParams) draw. The same seed always yields
/// a bitwise-identical draw.
pub fn sample_camera_params(
    seed: u64,
    config: &SamplingConfig,
    bank: &CcmBank,
    profile: &SensorProfile,
) -> Result<(CameraParams, NoiseParams)> {
    sample_camera_params_with(seed, config, bank, profile, GainSampling::Free)
}

/// As [`sample_camera_params`], with control over how K and r are drawn.
pub fn sample_camera_params_with(
    seed: u64,
    config: &SamplingConfig,
    bank: &CcmBank,
    profile: &SensorProfile,
    gain_sampling: GainSampling,
) -> Result<(CameraParams, NoiseParams)> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let ccm_rgb_to_cam = bank.sample(&mut rng)?;
    let ccm_cam_to_rgb = ccm_rgb_to_cam.inverse()?;

    let wb_gain_red = uniform_in(&mut rng, config.wb_red_range);
    let wb_gain_blue = uniform_in(&mut rng, config.wb_blue_range);
    let brightness_gain = gaussian_clipped(
        &mut rng,
        config.brightness_mean,
        config.brightness_sigma,
        config.brightness_clip,
    );

    let (system_gain_k, iso_ratio_r) = match gain_sampling {
        GainSampling::Free => (
            log_uniform(&mut rng, config.gain_range),
            uniform_in(&mut rng, config.iso_ratio_range),
        ),
        GainSampling::Quantile(q) => {
            let q = q.clamp(0.0, 1.0);
            let (lo, hi) = (config.gain_range.0.ln(), config.gain_range.1.ln());
            let k = (lo + q * (hi - lo)).exp();
            let r = config.iso_ratio_range.0
                + q * (config.iso_ratio_range.1 - config.iso_ratio_range.0);
            (k, r)
        }
    };

    let noise = NoiseParams::for_gain(system_gain_k, iso_ratio_r, profile, &mut rng);

    let mut seed_tag = String::with_capacity(16);
    write!(seed_tag, "{seed:016x}").unwrap();

    let camera = CameraParams {
        ccm_rgb_to_cam,
        ccm_cam_to_rgb,
        wb_gain_red,
        wb_gain_blue,
        brightness_gain,
        white_level: config.white_level,
        tone_map: config.tone_map,
        highlight: config.highlight,
        seed_tag,
    };
    Ok((camera, noise))
}

fn gaussian_clipped(rng: &mut impl Rng, mean: f64, sigma: f64, clip: (f64, f64)) -> f64 {
    let v = if sigma > 0.0 {
        Normal::new(mean, sigma).expect("valid sigma").sample(rng)
    } else {
        mean
    };
    v.clamp(clip.0, clip.1)
}

/// Inverse of the smoothstep tone curve `3x^2 - 2x^3`.
#[inline]
pub fn inverse_smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - ((1.0 - 2.0 * x).asin() / 3.0).sin()
}

/// Inverts the ISP: sRGB image to camera-linear RGGB mosaic in `[0, 1]`.
///
/// Requires even dimensions; the mosaic planes are exactly half-resolution.
pub fn unprocess(img: &SrgbImage, params: &CameraParams) -> Result<BayerRaw> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!(
            "unprocessing requires even dimensions, got {w}x{h}"
        )));
    }

    // Inverse gains; the division by gains is carried out as multiplication.
    let inv = [
        1.0 / (params.wb_gain_red * params.brightness_gain),
        1.0 / params.brightness_gain,
        1.0 / (params.wb_gain_blue * params.brightness_gain),
    ];

    let (wh, hh) = (w / 2, h / 2);
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; wh * hh]);

    for y in 0..h {
        for x in 0..w {
            let mut px = img.pixel(x, y);
            // (i) inverse tone mapping
            if params.tone_map == ToneMapping::Smoothstep {
                for v in px.iter_mut() {
                    *v = inverse_smoothstep(*v);
                }
            }
            // (ii) gamma expansion
            for v in px.iter_mut() {
                *v = decode_scalar(*v);
            }
            // (iii) RGB -> camera color correction
            let mut cam = params.ccm_rgb_to_cam.mul_vec(px);
            // (iv) gain inversion with highlight preservation
            match params.highlight {
                HighlightPolicy::Smooth { inflection } => {
                    let gray = (cam[0] + cam[1] + cam[2]) / 3.0;
                    let t = ((gray - inflection).max(0.0) / (1.0 - inflection)).powi(2);
                    for (v, &g) in cam.iter_mut().zip(&inv) {
                        let safe = (t + (1.0 - t) * g).max(g);
                        *v = (*v * safe).clamp(0.0, 1.0);
                    }
                }
                HighlightPolicy::Plain => {
                    for (v, &g) in cam.iter_mut().zip(&inv) {
                        *v = (*v * g).clamp(0.0, 1.0);
                    }
                }
            }
            // (v) RGGB mosaic extraction
            let (sx, sy) = (x / 2, y / 2);
            let idx = sy * wh + sx;
            match (y % 2, x % 2) {
                (0, 0) => planes[0][idx] = cam[0],
                (0, 1) => planes[1][idx] = cam[1],
                (1, 0) => planes[2][idx] = cam[1],
                (1, 1) => planes[3][idx] = cam[2],
                _ => unreachable!(),
            }
        }
    }

    BayerRaw::new(wh, hh, planes, RawDomain::Normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_parses_and_row_normalizes() {
        let bank = CcmBank::builtin();
        assert_eq!(bank.len(), 4);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m = bank.sample(&mut rng).unwrap();
        for s in m.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_rejects_malformed_lines() {
        assert!(CcmBank::parse("1 2 3").is_err());
        assert!(CcmBank::parse("# only a comment\n").is_err());
        assert!(CcmBank::parse("a b c d e f g h i").is_err());
    }

    #[test]
    fn mat3_inverse_round_trip() {
        let m = Mat3([[0.8, 0.15, 0.05], [0.1, 0.85, 0.05], [0.05, 0.2, 0.75]]);
        let inv = m.inverse().unwrap();
        let prod = inv.matmul(&m);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod.0[i][j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let config = SamplingConfig::default();
        let bank = CcmBank::builtin();
        let profile = SensorProfile::builtin();
        let a = sample_camera_params(99, &config, &bank, &profile).unwrap();
        let b = sample_camera_params(99, &config, &bank, &profile).unwrap();
        assert_eq!(a, b);
        let c = sample_camera_params(100, &config, &bank, &profile).unwrap();
        assert_ne!(a.0.seed_tag, c.0.seed_tag);
    }

    #[test]
    fn sampled_draws_stay_in_ranges() {
        let config = SamplingConfig::default();
        let bank = CcmBank::builtin();
        let profile = SensorProfile::builtin();
        for seed in 0..200 {
            let (cam, noise) = sample_camera_params(seed, &config, &bank, &profile).unwrap();
            assert!((0.1..=6.0).contains(&noise.system_gain_k));
            assert!((100.0..=300.0).contains(&noise.iso_ratio_r));
            assert!(noise.sigma_tl > 0.0);
            assert!(noise.sigma_row > 0.0);
            assert!((1.9..=2.4).contains(&cam.wb_gain_red));
            assert!((1.5..=1.9).contains(&cam.wb_gain_blue));
            assert!(cam.brightness_gain > 0.0);
            for s in cam.ccm_rgb_to_cam.row_sums() {
                assert!((s - 1.0).abs() < 1e-6);
            }
            let prod = cam.ccm_cam_to_rgb.matmul(&cam.ccm_rgb_to_cam);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((prod.0[i][j] - expect).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn inverted_range_is_a_config_error() {
        let config = SamplingConfig {
            wb_red_range: (2.4, 1.9),
            ..SamplingConfig::default()
        };
        let bank = CcmBank::builtin();
        let profile = SensorProfile::builtin();
        assert!(matches!(
            sample_camera_params(1, &config, &bank, &profile),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_gain_draw_matches_uniform_cdf() {
        // Kolmogorov-Smirnov statistic of log K over 10,000 draws against the
        // uniform CDF on [ln 0.1, ln 6.0].
        let config = SamplingConfig::default();
        let bank = CcmBank::builtin();
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
            let emp_hi = (i + 1) as f64 / n;
            let emp_lo = i as f64 / n;
            ks = ks.max((cdf - emp_lo).abs()).max((emp_hi - cdf).abs());
        }
        assert!(ks < 0.02, "KS statistic {ks} too large");
    }

    #[test]
    fn unprocess_shape_and_sites() {
        // 4x4 identity-params image: planes are 2x2, R plane samples
        // even-row/even-column sites.
        let mut data = vec![0.0; 4 * 4 * 3];
        for y in 0..4 {
            for x in 0..4 {
                let v = (y * 4 + x) as f64 / 20.0;
                for c in 0..3 {
                    data[(y * 4 + x) * 3 + c] = v;
                }
            }
        }
        let img = SrgbImage::new(4, 4, data).unwrap();
        let raw = unprocess(&img, &CameraParams::neutral(16383)).unwrap();
        assert_eq!(raw.width_half(), 2);
        assert_eq!(raw.height_half(), 2);
        for sy in 0..2 {
            for sx in 0..2 {
                let expect = decode_scalar(img.pixel(2 * sx, 2 * sy)[0]);
                assert!((raw.site(0, sx, sy) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unprocess_rejects_odd_dimensions() {
        let img = SrgbImage::new(3, 4, vec![0.5; 36]).unwrap();
        assert!(matches!(
            unprocess(&img, &CameraParams::neutral(16383)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn unprocess_constant_white_is_fixed_point() {
        let img = SrgbImage::new(4, 4, vec![1.0; 48]).unwrap();
        let mut params = CameraParams::neutral(16383);
        params.tone_map = ToneMapping::Smoothstep;
        let raw = unprocess(&img, &params).unwrap();
        for p in 0..4 {
            for &v in raw.plane(p) {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unprocess_constant_gray_matches_scalar_oracle() {
        // Composition of inverse smoothstep and gamma expansion at 0.5,
        // evaluated with a high-precision arithmetic oracle.
        let img = SrgbImage::new(2, 2, vec![0.5; 12]).unwrap();
        let mut params = CameraParams::neutral(16383);
        params.tone_map = ToneMapping::Smoothstep;
        let raw = unprocess(&img, &params).unwrap();
        for p in 0..4 {
            assert!((raw.site(p, 0, 0) - 0.21763764082403103).abs() < 1e-12);
        }

        // A second point away from the fixed line: 0.25.
        let img = SrgbImage::new(2, 2, vec![0.25; 12]).unwrap();
        let raw = unprocess(&img, &params).unwrap();
        assert!((raw.site(0, 0, 0) - 0.08513522588535943).abs() < 1e-12);
    }

    #[test]
    fn inverse_smoothstep_inverts_forward_curve() {
        for i in 0..=100 {
            let y = i as f64 / 100.0;
            let x = inverse_smoothstep(y);
            let fwd = 3.0 * x * x - 2.0 * x * x * x;
            assert!((fwd - y).abs() < 1e-12);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn highlights_never_exceed_one(
                seed in 0u64..10_000,
                wr in 0.2f64..5.0,
                wb in 0.2f64..5.0,
                bg in 0.2f64..3.0,
                v in 0.0f64..=1.0,
            ) {
                let mut params = CameraParams::neutral(16383);
                params.wb_gain_red = wr;
                params.wb_gain_blue = wb;
                params.brightness_gain = bg;
                params.highlight = HighlightPolicy::Smooth { inflection: 0.9 };
                params.tone_map = ToneMapping::Smoothstep;
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let mut data = vec![0.0; 4 * 4 * 3];
                for d in data.iter_mut() {
                    *d = (v * rng.random_range(0.0..=1.0f64)).min(1.0);
                }
                let img = SrgbImage::new(4, 4, data).unwrap();
                let raw = unprocess(&img, &params).unwrap();
                for p in 0..4 {
                    for &s in raw.plane(p) {
                        prop_assert!((0.0..=1.0).contains(&s));
                    }
                }
            }

            #[test]
            fn mosaic_sites_form_a_bijection(w in 1usize..6, h in 1usize..6) {
                // Reassembling the 4 planes must reproduce every pixel's
                // camera-linear value exactly once.
                let (w, h) = (w * 2, h * 2);
                let mut data = vec![0.0; w * h * 3];
                for (i, d) in data.iter_mut().enumerate() {
                    *d = (i % 97) as f64 / 97.0;
                }
                let img = SrgbImage::new(w, h, data).unwrap();
                let params = CameraParams::neutral(16383);
                let raw = unprocess(&img, &params).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        let (plane, channel) = match (y % 2, x % 2) {
                            (0, 0) => (0, 0),
                            (0, 1) => (1, 1),
                            (1, 0) => (2, 1),
                            _ => (3, 2),
                        };
                        let expect = decode_scalar(img.pixel(x, y)[channel]);
                        prop_assert!((raw.site(plane, x / 2, y / 2) - expect).abs() < 1e-15);
                    }
                }
            }
        }
    }
}
