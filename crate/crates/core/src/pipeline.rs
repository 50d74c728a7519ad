//! Paired-variant degradation ladder: for each source frame and severity
//! level, emit a noise-free EV-drop variant and a physics-motivated noisy
//! variant, deterministically.
//!
//! Output layout: `out/{scene}/{frame}/{level}/{variant}.png` with a sidecar
//! JSON carrying provenance, where variant is `ev` (noise-free) or `noise`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::color::{
    apply_ev_drop, decode_srgb_to_linear, encode_linear_to_srgb, EvDrop, SrgbImage,
};
use crate::error::{Error, Result};
use crate::isp::render;
use crate::noise::inject_noise;
use crate::seed::{derive_rng, derive_seed64};
use crate::unprocess::{
    sample_camera_params_with, unprocess, CameraParams, CcmBank, GainSampling, NoiseParams,
    SamplingConfig, SensorProfile,
};

/// Severity rung of the degradation ladder. L0 is the original image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DegradationLevel {
    L0,
    L1,
    L2,
    L3,
    L4,
    L5,
}

impl DegradationLevel {
    pub const ALL: [DegradationLevel; 6] = [
        DegradationLevel::L0,
        DegradationLevel::L1,
        DegradationLevel::L2,
        DegradationLevel::L3,
        DegradationLevel::L4,
        DegradationLevel::L5,
    ];

    /// The fixed severity ladder: L1..L5 map to 2.0, 4.0, 6.0, 7.5, 9.0 stops.
    pub fn delta_ev(&self) -> f64 {
        match self {
            DegradationLevel::L0 => 0.0,
            DegradationLevel::L1 => 2.0,
            DegradationLevel::L2 => 4.0,
            DegradationLevel::L3 => 6.0,
            DegradationLevel::L4 => 7.5,
            DegradationLevel::L5 => 9.0,
        }
    }

    pub fn index(&self) -> u8 {
        match self {
            DegradationLevel::L0 => 0,
            DegradationLevel::L1 => 1,
            DegradationLevel::L2 => 2,
            DegradationLevel::L3 => 3,
            DegradationLevel::L4 => 4,
            DegradationLevel::L5 => 5,
        }
    }

    /// Quantile of the gain/ratio ranges used in ladder-coupled mode.
    pub fn severity_quantile(&self) -> f64 {
        match self {
            DegradationLevel::L0 => 0.0,
            DegradationLevel::L1 => 0.1,
            DegradationLevel::L2 => 0.3,
            DegradationLevel::L3 => 0.5,
            DegradationLevel::L4 => 0.7,
            DegradationLevel::L5 => 0.9,
        }
    }
}

impl fmt::Display for DegradationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.index())
    }
}

impl FromStr for DegradationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "L0" | "l0" => Ok(DegradationLevel::L0),
            "L1" | "l1" => Ok(DegradationLevel::L1),
            "L2" | "l2" => Ok(DegradationLevel::L2),
            "L3" | "l3" => Ok(DegradationLevel::L3),
            "L4" | "l4" => Ok(DegradationLevel::L4),
            "L5" | "l5" => Ok(DegradationLevel::L5),
            other => Err(Error::Config(format!(
                "unknown degradation level {other:?}"
            ))),
        }
    }
}

/// Exposure drop for a ladder rung.
pub fn level_to_ev(level: DegradationLevel) -> EvDrop {
    EvDrop::new(level.delta_ev()).expect("ladder deltas are non-negative")
}

/// Parses a level spec: comma-separated labels and `..` ranges,
/// e.g. `"L1,L5"` or `"L1..L5"` or `"L0,L2..L4"`.
pub fn parse_levels(spec: &str) -> Result<Vec<DegradationLevel>> {
    let mut set = BTreeSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: DegradationLevel = lo.parse()?;
            let hi: DegradationLevel = hi.parse()?;
            if lo > hi {
                return Err(Error::Config(format!("inverted level range {part:?}")));
            }
            for l in DegradationLevel::ALL {
                if l >= lo && l <= hi {
                    set.insert(l);
                }
            }
        } else {
            set.insert(part.parse()?);
        }
    }
    if set.is_empty() {
        return Err(Error::Config("level spec selects no levels".into()));
    }
    Ok(set.into_iter().collect())
}

/// One keyframe's asset paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub scene: String,
    pub frame: String,
    pub rgb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overseg: Option<PathBuf>,
}

impl FrameEntry {
    fn asset_paths(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.rgb)
            .chain(self.depth.as_ref())
            .chain(self.semantic.as_ref())
            .chain(self.overseg.as_ref())
    }
}

/// The list of frames a run operates on, loaded from JSON Lines
/// (one frame object per line).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: FrameEntry = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            // Paths are relative to the manifest file.
            for p in [&mut entry.rgb]
                .into_iter()
                .chain(entry.depth.as_mut())
                .chain(entry.semantic.as_mut())
                .chain(entry.overseg.as_mut())
            {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
            frames.push(entry);
        }
        let manifest = DatasetManifest { frames };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for frame in &self.frames {
            out.push_str(&serde_json::to_string(frame)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Frame ids must be unique within a scene and every referenced asset
    /// must exist.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for frame in &self.frames {
            if !seen.insert((frame.scene.clone(), frame.frame.clone())) {
                return Err(Error::Manifest(format!(
                    "duplicate frame {}/{}",
                    frame.scene, frame.frame
                )));
            }
            for p in frame.asset_paths() {
                if !p.exists() {
                    return Err(Error::Manifest(format!(
                        "{}/{}: asset {} does not exist",
                        frame.scene,
                        frame.frame,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything the synthesis of one pair depends on besides the image itself.
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub global_seed: u64,
    pub sampling: SamplingConfig,
    pub profile: SensorProfile,
    pub bank: CcmBank,
    /// Couple noise severity to the ladder rung via fixed quantiles of the
    /// gain and ISO-ratio ranges instead of free sampling.
    pub ladder_coupled: bool,
}

impl SynthesisOptions {
    pub fn new(global_seed: u64) -> Self {
        SynthesisOptions {
            global_seed,
            sampling: SamplingConfig::default(),
            profile: SensorProfile::builtin(),
            bank: CcmBank::builtin(),
            ladder_coupled: false,
        }
    }
}

/// Provenance recorded in each sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub scene: String,
    pub frame: String,
    pub level: String,
    pub variant: String,
    pub delta_ev: f64,
    pub global_seed: u64,
    pub profile: String,
    pub ladder_coupled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSummary>,
}

/// The sampled parameters that shaped a noisy variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSummary {
    pub wb_gain_red: f64,
    pub wb_gain_blue: f64,
    pub brightness_gain: f64,
    pub white_level: u32,
    pub system_gain_k: f64,
    pub iso_ratio_r: f64,
    pub sigma_tl: f64,
    pub sigma_row: f64,
}

impl CameraSummary {
    fn new(camera: &CameraParams, noise: &NoiseParams) -> Self {
        CameraSummary {
            wb_gain_red: camera.wb_gain_red,
            wb_gain_blue: camera.wb_gain_blue,
            brightness_gain: camera.brightness_gain,
            white_level: camera.white_level,
            system_gain_k: noise.system_gain_k,
            iso_ratio_r: noise.iso_ratio_r,
            sigma_tl: noise.sigma_tl,
            sigma_row: noise.sigma_row,
        }
    }
}

/// Both variants for one (frame, level) plus their provenance.
#[derive(Debug, Clone)]
pub struct SynthesizedPair {
    pub noise_free: SrgbImage,
    pub noisy: SrgbImage,
    pub delta_ev: f64,
    pub param_seed: Option<u64>,
    pub camera: Option<CameraSummary>,
}

/// Seed for the camera/noise parameter draw of one (frame, level).
pub fn param_seed(global_seed: u64, scene: &str, frame: &str, level: DegradationLevel) -> u64 {
    derive_seed64(global_seed, &[scene, frame, &level.to_string()])
}

/// Synthesizes the paired variants for one frame at one ladder rung.
///
/// Both variants share the same exposure drop. L0 returns the original image
/// twice. The noisy variant's parameters and random stream derive from
/// `(global_seed, scene, frame, level)`, so output is reproducible regardless
/// of scheduling.
pub fn synthesize_pair(
    img: &SrgbImage,
    level: DegradationLevel,
    scene: &str,
    frame: &str,
    opts: &SynthesisOptions,
) -> Result<SynthesizedPair> {
    if level == DegradationLevel::L0 {
        return Ok(SynthesizedPair {
            noise_free: img.clone(),
            noisy: img.clone(),
            delta_ev: 0.0,
            param_seed: None,
            camera: None,
        });
    }

    let ev = level_to_ev(level);

    let noise_free = encode_linear_to_srgb(&apply_ev_drop(&decode_srgb_to_linear(img), ev));

    let seed = param_seed(opts.global_seed, scene, frame, level);
    let gain_sampling = if opts.ladder_coupled {
        GainSampling::Quantile(level.severity_quantile())
    } else {
        GainSampling::Free
    };
    let (camera, noise) = sample_camera_params_with(
        seed,
        &opts.sampling,
        &opts.bank,
        &opts.profile,
        gain_sampling,
    )?;

    let raw = unprocess(img, &camera)?;
    let mut rng = derive_rng(
        opts.global_seed,
        &[scene, frame, &level.to_string(), "noise"],
    );
    let noisy_raw = inject_noise(&raw, &camera, &noise, &mut rng)?;
    let noisy = render(&noisy_raw, &camera, ev)?;

    Ok(SynthesizedPair {
        noise_free,
        noisy,
        delta_ev: ev.stops(),
        param_seed: Some(seed),
        camera: Some(CameraSummary::new(&camera, &noise)),
    })
}

/// One frame's failure inside a batch run.
#[derive(Debug, Clone, Serialize)]
pub struct FrameFailure {
    pub scene: String,
    pub frame: String,
    pub level: String,
    pub message: String,
}

/// Outcome summary of a batch run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub images_written: usize,
    pub failures: Vec<FrameFailure>,
    pub wall_ms: u128,
}

/// Processes every (frame, level) pair in the manifest, writing both variants
/// and their sidecars under `out_dir`. Individual frame failures are recorded
/// and the run continues; an unwritable output directory aborts.
pub fn process_dataset(
    manifest: &DatasetManifest,
    levels: &[DegradationLevel],
    out_dir: impl AsRef<Path>,
    opts: &SynthesisOptions,
    jobs: usize,
) -> Result<RunReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let start = Instant::now();
    let tasks: Vec<(&FrameEntry, DegradationLevel)> = manifest
        .frames
        .iter()
        .flat_map(|f| levels.iter().map(move |&l| (f, l)))
        .collect();

    let written = std::sync::atomic::AtomicUsize::new(0);
    let failures: Mutex<Vec<FrameFailure>> = Mutex::new(Vec::new());

    let run_task = |(entry, level): &(&FrameEntry, DegradationLevel)| match process_one(
        entry, *level, out_dir, opts,
    ) {
        Ok(count) => {
            written.fetch_add(count, std::sync::atomic::Ordering::Relaxed);
        }
        Err(e) => failures.lock().unwrap().push(FrameFailure {
            scene: entry.scene.clone(),
            frame: entry.frame.clone(),
            level: level.to_string(),
            message: e.to_string(),
        }),
    };

    if jobs == 1 {
        tasks.iter().for_each(run_task);
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks.par_iter().for_each(run_task);
        });
    }

    let mut failures = failures.into_inner().unwrap();
    failures.sort_by(|a, b| (&a.scene, &a.frame, &a.level).cmp(&(&b.scene, &b.frame, &b.level)));
    Ok(RunReport {
        images_written: written.into_inner(),
        failures,
        wall_ms: start.elapsed().as_millis(),
    })
}

fn process_one(
    entry: &FrameEntry,
    level: DegradationLevel,
    out_dir: &Path,
    opts: &SynthesisOptions,
) -> Result<usize> {
    let img = SrgbImage::read_png(&entry.rgb)?;
    let pair = synthesize_pair(&img, level, &entry.scene, &entry.frame, opts)?;

    let dir = out_dir
        .join(&entry.scene)
        .join(&entry.frame)
        .join(level.to_string());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    for (variant, image) in [("ev", &pair.noise_free), ("noise", &pair.noisy)] {
        image.write_png(dir.join(format!("{variant}.png")))?;
        let sidecar = Sidecar {
            scene: entry.scene.clone(),
            frame: entry.frame.clone(),
            level: level.to_string(),
            variant: variant.to_string(),
            delta_ev: pair.delta_ev,
            global_seed: opts.global_seed,
            profile: opts.profile.name.clone(),
            ladder_coupled: opts.ladder_coupled,
            param_seed: if variant == "noise" {
                pair.param_seed.map(|s| format!("{s:016x}"))
            } else {
                None
            },
            camera: if variant == "noise" {
                pair.camera.clone()
            } else {
                None
            },
        };
        let sidecar_path = dir.join(format!("{variant}.json"));
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))?;
    }
    Ok(2)
}
