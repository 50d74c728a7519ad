//! Stage 1 of QA generation: per-frame segment statistics.
//!
//! A frame is the quadruple (RGB, depth, semantic, over-segmentation). For
//! every over-segment intersected with a semantic class we compute an
//! attribute vector: class, mean linear-RGB color, depth median, area and
//! bounding box. Statistics can be cached to disk so Stage 2 reruns without
//! touching the rasters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::{decode_scalar, SrgbImage};
use crate::error::{Error, Result};
use crate::pipeline::FrameEntry;
use crate::qa::tables::ClassTable;
use crate::qa::QaConfig;

/// Metric depth raster in meters; 0 marks invalid measurements.
/// File form: 16-bit grayscale PNG in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension("depth raster size mismatch".into()));
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Domain(
                "depth must be finite and non-negative".into(),
            ));
        }
        Ok(DepthMap {
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

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let gray = img.to_luma16();
        let data = gray.as_raw().iter().map(|&mm| mm as f64 / 1000.0).collect();
        DepthMap::new(gray.width() as usize, gray.height() as usize, data)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mm: Vec<u16> = self
            .data
            .iter()
            .map(|&m| (m * 1000.0).round().clamp(0.0, 65535.0) as u16)
            .collect();
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, mm)
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::image(path, e))
    }
}

/// 16-bit id raster (semantic class ids or over-segment ids).
#[derive(Debug, Clone, PartialEq)]
pub struct IdMap {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl IdMap {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension("id raster size mismatch".into()));
        }
        Ok(IdMap {
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

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let gray = img.to_luma16();
        IdMap::new(
            gray.width() as usize,
            gray.height() as usize,
            gray.as_raw().clone(),
        )
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::image(path, e))
    }
}

/// One keyframe's aligned rasters.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub scene: String,
    pub frame: String,
    pub rgb: SrgbImage,
    pub depth: DepthMap,
    pub semantic: IdMap,
    pub overseg: IdMap,
}

impl FrameBundle {
    /// Loads all four rasters named by a manifest entry; depth, semantic and
    /// over-segmentation paths are required here.
    pub fn load(entry: &FrameEntry) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone().ok_or_else(|| {
                Error::Structural(format!(
                    "{}/{}: manifest entry lacks a {what} raster",
                    entry.scene, entry.frame
                ))
            })
        };
        let bundle = FrameBundle {
            scene: entry.scene.clone(),
            frame: entry.frame.clone(),
            rgb: SrgbImage::read_png(&entry.rgb)?,
            depth: DepthMap::read_png(need(&entry.depth, "depth")?)?,
            semantic: IdMap::read_png(need(&entry.semantic, "semantic")?)?,
            overseg: IdMap::read_png(need(&entry.overseg, "over-segmentation")?)?,
        };
        bundle.check_aligned()?;
        Ok(bundle)
    }

    pub fn check_aligned(&self) -> Result<()> {
        let (w, h) = (self.rgb.width(), self.rgb.height());
        let ok = self.depth.width() == w
            && self.depth.height() == h
            && self.semantic.width() == w
            && self.semantic.height() == h
            && self.overseg.width() == w
            && self.overseg.height() == h;
        if !ok {
            return Err(Error::Structural(format!(
                "{}/{}: rasters do not share dimensions",
                self.scene, self.frame
            )));
        }
        Ok(())
    }
}

/// Pixel-space bounding box, inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Bbox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Attribute vector for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttributes {
    pub segment_id: u16,
    pub class_id: u16,
    pub class_name: String,
    /// Mean color over the mask in linear RGB.
    pub mean_color: [f64; 3],
    /// Median over valid depth pixels (meters). Present only when the valid
    /// fraction reaches the configured threshold.
    pub depth_median: Option<f64>,
    pub depth_valid_fraction: f64,
    pub area_px: usize,
    pub area_fraction: f64,
    pub bbox: Bbox,
}

/// Version tag of the cached statistics schema.
pub const STATS_VERSION: u32 = 1;

/// Stage-1 output for one frame: every segment's attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStatistics {
    pub version: u32,
    pub scene: String,
    pub frame: String,
    pub width: usize,
    pub height: usize,
    /// Ordered by segment id.
    pub segments: Vec<SegmentAttributes>,
}

impl FrameStatistics {
    pub fn cache_path(cache_dir: &Path, scene: &str, frame: &str) -> std::path::PathBuf {
        cache_dir.join(scene).join(format!("{frame}.stats.json"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a cached statistics file; `None` when it is absent or carries a
    /// different schema version.
    pub fn load_cached(path: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: FrameStatistics = serde_json::from_str(&text)?;
        if stats.version != STATS_VERSION {
            return Ok(None);
        }
        Ok(Some(stats))
    }
}

struct Accumulator {
    count: usize,
    color_sum: [f64; 3],
    class_counts: BTreeMap<u16, usize>,
    depths: Vec<f64>,
    bbox: Bbox,
}

/// Computes one `SegmentAttributes` per distinct over-segment id (id 0 marks
/// unsegmented pixels) whose majority semantic class is in the catalog.
/// Output is ordered by segment id.
pub fn extract_segment_stats(
    bundle: &FrameBundle,
    classes: &ClassTable,
    cfg: &QaConfig,
) -> Result<FrameStatistics> {
    bundle.check_aligned()?;
    let (w, h) = (bundle.rgb.width(), bundle.rgb.height());
    let total_px = (w * h) as f64;

    let mut acc: BTreeMap<u16, Accumulator> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let seg = bundle.overseg.data()[idx];
            if seg == 0 {
                continue;
            }
            let entry = acc.entry(seg).or_insert_with(|| Accumulator {
                count: 0,
                color_sum: [0.0; 3],
                class_counts: BTreeMap::new(),
                depths: Vec::new(),
                bbox: Bbox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
            });
            entry.count += 1;
            let px = bundle.rgb.pixel(x, y);
            for (sum, v) in entry.color_sum.iter_mut().zip(px) {
                *sum += decode_scalar(v);
            }
            *entry
                .class_counts
                .entry(bundle.semantic.data()[idx])
                .or_insert(0) += 1;
            let d = bundle.depth.data()[idx];
            if d > 0.0 {
                entry.depths.push(d);
            }
            entry.bbox.x0 = entry.bbox.x0.min(x);
            entry.bbox.y0 = entry.bbox.y0.min(y);
            entry.bbox.x1 = entry.bbox.x1.max(x);
            entry.bbox.y1 = entry.bbox.y1.max(y);
        }
    }

    let mut segments = Vec::new();
    for (segment_id, mut a) in acc {
        // Majority semantic class; ties break toward the smaller id.
        let (&class_id, _) = a
            .class_counts
            .iter()
            .max_by_key(|(id, count)| (**count, std::cmp::Reverse(**id)))
            .expect("segment has at least one pixel");
        let Some(class) = classes.get(class_id) else {
            continue; // unlabeled or unknown class: not a segment of interest
        };
        let valid = a.depths.len();
        let depth_valid_fraction = valid as f64 / a.count as f64;
        let depth_median = if valid > 0 && depth_valid_fraction >= cfg.depth_valid_fraction_min {
            a.depths.sort_by(|x, y| x.partial_cmp(y).unwrap());
            Some(if valid % 2 == 1 {
                a.depths[valid / 2]
            } else {
                (a.depths[valid / 2 - 1] + a.depths[valid / 2]) / 2.0
            })
        } else {
            None
        };
        segments.push(SegmentAttributes {
            segment_id,
            class_id,
            class_name: class.name.clone(),
            mean_color: std::array::from_fn(|c| a.color_sum[c] / a.count as f64),
            depth_median,
            depth_valid_fraction,
            area_px: a.count,
            area_fraction: a.count as f64 / total_px,
            bbox: a.bbox,
        });
    }

    Ok(FrameStatistics {
        version: STATS_VERSION,
        scene: bundle.scene.clone(),
        frame: bundle.frame.clone(),
        width: w,
        height: h,
        segments,
    })
}
