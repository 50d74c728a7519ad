//! Synthetic frame bundles with known geometry.
//!
//! Fixtures back the statistical self-test suite, the acceptance checks and
//! the benchmarks: every attribute (class, color, depth, area) is chosen by
//! construction, so expected statistics and QA answers are known analytically.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::color::SrgbImage;
use crate::error::{Error, Result};
use crate::pipeline::{DatasetManifest, FrameEntry};
use crate::qa::stats::{DepthMap, FrameBundle, IdMap};
use crate::qa::tables::QaTables;

/// One painted rectangle: a single object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureObject {
    /// Semantic class name (must exist in the class table).
    pub class: String,
    /// Palette color name the rectangle is painted with.
    pub color: String,
    /// Constant metric depth; 0.0 paints invalid depth.
    pub depth_m: f64,
    /// (x, y, width, height) in pixels.
    pub rect: (usize, usize, usize, usize),
}

/// A fully specified synthetic frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFrame {
    pub scene: String,
    pub frame: String,
    pub width: usize,
    pub height: usize,
    /// Depth painted outside any object.
    pub background_depth: f64,
    pub objects: Vec<FixtureObject>,
}

/// Renders the four rasters for a fixture frame. The background is a wall at
/// `background_depth` with over-segment id 0 (unsegmented); object `i` gets
/// over-segment id `i + 1`.
pub fn build_bundle(spec: &FixtureFrame, tables: &QaTables) -> Result<FrameBundle> {
    let (w, h) = (spec.width, spec.height);
    let wall = tables
        .classes
        .by_name("wall")
        .ok_or_else(|| Error::Config("class table lacks a wall class".into()))?
        .id;

    let mut rgb = vec![0u8; w * h * 3];
    for v in rgb.iter_mut() {
        *v = 96; // neutral backdrop
    }
    let mut depth = vec![spec.background_depth; w * h];
    let mut semantic = vec![wall; w * h];
    let mut overseg = vec![0u16; w * h];

    for (i, obj) in spec.objects.iter().enumerate() {
        let class = tables
            .classes
            .by_name(&obj.class)
            .ok_or_else(|| Error::Config(format!("unknown fixture class {:?}", obj.class)))?;
        let srgb = tables
            .palette
            .srgb_of(&obj.color)
            .ok_or_else(|| Error::Config(format!("unknown fixture color {:?}", obj.color)))?;
        let (x0, y0, ow, oh) = obj.rect;
        if x0 + ow > w || y0 + oh > h {
            return Err(Error::Config(format!(
                "fixture object {:?} exceeds the frame",
                obj.class
            )));
        }
        for y in y0..y0 + oh {
            for x in x0..x0 + ow {
                let idx = y * w + x;
                for c in 0..3 {
                    rgb[idx * 3 + c] = srgb[c];
                }
                depth[idx] = obj.depth_m;
                semantic[idx] = class.id;
                overseg[idx] = (i + 1) as u16;
            }
        }
    }

    Ok(FrameBundle {
        scene: spec.scene.clone(),
        frame: spec.frame.clone(),
        rgb: SrgbImage::from_u8(w, h, &rgb)?,
        depth: DepthMap::new(w, h, depth)?,
        semantic: IdMap::new(w, h, semantic)?,
        overseg: IdMap::new(w, h, overseg)?,
    })
}

/// The six room recipes the corpus cycles through: (room, three classes).
pub const CORPUS_RECIPES: [(&str, [&str; 3]); 6] = [
    ("bedroom", ["bed", "cabinet", "lamp"]),
    ("bathroom", ["toilet", "sink", "towel"]),
    ("kitchen", ["refrigerator", "oven", "sink"]),
    ("dining room", ["table", "chair", "stool"]),
    ("living room", ["sofa", "tv", "cushion"]),
    ("office", ["desk", "shelf", "lamp"]),
];

/// Palette names used for painting, in rotation order.
const CORPUS_COLORS: [&str; 11] = [
    "red", "green", "blue", "yellow", "orange", "purple", "pink", "brown", "black", "white", "gray",
];

/// Deterministic corpus of `n` frames with known geometry. Every frame
/// satisfies all five family preconditions: three unique-class, non-flat
/// objects above the area filter, top-two depth gap of 0.8 m, and a
/// classifiable room — so expected QA counts are exactly `5 * n`.
pub fn corpus_frames(n: usize) -> Vec<FixtureFrame> {
    let rects = [(8, 8, 36, 28), (64, 8, 36, 28), (120, 74, 36, 28)];
    (0..n)
        .map(|i| {
            let (_, classes) = CORPUS_RECIPES[i % CORPUS_RECIPES.len()];
            let base_depth = 1.0 + 0.15 * (i % 4) as f64;
            let objects = classes
                .iter()
                .enumerate()
                .map(|(j, class)| FixtureObject {
                    class: (*class).into(),
                    color: CORPUS_COLORS[(i + 3 * j) % CORPUS_COLORS.len()].into(),
                    depth_m: match j {
                        0 => base_depth,
                        1 => base_depth + 0.8,
                        _ => base_depth + 1.7,
                    },
                    rect: rects[j],
                })
                .collect();
            FixtureFrame {
                scene: format!("s{:02}", i / 5),
                frame: format!("f{i:03}"),
                width: 160,
                height: 120,
                background_depth: 5.0,
                objects,
            }
        })
        .collect()
}

/// Writes a fixture corpus as PNG rasters and returns its manifest.
pub fn write_corpus(
    frames: &[FixtureFrame],
    tables: &QaTables,
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for spec in frames {
        let bundle = build_bundle(spec, tables)?;
        let scene_dir = dir.join(&spec.scene);
        std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
        let base = scene_dir.join(&spec.frame);
        let rgb = base.with_extension("rgb.png");
        let depth = base.with_extension("depth.png");
        let semantic = base.with_extension("sem.png");
        let overseg = base.with_extension("over.png");
        bundle.rgb.write_png(&rgb)?;
        bundle.depth.write_png(&depth)?;
        bundle.semantic.write_png(&semantic)?;
        bundle.overseg.write_png(&overseg)?;
        entries.push(FrameEntry {
            scene: spec.scene.clone(),
            frame: spec.frame.clone(),
            rgb,
            depth: Some(depth),
            semantic: Some(semantic),
            overseg: Some(overseg),
        });
    }
    Ok(DatasetManifest { frames: entries })
}

/// Smooth per-channel gradients: the reference content for round-trip PSNR.
pub fn gradient_image(width: usize, height: usize) -> SrgbImage {
    let mut data = vec![0.0; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / (width - 1).max(1) as f64;
            let fy = y as f64 / (height - 1).max(1) as f64;
            let i = (y * width + x) * 3;
            data[i] = 0.15 + 0.7 * fx;
            data[i + 1] = 0.2 + 0.6 * fy;
            data[i + 2] = 0.25 + 0.5 * (fx + fy) / 2.0;
        }
    }
    SrgbImage::new(width, height, data).expect("valid gradient")
}

/// Procedural mid-tone test image: smooth blobs over a gradient with a few
/// hard edges and mild texture. Stands in for natural photos in self-tests.
pub fn testcard_image(width: usize, height: usize, seed: u64) -> SrgbImage {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x7e57_cafd);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.25),
                [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ],
            )
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.1..0.7),
                rng.random_range(0.1..0.7),
                rng.random_range(0.08..0.2),
                rng.random_range(0.08..0.2),
                rng.random_range(-0.25..0.25),
            )
        })
        .collect();

    let mut data = vec![0.0; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / (width - 1).max(1) as f64;
            let fy = y as f64 / (height - 1).max(1) as f64;
            let mut px = [0.45 + 0.25 * fx, 0.5 - 0.2 * fy, 0.4 + 0.15 * (fx - fy)];
            for (bx, by, radius, tint) in &blobs {
                let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                let fall = (-d2 / (2.0 * radius * radius)).exp();
                for c in 0..3 {
                    px[c] += tint[c] * fall;
                }
            }
            for (rx, ry, rw, rh, delta) in &rects {
                if fx >= *rx && fx < rx + rw && fy >= *ry && fy < ry + rh {
                    for v in px.iter_mut() {
                        *v += delta;
                    }
                }
            }
            // Mild deterministic texture.
            let t = 0.015 * ((x as f64 * 12.9898 + y as f64 * 78.233).sin());
            let i = (y * width + x) * 3;
            for c in 0..3 {
                data[i + c] = (px[c] + t).clamp(0.12, 1.0);
            }
        }
    }
    SrgbImage::new(width, height, data).expect("valid testcard")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::generate::classify_room;
    use crate::qa::stats::extract_segment_stats;
    use crate::qa::QaConfig;

    #[test]
    fn corpus_rooms_match_their_recipes() {
        let tables = QaTables::builtin();
        let cfg = QaConfig::default();
        for (i, spec) in corpus_frames(12).iter().enumerate() {
            let bundle = build_bundle(spec, &tables).unwrap();
            let stats = extract_segment_stats(&bundle, &tables.classes, &cfg).unwrap();
            let expect = CORPUS_RECIPES[i % 6].0;
            assert_eq!(classify_room(&stats, &tables), expect, "frame {i}");
        }
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let tables = QaTables::builtin();
        let dir = tempfile::tempdir().unwrap();
        let frames = corpus_frames(3);
        let manifest = write_corpus(&frames, &tables, dir.path()).unwrap();
        manifest.validate().unwrap();
        assert_eq!(manifest.frames.len(), 3);
        let bundle = FrameBundle::load(&manifest.frames[0]).unwrap();
        let direct = build_bundle(&frames[0], &tables).unwrap();
        assert_eq!(bundle.rgb, direct.rgb);
        assert_eq!(bundle.depth, direct.depth);
        assert_eq!(bundle.semantic, direct.semantic);
        assert_eq!(bundle.overseg, direct.overseg);
    }

    #[test]
    fn testcard_is_mid_tone_and_even_sized() {
        let img = testcard_image(96, 64, 3);
        assert!(img.data().iter().all(|&v| (0.12..=1.0).contains(&v)));
        let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
        assert!(mean > 0.3 && mean < 0.75, "testcard mean {mean}");
    }
}
