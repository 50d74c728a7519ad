//! Stage 2 of QA generation: room classification, family survey, and the
//! per-family question rules.
//!
//! Every emitted pair has a fixed small choice set and a single answer that
//! is recomputable from the frame statistics alone (`verify_pair`). Random
//! draws only ever choose *what to ask about* (an activity, a class, choice
//! order); the answer is always determined by the statistics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::DatasetManifest;
use crate::qa::stats::{extract_segment_stats, FrameBundle, FrameStatistics, SegmentAttributes};
use crate::qa::tables::QaTables;
use crate::qa::QaConfig;
use crate::seed::derive_rng;

/// The five question families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RoomType,
    RoomAffordance,
    ObjectRecognition,
    ObjectAttributeColor,
    ClosestObject,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::RoomType,
        Family::RoomAffordance,
        Family::ObjectRecognition,
        Family::ObjectAttributeColor,
        Family::ClosestObject,
    ];

    pub fn index(&self) -> u8 {
        match self {
            Family::RoomType => 1,
            Family::RoomAffordance => 2,
            Family::ObjectRecognition => 3,
            Family::ObjectAttributeColor => 4,
            Family::ClosestObject => 5,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Family::RoomType => "room_type",
            Family::RoomAffordance => "room_affordance",
            Family::ObjectRecognition => "object_recognition",
            Family::ObjectAttributeColor => "object_attribute_color",
            Family::ClosestObject => "closest_object",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Rule id plus the inputs that shaped a question, for audit and
/// self-verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rule: String,
    /// What the question asks about (activity, class name, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_gap_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_area_fraction: Option<f64>,
}

/// One multiple-choice question with its verified ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub scene: String,
    pub frame: String,
    pub family: Family,
    pub question: String,
    /// 2 to 6 unique choices.
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub trace: Trace,
}

impl QaPair {
    pub fn answer(&self) -> &str {
        &self.choices[self.answer_index]
    }

    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.scene, self.frame, self.family)
    }

    fn check(&self) -> Result<()> {
        if self.choices.len() < 2 || self.choices.len() > 6 {
            return Err(Error::Structural(format!(
                "{}: choice count {} outside 2..=6",
                self.key(),
                self.choices.len()
            )));
        }
        let unique: BTreeSet<&String> = self.choices.iter().collect();
        if unique.len() != self.choices.len() {
            return Err(Error::Structural(format!(
                "{}: duplicate choices",
                self.key()
            )));
        }
        if self.answer_index >= self.choices.len() {
            return Err(Error::Structural(format!(
                "{}: answer index out of range",
                self.key()
            )));
        }
        Ok(())
    }
}

/// Label used when no room rule scores the frame.
pub const UNKNOWN_ROOM: &str = "unknown";

/// Highest-scoring room under the rule table; ties break toward the room
/// earlier in the table's priority order. No scored room yields
/// [`UNKNOWN_ROOM`], which disables the room-dependent families.
pub fn classify_room(stats: &FrameStatistics, tables: &QaTables) -> String {
    let present: BTreeSet<&str> = stats
        .segments
        .iter()
        .map(|s| s.class_name.as_str())
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (i, room) in tables.rooms.rooms.iter().enumerate() {
        let score: f64 = room
            .scores
            .iter()
            .filter(|(class, _)| present.contains(class.as_str()))
            .map(|(_, s)| s)
            .sum();
        if score > 0.0 && best.is_none_or(|(b, _)| score > b) {
            best = Some((score, i));
        }
    }
    best.map(|(_, i)| tables.rooms.rooms[i].name.clone())
        .unwrap_or_else(|| UNKNOWN_ROOM.to_string())
}

/// Non-structural classes that pass the tiny-object area filter.
fn recognizable_classes(
    stats: &FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
) -> BTreeSet<String> {
    stats
        .segments
        .iter()
        .filter(|s| {
            s.area_fraction >= cfg.min_area_fraction
                && tables
                    .classes
                    .get(s.class_id)
                    .is_some_and(|c| !c.structural)
        })
        .map(|s| s.class_name.clone())
        .collect()
}

/// Classes present in the frame at any size.
fn present_classes(stats: &FrameStatistics) -> BTreeSet<String> {
    stats
        .segments
        .iter()
        .map(|s| s.class_name.clone())
        .collect()
}

/// Segments eligible for the color question: unique class in the frame,
/// non-structural, above the area filter, and unambiguously nameable.
/// Ordered by area (largest first), then segment id.
fn color_candidates<'a>(
    stats: &'a FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
) -> Vec<&'a SegmentAttributes> {
    let mut class_counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for s in &stats.segments {
        *class_counts.entry(s.class_name.as_str()).or_insert(0) += 1;
    }
    let mut candidates: Vec<&SegmentAttributes> = stats
        .segments
        .iter()
        .filter(|s| {
            class_counts[s.class_name.as_str()] == 1
                && s.area_fraction >= cfg.min_area_fraction
                && tables
                    .classes
                    .get(s.class_id)
                    .is_some_and(|c| !c.structural)
                && tables
                    .palette
                    .name_color(s.mean_color, cfg.color_ambiguity_ratio)
                    .is_some()
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.area_px
            .cmp(&a.area_px)
            .then(a.segment_id.cmp(&b.segment_id))
    });
    candidates
}

/// Object instances valid for depth ranking: non-structural, non-quasi-2D,
/// above the area filter, with a usable depth median. Sorted nearest-first;
/// depth ties break toward the smaller segment id.
fn valid_depth_objects<'a>(
    stats: &'a FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
) -> Vec<&'a SegmentAttributes> {
    let mut objs: Vec<&SegmentAttributes> = stats
        .segments
        .iter()
        .filter(|s| {
            s.depth_median.is_some()
                && s.area_fraction >= cfg.min_area_fraction
                && tables
                    .classes
                    .get(s.class_id)
                    .is_some_and(|c| !c.structural && !c.flat)
        })
        .collect();
    objs.sort_by(|a, b| {
        a.depth_median
            .partial_cmp(&b.depth_median)
            .unwrap()
            .then(a.segment_id.cmp(&b.segment_id))
    });
    objs
}

/// The closest-object rule's validation: at least two valid instances, a
/// depth gap between the top two exceeding the threshold, and at least two
/// distinct classes to choose from. Returns the answer class and the choice
/// classes in closeness order.
fn closest_candidate(
    stats: &FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
) -> Option<(String, Vec<String>)> {
    let objs = valid_depth_objects(stats, tables, cfg);
    if objs.len() < 2 {
        return None;
    }
    let gap = objs[1].depth_median.unwrap() - objs[0].depth_median.unwrap();
    if gap <= cfg.depth_gap_m {
        return None;
    }
    let mut classes = Vec::new();
    for o in &objs {
        if !classes.contains(&o.class_name) {
            classes.push(o.class_name.clone());
        }
    }
    if classes.len() < 2 {
        return None;
    }
    classes.truncate(6);
    Some((objs[0].class_name.clone(), classes))
}

/// Family k is viable iff its rule's preconditions hold for this frame.
pub fn survey_viable_families(
    stats: &FrameStatistics,
    room: &str,
    tables: &QaTables,
    cfg: &QaConfig,
) -> BTreeSet<Family> {
    let mut viable = BTreeSet::new();
    if room != UNKNOWN_ROOM {
        viable.insert(Family::RoomType);
        if !tables.affordances.entries.is_empty() {
            viable.insert(Family::RoomAffordance);
        }
    }
    if !recognizable_classes(stats, tables, cfg).is_empty() {
        viable.insert(Family::ObjectRecognition);
    }
    if !color_candidates(stats, tables, cfg).is_empty() {
        viable.insert(Family::ObjectAttributeColor);
    }
    if closest_candidate(stats, tables, cfg).is_some() {
        viable.insert(Family::ClosestObject);
    }
    viable
}

/// Seeded choice-order shuffle; the answer's position carries no signal.
fn shuffled_choices(
    mut choices: Vec<String>,
    answer: &str,
    global_seed: u64,
    scene: &str,
    frame: &str,
    family: Family,
) -> (Vec<String>, usize) {
    let mut rng = derive_rng(
        global_seed,
        &[
            scene,
            frame,
            &format!("family{}", family.index()),
            "shuffle",
        ],
    );
    choices.shuffle(&mut rng);
    let answer_index = choices
        .iter()
        .position(|c| c == answer)
        .expect("answer in choices");
    (choices, answer_index)
}

fn family_rng(
    global_seed: u64,
    scene: &str,
    frame: &str,
    family: Family,
) -> rand_chacha::ChaCha12Rng {
    derive_rng(
        global_seed,
        &[scene, frame, &format!("family{}", family.index()), "pick"],
    )
}

/// Applies every viable family rule to the frame statistics.
///
/// Output is deterministic given the statistics and the global seed, and
/// every pair passes `verify_pair` by construction.
pub fn generate_from_stats(
    stats: &FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
    global_seed: u64,
) -> Result<Vec<QaPair>> {
    let room = classify_room(stats, tables);
    let viable = survey_viable_families(stats, &room, tables, cfg);
    let (scene, frame) = (stats.scene.as_str(), stats.frame.as_str());

    let mut pairs = Vec::new();
    for family in viable {
        let pair = match family {
            Family::RoomType => {
                let (choices, answer_index) = shuffled_choices(
                    tables.rooms.names(),
                    &room,
                    global_seed,
                    scene,
                    frame,
                    family,
                );
                QaPair {
                    scene: scene.into(),
                    frame: frame.into(),
                    family,
                    question: "What type of room is shown in the image?".into(),
                    choices,
                    answer_index,
                    trace: Trace {
                        rule: "room_type_v1".into(),
                        subject: None,
                        depth_gap_m: None,
                        min_area_fraction: None,
                    },
                }
            }
            Family::RoomAffordance => {
                let mut rng = family_rng(global_seed, scene, frame, family);
                let entry = &tables.affordances.entries
                    [rng.random_range(0..tables.affordances.entries.len())];
                let answer = if entry.rooms.contains(&room) {
                    "Yes"
                } else {
                    "No"
                };
                let (choices, answer_index) = shuffled_choices(
                    vec!["Yes".into(), "No".into()],
                    answer,
                    global_seed,
                    scene,
                    frame,
                    family,
                );
                QaPair {
                    scene: scene.into(),
                    frame: frame.into(),
                    family,
                    question: format!(
                        "I want to {}. Is this room suitable for that?",
                        entry.activity
                    ),
                    choices,
                    answer_index,
                    trace: Trace {
                        rule: "room_affordance_v1".into(),
                        subject: Some(entry.activity.clone()),
                        depth_gap_m: None,
                        min_area_fraction: None,
                    },
                }
            }
            Family::ObjectRecognition => {
                let positives = recognizable_classes(stats, tables, cfg);
                let present = present_classes(stats);
                let negatives: Vec<String> = tables
                    .classes
                    .object_vocabulary()
                    .map(|c| c.name.clone())
                    .filter(|n| !present.contains(n))
                    .collect();
                let mut rng = family_rng(global_seed, scene, frame, family);
                let ask_positive = negatives.is_empty() || rng.random_range(0..2u8) == 0;
                let (class, answer) = if ask_positive {
                    let pool: Vec<&String> = positives.iter().collect();
                    (pool[rng.random_range(0..pool.len())].clone(), "Yes")
                } else {
                    (
                        negatives[rng.random_range(0..negatives.len())].clone(),
                        "No",
                    )
                };
                let (choices, answer_index) = shuffled_choices(
                    vec!["Yes".into(), "No".into()],
                    answer,
                    global_seed,
                    scene,
                    frame,
                    family,
                );
                QaPair {
                    scene: scene.into(),
                    frame: frame.into(),
                    family,
                    question: format!("Is there a {class} in the image?"),
                    choices,
                    answer_index,
                    trace: Trace {
                        rule: "object_recognition_v1".into(),
                        subject: Some(class),
                        depth_gap_m: None,
                        min_area_fraction: Some(cfg.min_area_fraction),
                    },
                }
            }
            Family::ObjectAttributeColor => {
                let candidates = color_candidates(stats, tables, cfg);
                let target = candidates[0];
                let color = tables
                    .palette
                    .name_color(target.mean_color, cfg.color_ambiguity_ratio)
                    .expect("candidate colors are nameable")
                    .to_string();
                let mut rng = family_rng(global_seed, scene, frame, family);
                let mut distractors: Vec<String> = tables
                    .palette
                    .names()
                    .into_iter()
                    .filter(|n| *n != color)
                    .collect();
                distractors.shuffle(&mut rng);
                let mut choice_set = vec![color.clone()];
                choice_set.extend(
                    distractors
                        .into_iter()
                        .take(cfg.color_choices.saturating_sub(1)),
                );
                let (choices, answer_index) =
                    shuffled_choices(choice_set, &color, global_seed, scene, frame, family);
                QaPair {
                    scene: scene.into(),
                    frame: frame.into(),
                    family,
                    question: format!(
                        "What is the dominant color of the {} in the image?",
                        target.class_name
                    ),
                    choices,
                    answer_index,
                    trace: Trace {
                        rule: "object_attribute_color_v1".into(),
                        subject: Some(target.class_name.clone()),
                        depth_gap_m: None,
                        min_area_fraction: Some(cfg.min_area_fraction),
                    },
                }
            }
            Family::ClosestObject => {
                let (answer, classes) =
                    closest_candidate(stats, tables, cfg).expect("surveyed viable");
                let (choices, answer_index) =
                    shuffled_choices(classes, &answer, global_seed, scene, frame, family);
                QaPair {
                    scene: scene.into(),
                    frame: frame.into(),
                    family,
                    question: "Which of these objects is closest to the camera?".into(),
                    choices,
                    answer_index,
                    trace: Trace {
                        rule: "closest_object_v1".into(),
                        subject: Some(answer),
                        depth_gap_m: Some(cfg.depth_gap_m),
                        min_area_fraction: Some(cfg.min_area_fraction),
                    },
                }
            }
        };
        pair.check()?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Runs both stages on one frame bundle.
pub fn generate_qa(
    bundle: &FrameBundle,
    tables: &QaTables,
    cfg: &QaConfig,
    global_seed: u64,
) -> Result<Vec<QaPair>> {
    let stats = extract_segment_stats(bundle, &tables.classes, cfg)?;
    generate_from_stats(&stats, tables, cfg, global_seed)
}

/// Re-evaluates a pair's rule against the frame statistics; true iff the
/// stored answer is exactly what the rule derives.
pub fn verify_pair(
    pair: &QaPair,
    stats: &FrameStatistics,
    tables: &QaTables,
    cfg: &QaConfig,
) -> bool {
    if pair.check().is_err() {
        return false;
    }
    let answer = pair.answer();
    match pair.family {
        Family::RoomType => classify_room(stats, tables) == answer,
        Family::RoomAffordance => {
            let Some(activity) = pair.trace.subject.as_deref() else {
                return false;
            };
            let Some(entry) = tables
                .affordances
                .entries
                .iter()
                .find(|e| e.activity == activity)
            else {
                return false;
            };
            let room = classify_room(stats, tables);
            if room == UNKNOWN_ROOM {
                return false;
            }
            let expect = if entry.rooms.contains(&room) {
                "Yes"
            } else {
                "No"
            };
            expect == answer
        }
        Family::ObjectRecognition => {
            let Some(class) = pair.trace.subject.as_deref() else {
                return false;
            };
            let expect = if recognizable_classes(stats, tables, cfg).contains(class) {
                "Yes"
            } else if !present_classes(stats).contains(class) {
                "No"
            } else {
                // Present but below the area filter: the rule never asks this.
                return false;
            };
            expect == answer
        }
        Family::ObjectAttributeColor => {
            let Some(class) = pair.trace.subject.as_deref() else {
                return false;
            };
            let candidates = color_candidates(stats, tables, cfg);
            let Some(segment) = candidates.iter().find(|s| s.class_name == class) else {
                return false;
            };
            tables
                .palette
                .name_color(segment.mean_color, cfg.color_ambiguity_ratio)
                == Some(answer)
        }
        Family::ClosestObject => match closest_candidate(stats, tables, cfg) {
            Some((expect, _)) => expect == answer,
            None => false,
        },
    }
}

/// Outcome summary of a QA generation run.
#[derive(Debug, Clone, Serialize)]
pub struct QaRunReport {
    pub frames_processed: usize,
    pub pairs_generated: usize,
    pub failures: Vec<QaFrameFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QaFrameFailure {
    pub scene: String,
    pub frame: String,
    pub message: String,
}

/// Runs Algorithm-style generation over a manifest: Stage 1 statistics
/// (cached under `cache_dir` when given), then Stage 2 rules. Each frame is
/// processed exactly once; pairs come back sorted by (scene, frame, family)
/// so output files are byte-identical across reruns and worker counts.
pub fn generate_dataset(
    manifest: &DatasetManifest,
    tables: &QaTables,
    cfg: &QaConfig,
    global_seed: u64,
    cache_dir: Option<&Path>,
    jobs: usize,
) -> Result<(Vec<QaPair>, QaRunReport)> {
    let pairs: Mutex<Vec<QaPair>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<QaFrameFailure>> = Mutex::new(Vec::new());
    let processed = std::sync::atomic::AtomicUsize::new(0);

    let run_frame = |entry: &crate::pipeline::FrameEntry| {
        let result = (|| -> Result<Vec<QaPair>> {
            let cached = match cache_dir {
                Some(dir) => FrameStatistics::load_cached(FrameStatistics::cache_path(
                    dir,
                    &entry.scene,
                    &entry.frame,
                ))?,
                None => None,
            };
            let stats = match cached {
                Some(stats) => stats,
                None => {
                    let bundle = FrameBundle::load(entry)?;
                    let stats = extract_segment_stats(&bundle, &tables.classes, cfg)?;
                    if let Some(dir) = cache_dir {
                        stats.save(FrameStatistics::cache_path(dir, &entry.scene, &entry.frame))?;
                    }
                    stats
                }
            };
            let pairs = generate_from_stats(&stats, tables, cfg, global_seed)?;
            for pair in &pairs {
                if !verify_pair(pair, &stats, tables, cfg) {
                    return Err(Error::Structural(format!(
                        "{}: generated pair failed self-verification",
                        pair.key()
                    )));
                }
            }
            Ok(pairs)
        })();
        match result {
            Ok(mut p) => {
                processed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                pairs.lock().unwrap().append(&mut p);
            }
            Err(e) => failures.lock().unwrap().push(QaFrameFailure {
                scene: entry.scene.clone(),
                frame: entry.frame.clone(),
                message: e.to_string(),
            }),
        }
    };

    if jobs == 1 {
        manifest.frames.iter().for_each(run_frame);
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            manifest.frames.par_iter().for_each(run_frame);
        });
    }

    let mut pairs = pairs.into_inner().unwrap();
    pairs.sort_by(|a, b| {
        (&a.scene, &a.frame, a.family.index()).cmp(&(&b.scene, &b.frame, b.family.index()))
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by(|a, b| (&a.scene, &a.frame).cmp(&(&b.scene, &b.frame)));

    let report = QaRunReport {
        frames_processed: processed.into_inner(),
        pairs_generated: pairs.len(),
        failures,
    };
    Ok((pairs, report))
}

/// Writes pairs as JSON Lines.
pub fn write_qa_jsonl(pairs: &[QaPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QaPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: QaPair = serde_json::from_str(line)
            .map_err(|e| Error::Structural(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Human-review export: a markdown table of every pair with its answer and
/// trace, for out-of-band sanity checks.
pub fn write_review_markdown(pairs: &[QaPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "| scene | frame | family | question | choices | answer | rule |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for p in pairs {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            p.scene,
            p.frame,
            p.family,
            p.question,
            p.choices.join(" / "),
            p.answer(),
            p.trace.rule,
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
