//! Deterministic multiple-choice QA generation from annotated frames.
//!
//! Two stages: per-frame segment statistics (cached), then rule-based
//! question generation over five families (room type, room affordance,
//! object recognition, object color, closest object). No language models are
//! involved anywhere; every answer is verifiable from the statistics.

pub mod fixture;
pub mod generate;
pub mod stats;
pub mod tables;

use serde::{Deserialize, Serialize};

pub use generate::{
    classify_room, generate_dataset, generate_from_stats, generate_qa, load_qa_jsonl,
    survey_viable_families, verify_pair, write_qa_jsonl, write_review_markdown, Family, QaPair,
    QaRunReport, Trace, UNKNOWN_ROOM,
};
pub use stats::{
    extract_segment_stats, Bbox, DepthMap, FrameBundle, FrameStatistics, IdMap, SegmentAttributes,
    STATS_VERSION,
};
pub use tables::{AffordanceTable, ClassTable, Palette, QaTables, RoomRules};

/// Thresholds of the generation rules. The rules themselves are fixed; these
/// filter values are editorial and configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    /// Minimum depth gap between the two closest objects (meters); the
    /// closest-object question requires the gap to exceed this.
    pub depth_gap_m: f64,
    /// Tiny-object filter: minimum segment area as a fraction of the frame.
    pub min_area_fraction: f64,
    /// Minimum fraction of valid depth pixels for a segment to carry a
    /// depth median.
    pub depth_valid_fraction_min: f64,
    /// Color naming is ambiguous when the nearest palette distance exceeds
    /// this ratio of the second-nearest.
    pub color_ambiguity_ratio: f64,
    /// Number of choices offered by the color question.
    pub color_choices: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            depth_gap_m: 0.5,
            min_area_fraction: 0.005,
            depth_valid_fraction_min: 0.5,
            color_ambiguity_ratio: 0.9,
            color_choices: 4,
        }
    }
}
