//! Low-light robustness benchmarking toolkit.
//!
//! Synthesizes physically grounded low-light variants of well-lit indoor
//! images (exposure drop plus RAW-domain sensor noise), deterministically
//! generates multiple-choice embodied-QA pairs from annotated frames, and
//! scores external vision-language models across a degradation ladder.

pub mod color;
pub mod config;
pub mod error;
pub mod eval;
pub mod isp;
pub mod noise;
pub mod pipeline;
pub mod qa;
pub mod seed;
pub mod selftest;
pub mod unprocess;

pub use color::{EvDrop, LinearImage, SrgbImage};
pub use error::{Error, Result};
pub use pipeline::{DatasetManifest, DegradationLevel, FrameEntry, RunReport};
pub use unprocess::{BayerRaw, CameraParams, NoiseParams, RawDomain, SensorProfile};
