//! Long-video panelization toolkit.
//!
//! Long videos are sampled more densely than a model's image budget allows,
//! and the extra frames are packed as downsampled tiles into grid "panel"
//! images. Short videos pass through untouched. The crate also contains an
//! evaluation harness for multiple-choice video QA against any
//! chat-completions endpoint, and a synthetic needle-in-a-haystack
//! simulation with a deterministic mock model.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod config;
pub mod error;
pub mod framesource;
pub mod harness;
pub mod needlesim;
pub mod panelizer;
pub mod policy;

pub use error::{Error, Result, SourceError};
pub use framesource::{Frame, FrameReader, FrameSource, ProbeOptions};
pub use panelizer::{Manifest, PanelImage};
pub use policy::{Gamma, Grid, PlanMode, SamplePlan, SamplingPolicy, VideoMeta};
