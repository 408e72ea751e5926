//! Localization-aware reward scoring for GRPO fine-tuning of anomaly
//! detectors.
//!
//! Responses follow a think / rethink / answer structure; region proposals
//! from the think stage are matched to ground-truth boxes with the Hungarian
//! algorithm under a `1 - GIoU` cost and turned into dense rewards that keep
//! group-normalized advantages from collapsing when every response gets the
//! label right.

pub mod analytics;
pub mod assignment;
pub mod cli;
pub mod geometry;
pub mod grpo;
pub mod mask2box;
pub mod model;
pub mod parser;
pub mod rewards;
pub mod scoring;
pub mod simulator;

pub use assignment::{CostMatrix, Matching};
pub use model::{
    validate_sample, BBox, Label, ModelError, ResponseRecord, RewardConfig, Sample, Scheme,
};
pub use parser::{parse, render, ParsedResponse, ResponseTemplate};
pub use rewards::RewardBreakdown;
