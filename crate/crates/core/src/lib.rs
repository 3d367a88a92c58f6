//! Gaze-gated emotion and visual-cause analysis for smart eyewear.
//!
//! A replayed eye/scene stream is turned into emotionship records: what the
//! wearer felt, which region of the scene they were looking at, a short
//! caption of it, and how strongly the scene drove the prediction.

pub mod archive;
pub mod config;
pub mod dataio;
pub mod domain;
pub mod energy;
pub mod error;
pub mod eyefeat;
pub mod fusion;
pub mod gaze;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod roiselect;
pub mod synth;
pub mod vlprovider;

pub use error::{Error, Result};
