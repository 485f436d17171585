//! Coronary artery occlusion (CAO) localization from 12-lead ECG.
//!
//! The pipeline: noise reduction (notch + high-pass) and R-peak-aligned
//! pulse extraction feed ResNet-style 1D/2D CNN classifiers arranged as a
//! two-stage cascade (LAD vs non-LAD, then LCX vs RCA). A seeded synthetic
//! ECG generator stands in for clinical data so the whole chain is
//! reproducible and testable at desk scale.

pub mod cascade;
pub mod ecg;
pub mod eval;
pub mod filters;
pub mod nn;
pub mod pulses;
pub mod synth;

mod error;

pub use error::{Error, Result};
