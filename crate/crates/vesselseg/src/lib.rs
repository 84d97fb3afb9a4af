//! A desk-scale laboratory for carotid vessel-wall segmentation.
//!
//! The crate covers the full loop: procedural ultrasound-like vessel phantoms
//! with analytic ground truth ([`phantom`]), volume I/O and preprocessing
//! ([`volume`]), label-surface reslicing and geometric augmentation
//! ([`augment`]), a trainable two-channel U-Net ([`net`]) with soft-Dice
//! training objectives ([`loss`]), flip-ensemble inference ([`infer`]), and an
//! evaluation stack of overlap/distance metrics ([`metrics`]), wall volumetry
//! ([`volumetry`]), and agreement/comparison statistics ([`stats`]).
//!
//! Everything is deterministic under explicit seeds and runs on a single CPU
//! core; network sizes are configurable so the same code serves both quick
//! tests and full-resolution runs.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod resample;
pub mod sdf;
pub mod stats;
pub mod trainer;
pub mod volume;
pub mod volumetry;

pub use error::{Error, Result};
