//! Acoustic-camera fish detection pipeline.
//!
//! Sonar clips go through background segmentation (per-pixel adaptive
//! Gaussian mixture), mask denoising (3x3 median, then opening with a 3x3
//! cross), multichannel composition, a pluggable detection stage and
//! temporal flash filtering into multi-frame tracks. Two validation levels
//! score the result: frame-level model metrics (precision/recall/F1,
//! AP@0.50, Cohen's kappa, confusion matrix) and passage-level ecological
//! metrics against operator logs (recall per species and size class, TN% on
//! empty clips, FP/TP ratios). A deterministic synthetic-clip generator
//! provides ground truth for end-to-end verification.

pub mod background;
pub mod clipio;
pub mod detect;
pub mod error;
pub mod eval_eco;
pub mod eval_model;
pub mod geometry;
pub mod maskpipe;
pub mod pipeline;
pub mod synth;
pub mod tracks;

pub use background::{BackgroundModel, BackgroundParams};
pub use clipio::{Annotation, Camera, ClipManifest, Frame, PassageRecord, SizeClass};
pub use detect::{BaselineParams, Detection};
pub use error::{PipelineError, Result};
pub use geometry::{iou, BoundingBox};
pub use maskpipe::{BinaryMask, ComposeMode, ComposedFrame};
pub use pipeline::{ClipRun, DetectorChoice, DumpOptions, PipelineConfig};
pub use tracks::{Track, TrackRecord};
