//! Stage orchestration for one clip: background segmentation, mask
//! denoising, detection, confidence filtering and temporal filtering, with
//! optional artifact dumping. Composing the stages here is equivalent to
//! calling them individually — there is no hidden coupling.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use crate::background::{BackgroundModel, BackgroundParams};
use crate::clipio::{self, Annotation, ClipManifest, Frame, PassageRecord};
use crate::detect::{self, BaselineParams, Detection};
use crate::error::{PipelineError, Result};
use crate::eval_eco::{self, ClipEcoInput};
use crate::eval_model::EvalImage;
use crate::maskpipe::{self, ComposeMode};
use crate::tracks::{self, Track};

#[derive(Debug, Clone)]
pub enum DetectorChoice {
    /// Connected components over the cleaned `b_f` mask.
    Baseline(BaselineParams),
    /// Pre-computed detections, keyed by `(clip_id, frame_index)` — the hook
    /// for an externally trained detector.
    External(BTreeMap<(String, u32), Vec<Detection>>),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub background: BackgroundParams,
    pub mode: ComposeMode,
    pub detector: DetectorChoice,
    /// Detections below this confidence are dropped before tracking.
    pub confidence_tau: f64,
    /// Minimum IoU for two boxes to count as overlapping in time filtering.
    pub track_min_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            background: BackgroundParams::default(),
            mode: ComposeMode::RbbF,
            detector: DetectorChoice::Baseline(BaselineParams::default()),
            confidence_tau: 0.25,
            track_min_iou: tracks::DEFAULT_TRACK_IOU,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DumpOptions {
    /// Write `b` masks as `<clip>_<index>_b.pgm` into this directory.
    pub masks_dir: Option<PathBuf>,
    /// Write composed frames as `<clip>_<index>_<mode>.png` into this directory.
    pub composed_dir: Option<PathBuf>,
}

/// Everything one clip produces on its way through the pipeline.
#[derive(Debug, Clone)]
pub struct ClipRun {
    pub clip_id: String,
    pub n_frames: u32,
    /// Raw detector output, before any filtering (the AP sweep input).
    pub detections_all: Vec<Detection>,
    /// After the confidence threshold, grouped per frame.
    pub detections: BTreeMap<u32, Vec<Detection>>,
    /// After flash filtering.
    pub surviving: BTreeMap<u32, Vec<Detection>>,
    pub tracks: Vec<Track>,
}

impl ClipRun {
    /// Frames on which at least one detection survived temporal filtering.
    pub fn frames_with_detections(&self) -> u32 {
        self.surviving.len() as u32
    }
}

/// Run the full per-clip pipeline. Frames must arrive in index order (the
/// background model is sequential); distinct clips are independent.
pub fn run_clip(
    manifest: &ClipManifest,
    frames: &[Frame],
    cfg: &PipelineConfig,
    dumps: &DumpOptions,
) -> Result<ClipRun> {
    if let Some(dir) = &dumps.masks_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    if let Some(dir) = &dumps.composed_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }

    let mut model = BackgroundModel::new(cfg.background, manifest.width_px, manifest.height_px)?;
    let mut detections_all = Vec::new();

    for frame in frames {
        let b = model.apply(frame)?;
        let b_f = maskpipe::open_cross3x3(&maskpipe::median3x3(&b));

        if let Some(dir) = &dumps.masks_dir {
            let path = dir.join(format!("{}_{:06}_b.pgm", frame.clip_id, frame.index));
            clipio::write_pgm(&path, b.width, b.height, &b.to_gray8())?;
        }
        if let Some(dir) = &dumps.composed_dir {
            let composed = maskpipe::compose(frame, Some(&b), Some(&b_f), cfg.mode)?;
            let path = dir.join(format!(
                "{}_{:06}_{}.png",
                frame.clip_id, frame.index, cfg.mode
            ));
            clipio::write_rgb_png(&path, composed.width, composed.height, &composed.to_rgb8())?;
        }

        match &cfg.detector {
            DetectorChoice::Baseline(params) => {
                detections_all.extend(detect::detect_cc(&b_f, frame, params)?);
            }
            DetectorChoice::External(map) => {
                if let Some(dets) = map.get(&(frame.clip_id.clone(), frame.index)) {
                    for det in dets {
                        if !det.bbox.fits_within(frame.width, frame.height) {
                            return Err(PipelineError::validation(format!(
                                "clip {}: external detection on frame {} exceeds frame bounds",
                                frame.clip_id, frame.index
                            )));
                        }
                    }
                    detections_all.extend(dets.iter().cloned());
                }
            }
        }
    }

    let kept = detect::filter_confidence(&detections_all, cfg.confidence_tau)?;
    let per_frame = tracks::group_by_clip(kept)
        .remove(&manifest.clip_id)
        .unwrap_or_default();
    let surviving = tracks::flash_filter(&per_frame, cfg.track_min_iou);
    let track_list = tracks::build_tracks(&surviving, cfg.track_min_iou);

    Ok(ClipRun {
        clip_id: manifest.clip_id.clone(),
        n_frames: frames.len() as u32,
        detections_all,
        detections: per_frame,
        surviving,
        tracks: track_list,
    })
}

/// Pair annotated frames with the detections on them, one [`EvalImage`] per
/// annotated frame (frames annotated as empty stay in, as no-fish images).
pub fn eval_images_for_clip(
    annotations: &BTreeMap<u32, Vec<Annotation>>,
    detections: &[Detection],
) -> Vec<EvalImage> {
    let mut dets_per_frame: BTreeMap<u32, Vec<(crate::geometry::BoundingBox, f64)>> =
        BTreeMap::new();
    for d in detections {
        dets_per_frame
            .entry(d.frame_index)
            .or_default()
            .push((d.bbox, d.confidence));
    }
    annotations
        .iter()
        .map(|(frame, anns)| EvalImage {
            dets: dets_per_frame.get(frame).cloned().unwrap_or_default(),
            gts: anns.iter().map(|a| a.bbox).collect(),
        })
        .collect()
}

/// Match a clip's tracks to its operator log and package the result for the
/// ecological report.
pub fn eco_input_for_clip(
    run: &ClipRun,
    manifest: &ClipManifest,
    passages: &[PassageRecord],
    declared_empty: bool,
    tol_s: f64,
) -> Result<ClipEcoInput> {
    let records: Vec<_> = run.tracks.iter().map(Track::to_record).collect();
    let (matches, unmatched) =
        eval_eco::match_passages(&records, passages, manifest.frame_rate_hz, tol_s)?;
    Ok(ClipEcoInput {
        clip_id: manifest.clip_id.clone(),
        camera: manifest.camera,
        total_frames: run.n_frames,
        declared_empty,
        matches,
        unmatched_tracks: unmatched,
        frames_with_detections: run.frames_with_detections(),
    })
}
