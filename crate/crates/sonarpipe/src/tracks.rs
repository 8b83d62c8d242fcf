//! Temporal post-processing of per-frame detections.
//!
//! A detection with no overlapping detection on an adjacent frame is a
//! "flash" and is rejected. Surviving detections are chained into tracks:
//! maximal runs of frame-consecutive, pairwise-overlapping detections. A
//! track needs at least two frames — the sequence-level true-positive unit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::Detection;
use crate::error::{PipelineError, Result};
use crate::geometry::{iou, BoundingBox};

/// Two boxes "overlap" for tracking purposes when their IoU exceeds
/// `min_iou`. The default 0.0 accepts any positive intersection.
pub const DEFAULT_TRACK_IOU: f64 = 0.0;

/// A maximal chain of detections on strictly consecutive frames whose
/// adjacent boxes overlap. Length is at least 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub clip_id: String,
    pub detections: Vec<Detection>,
}

impl Track {
    pub fn start_frame(&self) -> u32 {
        self.detections.first().expect("track is non-empty").frame_index
    }

    pub fn end_frame(&self) -> u32 {
        self.detections.last().expect("track is non-empty").frame_index
    }

    pub fn mean_confidence(&self) -> f64 {
        let sum: f64 = self.detections.iter().map(|d| d.confidence).sum();
        sum / self.detections.len() as f64
    }

    pub fn to_record(&self) -> TrackRecord {
        TrackRecord {
            clip_id: self.clip_id.clone(),
            start_frame: self.start_frame(),
            end_frame: self.end_frame(),
            boxes: self.detections.iter().map(|d| d.bbox).collect(),
            mean_conf: self.mean_confidence(),
        }
    }
}

/// Wire form of a track, one JSON-lines record each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub clip_id: String,
    pub start_frame: u32,
    pub end_frame: u32,
    pub boxes: Vec<BoundingBox>,
    pub mean_conf: f64,
}

impl TrackRecord {
    pub fn validate(&self) -> Result<()> {
        let span = self.end_frame as i64 - self.start_frame as i64 + 1;
        if span < 2 || self.boxes.len() as i64 != span {
            return Err(PipelineError::validation(format!(
                "track on clip {} spans frames {}..={} with {} boxes",
                self.clip_id,
                self.start_frame,
                self.end_frame,
                self.boxes.len()
            )));
        }
        Ok(())
    }
}

/// Reject flash detections: keep a detection iff it overlaps at least one
/// detection on the previous or the next frame. Never adds or moves boxes.
pub fn flash_filter(
    per_frame: &BTreeMap<u32, Vec<Detection>>,
    min_iou: f64,
) -> BTreeMap<u32, Vec<Detection>> {
    let empty: Vec<Detection> = Vec::new();
    let mut out = BTreeMap::new();
    for (&frame, dets) in per_frame {
        let prev = frame
            .checked_sub(1)
            .and_then(|f| per_frame.get(&f))
            .unwrap_or(&empty);
        let next = per_frame.get(&(frame + 1)).unwrap_or(&empty);
        let kept: Vec<Detection> = dets
            .iter()
            .filter(|d| {
                prev.iter()
                    .chain(next.iter())
                    .any(|o| iou(&d.bbox, &o.bbox) > min_iou)
            })
            .cloned()
            .collect();
        if !kept.is_empty() {
            out.insert(frame, kept);
        }
    }
    out
}

/// Chain detections into tracks by greedy frame-to-frame association: each
/// open chain extends to the overlapping next-frame detection of highest IoU
/// (ties to the older chain, then to input order). Every detection joins at
/// most one chain; chains shorter than two frames are dropped.
pub fn build_tracks(
    per_frame: &BTreeMap<u32, Vec<Detection>>,
    min_iou: f64,
) -> Vec<Track> {
    struct Chain {
        detections: Vec<Detection>,
    }
    let mut open: Vec<Chain> = Vec::new();
    let mut done: Vec<Track> = Vec::new();

    for (&frame, dets) in per_frame {
        // Chains that could not reach this frame are finished.
        let mut still_open = Vec::new();
        for chain in open.drain(..) {
            let last = chain.detections.last().expect("chain is non-empty").frame_index;
            if last + 1 == frame {
                still_open.push(chain);
            } else if chain.detections.len() >= 2 {
                done.push(Track {
                    clip_id: chain.detections[0].clip_id.clone(),
                    detections: chain.detections,
                });
            }
        }
        open = still_open;

        // Candidate links, best IoU first.
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (ci, chain) in open.iter().enumerate() {
            let tail = &chain.detections.last().expect("chain is non-empty").bbox;
            for (di, det) in dets.iter().enumerate() {
                let overlap = iou(tail, &det.bbox);
                if overlap > min_iou {
                    candidates.push((ci, di, overlap));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("iou is finite")
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut chain_used = vec![false; open.len()];
        let mut det_used = vec![false; dets.len()];
        for (ci, di, _) in candidates {
            if chain_used[ci] || det_used[di] {
                continue;
            }
            chain_used[ci] = true;
            det_used[di] = true;
            open[ci].detections.push(dets[di].clone());
        }

        // Unextended chains die here (next frame would not be consecutive
        // with their tail); unmatched detections start new chains.
        let mut next_open = Vec::new();
        for (ci, chain) in open.drain(..).enumerate() {
            if chain_used[ci] {
                next_open.push(chain);
            } else if chain.detections.len() >= 2 {
                done.push(Track {
                    clip_id: chain.detections[0].clip_id.clone(),
                    detections: chain.detections,
                });
            }
        }
        for (di, det) in dets.iter().enumerate() {
            if !det_used[di] {
                next_open.push(Chain {
                    detections: vec![det.clone()],
                });
            }
        }
        open = next_open;
    }

    for chain in open {
        if chain.detections.len() >= 2 {
            done.push(Track {
                clip_id: chain.detections[0].clip_id.clone(),
                detections: chain.detections,
            });
        }
    }

    done.sort_by_key(|t| (t.start_frame(), t.detections[0].bbox.x, t.detections[0].bbox.y));
    done
}

/// Group a flat detection list per clip and frame, preserving input order
/// within a frame.
pub fn group_by_clip(
    detections: impl IntoIterator<Item = Detection>,
) -> BTreeMap<String, BTreeMap<u32, Vec<Detection>>> {
    let mut out: BTreeMap<String, BTreeMap<u32, Vec<Detection>>> = BTreeMap::new();
    for det in detections {
        out.entry(det.clip_id.clone())
            .or_default()
            .entry(det.frame_index)
            .or_default()
            .push(det);
    }
    out
}

pub fn save_tracks(path: &Path, tracks: &[TrackRecord]) -> Result<()> {
    let mut out = Vec::new();
    for t in tracks {
        serde_json::to_writer(&mut out, t).expect("record serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

pub fn load_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackRecord = serde_json::from_str(line)
            .map_err(|e| PipelineError::parse(path, lineno + 1, e.to_string()))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
