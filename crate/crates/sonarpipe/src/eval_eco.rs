//! Passage-level ecological validation: tracks against operator passage
//! logs, recall per species and size class, TN% on empty clips and the
//! per-clip FP/TP ratio distribution.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clipio::{Camera, PassageRecord, SizeClass};
use crate::error::{PipelineError, Result};
use crate::tracks::TrackRecord;

pub const DEFAULT_TOLERANCE_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchStatus {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FN")]
    FalseNegative,
}

/// One operator-logged passage with the track assigned to it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageMatch {
    pub passage: PassageRecord,
    pub track: Option<TrackRecord>,
    pub status: MatchStatus,
}

/// Assign tracks to passages one-to-one within a clip. A track is eligible
/// for a passage when its time span, dilated by `tol_s` on both sides,
/// contains the passage timestamp; assignment is greedy by smallest time
/// distance (ties to the earlier track). Unmatched passages are the FN set,
/// unmatched tracks the FP set.
pub fn match_passages(
    tracks: &[TrackRecord],
    passages: &[PassageRecord],
    frame_rate_hz: f64,
    tol_s: f64,
) -> Result<(Vec<PassageMatch>, Vec<TrackRecord>)> {
    if tol_s < 0.0 {
        return Err(PipelineError::validation(format!(
            "matching tolerance must be non-negative, got {tol_s}"
        )));
    }
    if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
        return Err(PipelineError::validation(format!(
            "frame rate must be positive, got {frame_rate_hz}"
        )));
    }
    let mut clip_ids = tracks
        .iter()
        .map(|t| t.clip_id.as_str())
        .chain(passages.iter().map(|p| p.clip_id.as_str()));
    if let Some(first) = clip_ids.next() {
        if clip_ids.any(|c| c != first) {
            return Err(PipelineError::validation(
                "match_passages expects tracks and passages from a single clip",
            ));
        }
    }

    // (distance, track start, passage index, track index), best first
    let mut candidates: Vec<(f64, u32, usize, usize)> = Vec::new();
    for (pi, passage) in passages.iter().enumerate() {
        for (ti, track) in tracks.iter().enumerate() {
            let start = f64::from(track.start_frame) / frame_rate_hz;
            let end = f64::from(track.end_frame) / frame_rate_hz;
            let ts = passage.timestamp_s;
            if ts < start - tol_s || ts > end + tol_s {
                continue;
            }
            let distance = if ts < start {
                start - ts
            } else if ts > end {
                ts - end
            } else {
                0.0
            };
            candidates.push((distance, track.start_frame, pi, ti));
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distance")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut passage_track: Vec<Option<usize>> = vec![None; passages.len()];
    let mut track_used = vec![false; tracks.len()];
    for (_, _, pi, ti) in candidates {
        if passage_track[pi].is_some() || track_used[ti] {
            continue;
        }
        passage_track[pi] = Some(ti);
        track_used[ti] = true;
    }

    let matches = passages
        .iter()
        .zip(&passage_track)
        .map(|(passage, assigned)| PassageMatch {
            passage: passage.clone(),
            track: assigned.map(|ti| tracks[ti].clone()),
            status: if assigned.is_some() {
                MatchStatus::TruePositive
            } else {
                MatchStatus::FalseNegative
            },
        })
        .collect();
    let unmatched = tracks
        .iter()
        .zip(&track_used)
        .filter(|(_, &used)| !used)
        .map(|(t, _)| t.clone())
        .collect();
    Ok((matches, unmatched))
}

/// Per-clip inputs to the ecological report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEcoInput {
    pub clip_id: String,
    pub camera: Camera,
    pub total_frames: u32,
    /// Clip declared fish-free by the operator; only these clips enter TN%.
    pub declared_empty: bool,
    pub matches: Vec<PassageMatch>,
    /// Tracks left unmatched by `match_passages` — the false alarms.
    pub unmatched_tracks: Vec<TrackRecord>,
    /// Frames on which at least one detection survived temporal filtering.
    pub frames_with_detections: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCell {
    pub species: String,
    pub size_class: SizeClass,
    pub tp: u64,
    pub total: u64,
    pub recall_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEcoReport {
    pub clips: u32,
    pub recall_by_cell: Vec<RecallCell>,
    pub total_tp: u64,
    pub total_passages: u64,
    pub recall_total_pct: f64,
    /// Empty-clip frames with no surviving detection / empty-clip frames.
    pub tn_frames: u64,
    pub tn_total_frames: u64,
    pub tn_percent: f64,
    pub empty_clips: u32,
    pub fp_count_per_clip: BTreeMap<String, u64>,
    pub fp_total: u64,
    pub fp_tp_ratio_per_clip: BTreeMap<String, f64>,
    pub fp_tp_median: Option<f64>,
    /// Clips with zero TP are excluded from the median.
    pub clips_excluded_from_median: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcoEvalReport {
    pub tolerance_s: f64,
    pub cameras: BTreeMap<String, CameraEcoReport>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite ratio"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Aggregate per-clip match results into the ecological report, grouped per
/// camera model.
pub fn eco_report(clips: &[ClipEcoInput], tolerance_s: f64) -> Result<EcoEvalReport> {
    let mut cameras: BTreeMap<String, Vec<&ClipEcoInput>> = BTreeMap::new();
    for clip in clips {
        if clip.declared_empty && !clip.matches.is_empty() {
            return Err(PipelineError::validation(format!(
                "clip {} is declared empty but its log carries {} passages",
                clip.clip_id,
                clip.matches.len()
            )));
        }
        if clip.frames_with_detections > clip.total_frames {
            return Err(PipelineError::validation(format!(
                "clip {}: {} detection frames exceed the {} total frames",
                clip.clip_id, clip.frames_with_detections, clip.total_frames
            )));
        }
        cameras.entry(clip.camera.as_str().to_string()).or_default().push(clip);
    }

    let mut out = BTreeMap::new();
    for (camera, clips) in cameras {
        let mut cells: BTreeMap<(String, SizeClass), (u64, u64)> = BTreeMap::new();
        let (mut total_tp, mut total_passages) = (0u64, 0u64);
        let (mut tn_frames, mut tn_total_frames) = (0u64, 0u64);
        let mut empty_clips = 0u32;
        let mut fp_count_per_clip = BTreeMap::new();
        let mut fp_total = 0u64;
        let mut fp_tp_ratio_per_clip = BTreeMap::new();
        let mut excluded = 0u32;

        for clip in &clips {
            let mut clip_tp = 0u64;
            for m in &clip.matches {
                let cell = cells
                    .entry((m.passage.species.clone(), m.passage.size_class))
                    .or_insert((0, 0));
                cell.1 += 1;
                total_passages += 1;
                if m.status == MatchStatus::TruePositive {
                    cell.0 += 1;
                    total_tp += 1;
                    clip_tp += 1;
                }
            }
            let fp = clip.unmatched_tracks.len() as u64;
            fp_count_per_clip.insert(clip.clip_id.clone(), fp);
            fp_total += fp;
            if clip_tp > 0 {
                fp_tp_ratio_per_clip.insert(clip.clip_id.clone(), fp as f64 / clip_tp as f64);
            } else {
                excluded += 1;
            }
            if clip.declared_empty {
                empty_clips += 1;
                tn_total_frames += u64::from(clip.total_frames);
                tn_frames += u64::from(clip.total_frames - clip.frames_with_detections);
            }
        }

        let recall_by_cell = cells
            .into_iter()
            .map(|((species, size_class), (tp, total))| RecallCell {
                species,
                size_class,
                tp,
                total,
                recall_pct: 100.0 * tp as f64 / total as f64,
            })
            .collect();
        let mut ratios: Vec<f64> = fp_tp_ratio_per_clip.values().copied().collect();
        out.insert(
            camera,
            CameraEcoReport {
                clips: clips.len() as u32,
                recall_by_cell,
                total_tp,
                total_passages,
                recall_total_pct: if total_passages == 0 {
                    0.0
                } else {
                    100.0 * total_tp as f64 / total_passages as f64
                },
                tn_frames,
                tn_total_frames,
                tn_percent: if tn_total_frames == 0 {
                    0.0
                } else {
                    100.0 * tn_frames as f64 / tn_total_frames as f64
                },
                empty_clips,
                fp_count_per_clip,
                fp_total,
                fp_tp_median: median(&mut ratios),
                fp_tp_ratio_per_clip,
                clips_excluded_from_median: excluded,
            },
        );
    }

    Ok(EcoEvalReport {
        tolerance_s,
        cameras: out,
    })
}

/// Plain-text rendering: one recall table per camera (rows species, columns
/// size classes) followed by the TN and FP summaries.
pub fn render_table(report: &EcoEvalReport) -> String {
    let mut text = String::new();
    for (camera, cam) in &report.cameras {
        let _ = writeln!(
            text,
            "Camera {camera} ({} clips, tolerance +/-{} s)",
            cam.clips, report.tolerance_s
        );
        let _ = writeln!(text, "  Recall (%TP) by fish size");
        let _ = writeln!(
            text,
            "  {:<18}{:>9}{:>9}{:>9}{:>9}{:>9}",
            "Species", "20-40", "40-60", "60-80", ">80", "Total"
        );

        let mut species: Vec<&str> = cam
            .recall_by_cell
            .iter()
            .map(|c| c.species.as_str())
            .collect();
        species.sort_unstable();
        species.dedup();

        let cell_text = |tp: u64, total: u64| -> String {
            if total == 0 {
                "NA".to_string()
            } else {
                format!("{:.2}", 100.0 * tp as f64 / total as f64)
            }
        };
        let mut rows: Vec<(&str, Vec<&RecallCell>)> = Vec::new();
        for sp in &species {
            rows.push((
                sp,
                cam.recall_by_cell
                    .iter()
                    .filter(|c| c.species == *sp)
                    .collect(),
            ));
        }
        // aggregate row over all species first
        let all_row: Vec<&RecallCell> = cam.recall_by_cell.iter().collect();
        let render_row = |label: &str, cells: &[&RecallCell]| -> String {
            let mut line = format!("  {label:<18}");
            for size in SizeClass::ALL {
                let (tp, total) = cells
                    .iter()
                    .filter(|c| c.size_class == size)
                    .fold((0u64, 0u64), |acc, c| (acc.0 + c.tp, acc.1 + c.total));
                let _ = write!(line, "{:>9}", cell_text(tp, total));
            }
            let (tp, total) = cells
                .iter()
                .fold((0u64, 0u64), |acc, c| (acc.0 + c.tp, acc.1 + c.total));
            let _ = write!(line, "{:>9}", cell_text(tp, total));
            line
        };
        let _ = writeln!(text, "{}", render_row("All species", &all_row));
        for (sp, cells) in &rows {
            let _ = writeln!(text, "{}", render_row(sp, cells));
        }

        if cam.empty_clips > 0 {
            let _ = writeln!(
                text,
                "  TN% on empty clips: {:.2} ({} clips, {}/{} frames without detections)",
                cam.tn_percent, cam.empty_clips, cam.tn_frames, cam.tn_total_frames
            );
        }
        match cam.fp_tp_median {
            Some(m) => {
                let _ = writeln!(
                    text,
                    "  FP tracks: {} total; FP/TP median {:.2} ({} clips excluded: no TP)",
                    cam.fp_total, m, cam.clips_excluded_from_median
                );
            }
            None => {
                let _ = writeln!(
                    text,
                    "  FP tracks: {} total; FP/TP median undefined (no clip with TP)",
                    cam.fp_total
                );
            }
        }
    }
    text
}
