//! Per-frame fish detections.
//!
//! Two sources: the built-in connected-component baseline over the cleaned
//! `b_f` mask, and JSON-lines logs of detections produced externally (for
//! example by a trained neural detector). Either way the output is a scored
//! bounding box per frame with the single class "fish".

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clipio::Frame;
use crate::error::{PipelineError, Result};
use crate::geometry::BoundingBox;
use crate::maskpipe::BinaryMask;

/// The single detection class.
pub use crate::clipio::FISH_LABEL;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub clip_id: String,
    pub frame_index: u32,
    pub bbox: BoundingBox,
    /// In [0, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceRule {
    /// `min(1, area / (4 * min_area_px))`.
    AreaSaturating,
    /// Mean raw intensity inside the component, divided by 255.
    MeanIntensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub min_area_px: u32,
    pub connectivity: Connectivity,
    pub confidence_rule: ConfidenceRule,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            min_area_px: 25,
            connectivity: Connectivity::Eight,
            confidence_rule: ConfidenceRule::AreaSaturating,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_area_px == 0 {
            return Err(PipelineError::validation("min_area_px must be at least 1"));
        }
        Ok(())
    }
}

/// One detection per connected foreground component of `b_f` with area at
/// least `min_area_px`. Components are reported in scan order of their first
/// pixel; boxes are tight.
pub fn detect_cc(b_f: &BinaryMask, raw: &Frame, params: &BaselineParams) -> Result<Vec<Detection>> {
    params.validate()?;
    if b_f.width != raw.width || b_f.height != raw.height {
        return Err(PipelineError::validation(format!(
            "mask is {}x{} but frame is {}x{}",
            b_f.width, b_f.height, raw.width, raw.height
        )));
    }

    let (w, h) = (b_f.width as i64, b_f.height as i64);
    let neighbors: &[(i64, i64)] = match params.connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ],
    };

    let mut visited = vec![false; (w * h) as usize];
    let mut detections = Vec::new();
    let mut stack = Vec::new();

    for y0 in 0..h {
        for x0 in 0..w {
            let start = (y0 * w + x0) as usize;
            if visited[start] || b_f.get(x0 as u32, y0 as u32) == 0 {
                continue;
            }
            // flood one component
            visited[start] = true;
            stack.push((x0, y0));
            let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
            let mut area = 0u64;
            let mut intensity_sum = 0u64;
            while let Some((x, y)) = stack.pop() {
                area += 1;
                intensity_sum += u64::from(raw.get(x as u32, y as u32));
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
                for &(dx, dy) in neighbors {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || nx >= w || ny < 0 || ny >= h {
                        continue;
                    }
                    let idx = (ny * w + nx) as usize;
                    if !visited[idx] && b_f.get(nx as u32, ny as u32) == 1 {
                        visited[idx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            if area < u64::from(params.min_area_px) {
                continue;
            }
            let confidence = match params.confidence_rule {
                ConfidenceRule::AreaSaturating => {
                    (area as f64 / (4.0 * f64::from(params.min_area_px))).min(1.0)
                }
                ConfidenceRule::MeanIntensity => (intensity_sum as f64 / area as f64) / 255.0,
            };
            detections.push(Detection {
                clip_id: raw.clip_id.clone(),
                frame_index: raw.index,
                bbox: BoundingBox {
                    x: min_x as u32,
                    y: min_y as u32,
                    w: (max_x - min_x + 1) as u32,
                    h: (max_y - min_y + 1) as u32,
                },
                confidence,
            });
        }
    }
    Ok(detections)
}

/// Exactly the detections with confidence at least `tau`, order preserved.
pub fn filter_confidence(detections: &[Detection], tau: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(PipelineError::validation(format!(
            "confidence threshold must be in [0,1], got {tau}"
        )));
    }
    Ok(detections
        .iter()
        .filter(|d| d.confidence >= tau)
        .cloned()
        .collect())
}

// ---------------------------------------------------------------------------
// detection logs (JSON-lines, one record per detection)

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    clip_id: String,
    frame: u32,
    x: u32,
    y: u32,
    w: i64,
    h: i64,
    conf: f64,
}

/// Load a JSON-lines detection log into a per-(clip, frame) map.
/// Out-of-range confidences and non-positive sizes are rejected, not clamped.
pub fn load_detections(path: &Path) -> Result<BTreeMap<(String, u32), Vec<Detection>>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out: BTreeMap<(String, u32), Vec<Detection>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(line)
            .map_err(|e| PipelineError::parse(path, lineno, e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.conf) {
            return Err(PipelineError::parse(
                path,
                lineno,
                format!("confidence {} outside [0,1]", rec.conf),
            ));
        }
        if rec.w <= 0 || rec.h <= 0 {
            return Err(PipelineError::parse(
                path,
                lineno,
                format!("box size {}x{} must be positive", rec.w, rec.h),
            ));
        }
        out.entry((rec.clip_id.clone(), rec.frame))
            .or_default()
            .push(Detection {
                clip_id: rec.clip_id,
                frame_index: rec.frame,
                bbox: BoundingBox {
                    x: rec.x,
                    y: rec.y,
                    w: rec.w as u32,
                    h: rec.h as u32,
                },
                confidence: rec.conf,
            });
    }
    Ok(out)
}

pub fn save_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut out = Vec::new();
    for d in detections {
        let rec = DetectionRecord {
            clip_id: d.clip_id.clone(),
            frame: d.frame_index,
            x: d.bbox.x,
            y: d.bbox.y,
            w: i64::from(d.bbox.w),
            h: i64::from(d.bbox.h),
            conf: d.confidence,
        };
        serde_json::to_writer(&mut out, &rec).expect("record serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}
