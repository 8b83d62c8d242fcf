//! Deterministic synthetic acoustic clips with exact ground truth.
//!
//! Frames are speckle noise (per-pixel Gaussian plus salt-and-pepper) with
//! bright elongated "fish" ellipses swimming through. The generator returns
//! the frames together with per-frame bounding boxes and an operator-style
//! passage log, which makes it the oracle data source for end-to-end tests.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clipio::{
    self, Annotation, Camera, ClipManifest, Direction, Frame, PassageRecord, SizeClass,
};
use crate::error::{PipelineError, Result};
use crate::geometry::BoundingBox;

/// Vertical wiggle frequency of a swimming fish, in cycles per frame.
const UNDULATION_CYCLES_PER_FRAME: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Probability that a pixel is replaced by 255 or 0 (half each).
    pub salt_pepper_rate: f64,
    pub background_mean: f64,
    pub background_std: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            salt_pepper_rate: 0.002,
            background_mean: 40.0,
            background_std: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FishSpec {
    /// Frame at which the nose crosses into the frame.
    pub entry_frame: u32,
    /// Horizontal speed; positive swims left-to-right, negative right-to-left.
    pub speed_px_per_frame: f64,
    pub length_px: u32,
    pub thickness_px: u32,
    /// Body intensity; rendered as `max(noise, intensity)`.
    pub intensity: u8,
    pub undulation_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clip_id: String,
    pub camera: Camera,
    pub width: u32,
    pub height: u32,
    pub n_frames: u32,
    pub frame_rate_hz: f64,
    pub noise: NoiseParams,
    pub fish: Vec<FishSpec>,
    pub seed: u64,
    /// Scale used to map body length in pixels to the size classes.
    pub px_per_cm: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clip_id: "synth".into(),
            camera: Camera::Didson,
            width: 256,
            height: 160,
            n_frames: 300,
            frame_rate_hz: 5.0,
            noise: NoiseParams::default(),
            fish: Vec::new(),
            seed: 0,
            px_per_cm: 4.0,
        }
    }
}

impl SynthConfig {
    fn lane_y(&self, fish_index: usize) -> f64 {
        f64::from(self.height) * (fish_index as f64 + 1.0) / (self.fish.len() as f64 + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_frames == 0 {
            return Err(PipelineError::validation(
                "synthetic clip needs positive width, height and frame count",
            ));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(PipelineError::validation("frame rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise.salt_pepper_rate) {
            return Err(PipelineError::validation("salt_pepper_rate must be in [0,1]"));
        }
        if self.noise.background_std < 0.0 {
            return Err(PipelineError::validation("background_std must be non-negative"));
        }
        if !(self.px_per_cm.is_finite() && self.px_per_cm > 0.0) {
            return Err(PipelineError::validation("px_per_cm must be positive"));
        }
        for (i, fish) in self.fish.iter().enumerate() {
            if fish.length_px == 0 || fish.thickness_px == 0 {
                return Err(PipelineError::validation(format!(
                    "fish {i} has zero extent"
                )));
            }
            if fish.speed_px_per_frame == 0.0 {
                return Err(PipelineError::validation(format!(
                    "fish {i} has zero speed and would never transit"
                )));
            }
            if fish.undulation_amplitude < 0.0 {
                return Err(PipelineError::validation(format!(
                    "fish {i} has negative undulation amplitude"
                )));
            }
            if fish.length_px >= self.width {
                return Err(PipelineError::validation(format!(
                    "fish {i} is {} px long but the frame is only {} px wide",
                    fish.length_px, self.width
                )));
            }
            let half_band = f64::from(fish.thickness_px) / 2.0 + fish.undulation_amplitude;
            let lane = self.lane_y(i);
            if lane - half_band < 0.0 || lane + half_band > f64::from(self.height) - 1.0 {
                return Err(PipelineError::validation(format!(
                    "fish {i} (lane y={lane:.1}, band +/-{half_band:.1}) exceeds the frame height"
                )));
            }
        }
        Ok(())
    }
}

/// A generated clip with its exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub manifest: ClipManifest,
    pub frames: Vec<Frame>,
    pub annotations: BTreeMap<u32, Vec<Annotation>>,
    pub passages: Vec<PassageRecord>,
}

struct FishState {
    spec: FishSpec,
    lane: f64,
    first_seen: Option<u32>,
    last_seen: Option<u32>,
}

impl FishState {
    /// Ellipse center at frame `t`, or None before entry.
    fn center(&self, t: u32, width: u32) -> Option<(f64, f64)> {
        if t < self.spec.entry_frame {
            return None;
        }
        let dt = f64::from(t - self.spec.entry_frame);
        let half_len = f64::from(self.spec.length_px) / 2.0;
        let speed = self.spec.speed_px_per_frame;
        let cx = if speed > 0.0 {
            speed * dt - half_len
        } else {
            f64::from(width) + half_len + speed * dt
        };
        let cy = self.lane
            + self.spec.undulation_amplitude * (TAU * UNDULATION_CYCLES_PER_FRAME * dt).sin();
        Some((cx, cy))
    }
}

/// Generate a clip. Bit-identical output for identical configurations.
pub fn gen_clip(cfg: &SynthConfig) -> Result<SynthClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(cfg.noise.background_mean, cfg.noise.background_std.max(1e-12))
        .expect("validated std");

    let mut fish: Vec<FishState> = cfg
        .fish
        .iter()
        .enumerate()
        .map(|(i, spec)| FishState {
            spec: *spec,
            lane: cfg.lane_y(i),
            first_seen: None,
            last_seen: None,
        })
        .collect();

    let (w, h) = (cfg.width, cfg.height);
    let n_px = w as usize * h as usize;
    let mut frames = Vec::with_capacity(cfg.n_frames as usize);
    let mut annotations: BTreeMap<u32, Vec<Annotation>> = BTreeMap::new();

    for t in 0..cfg.n_frames {
        let mut pixels = Vec::with_capacity(n_px);
        for _ in 0..n_px {
            let mut v = normal.sample(&mut rng).round().clamp(0.0, 255.0) as u8;
            let u: f64 = rng.random();
            if u < cfg.noise.salt_pepper_rate / 2.0 {
                v = 255;
            } else if u < cfg.noise.salt_pepper_rate {
                v = 0;
            }
            pixels.push(v);
        }

        let mut frame_anns = Vec::new();
        for f in fish.iter_mut() {
            let Some((cx, cy)) = f.center(t, w) else { continue };
            let a = f64::from(f.spec.length_px) / 2.0;
            let b = f64::from(f.spec.thickness_px) / 2.0;

            let x_lo = (cx - a).floor().max(0.0) as i64;
            let x_hi = (cx + a).ceil().min(f64::from(w) - 1.0) as i64;
            let y_lo = (cy - b).floor().max(0.0) as i64;
            let y_hi = (cy + b).ceil().min(f64::from(h) - 1.0) as i64;
            let (mut min_x, mut min_y) = (i64::MAX, i64::MAX);
            let (mut max_x, mut max_y) = (i64::MIN, i64::MIN);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let dx = (x as f64 - cx) / a;
                    let dy = (y as f64 - cy) / b;
                    if dx * dx + dy * dy <= 1.0 {
                        let idx = y as usize * w as usize + x as usize;
                        pixels[idx] = pixels[idx].max(f.spec.intensity);
                        min_x = min_x.min(x);
                        max_x = max_x.max(x);
                        min_y = min_y.min(y);
                        max_y = max_y.max(y);
                    }
                }
            }
            if min_x <= max_x {
                f.first_seen.get_or_insert(t);
                f.last_seen = Some(t);
                frame_anns.push(Annotation {
                    frame_index: t,
                    bbox: BoundingBox {
                        x: min_x as u32,
                        y: min_y as u32,
                        w: (max_x - min_x + 1) as u32,
                        h: (max_y - min_y + 1) as u32,
                    },
                    label: clipio::FISH_LABEL.to_string(),
                });
            }
        }
        annotations.insert(t, frame_anns);

        frames.push(Frame {
            clip_id: cfg.clip_id.clone(),
            index: t,
            timestamp_s: f64::from(t) / cfg.frame_rate_hz,
            width: w,
            height: h,
            pixels,
        });
    }

    // one passage per fish at its mid-transit timestamp
    let mut passages = Vec::new();
    for f in &fish {
        let (Some(first), Some(last)) = (f.first_seen, f.last_seen) else {
            continue;
        };
        let mid_frame = (f64::from(first) + f64::from(last)) / 2.0;
        let length_cm = f64::from(f.spec.length_px) / cfg.px_per_cm;
        passages.push(PassageRecord {
            clip_id: cfg.clip_id.clone(),
            timestamp_s: mid_frame / cfg.frame_rate_hz,
            species: "generic".into(),
            size_class: SizeClass::from_length_cm(length_cm),
            direction: if f.spec.speed_px_per_frame > 0.0 {
                Direction::Up
            } else {
                Direction::Down
            },
        });
    }

    let manifest = ClipManifest {
        clip_id: cfg.clip_id.clone(),
        camera: cfg.camera,
        frame_rate_hz: cfg.frame_rate_hz,
        width_px: w,
        height_px: h,
        frames: (0..cfg.n_frames)
            .map(|t| PathBuf::from(format!("frames/{t:06}.pgm")))
            .collect(),
    };

    Ok(SynthClip {
        manifest,
        frames,
        annotations,
        passages,
    })
}

/// Draw `n` plausible fish for a clip of the given geometry, deterministically
/// from `seed`. Entries are spread so every transit fits inside the clip.
pub fn sample_fish_specs(
    n: usize,
    width: u32,
    n_frames: u32,
    seed: u64,
) -> Vec<FishSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let speed: f64 = rng.random_range(2.0..3.5);
        let length_px: u32 = rng.random_range(60..=96);
        let transit = ((f64::from(width) + f64::from(length_px)) / speed).ceil() as u32;
        let latest_entry = n_frames.saturating_sub(transit + 5).max(6);
        specs.push(FishSpec {
            entry_frame: rng.random_range(5..=latest_entry),
            speed_px_per_frame: speed,
            length_px,
            thickness_px: rng.random_range(10..=14),
            intensity: rng.random_range(225..=250),
            undulation_amplitude: rng.random_range(0.0..2.0),
        });
    }
    specs
}

/// Write a generated clip in the standard layout: `clip.json`, `frames/*.pgm`,
/// `annotations/*.txt` and `passages.csv`. Returns the manifest path.
pub fn write_clip(dir: &Path, clip: &SynthClip) -> Result<PathBuf> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| PipelineError::io(&frames_dir, e))?;
    for frame in &clip.frames {
        let path = frames_dir.join(format!("{:06}.pgm", frame.index));
        clipio::write_pgm(&path, frame.width, frame.height, &frame.pixels)?;
    }
    clipio::save_annotations(
        &dir.join("annotations"),
        &clip.annotations,
        clip.manifest.width_px,
        clip.manifest.height_px,
    )?;
    clipio::save_passages(&dir.join("passages.csv"), &clip.passages)?;
    let manifest_path = dir.join("clip.json");
    clipio::save_manifest(&manifest_path, &clip.manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fishless(seed: u64) -> SynthConfig {
        SynthConfig {
            clip_id: "noise".into(),
            width: 64,
            height: 48,
            n_frames: 20,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fishless_clip_has_empty_ground_truth() {
        let clip = gen_clip(&fishless(1)).unwrap();
        assert_eq!(clip.frames.len(), 20);
        assert!(clip.passages.is_empty());
        assert!(clip.annotations.values().all(|a| a.is_empty()));
    }

    #[test]
    fn same_seed_is_bit_identical_different_seed_is_not() {
        let a = gen_clip(&fishless(7)).unwrap();
        let b = gen_clip(&fishless(7)).unwrap();
        assert_eq!(a, b);
        let c = gen_clip(&fishless(8)).unwrap();
        assert_ne!(a.frames[0].pixels, c.frames[0].pixels);
    }

    fn one_fish_config() -> SynthConfig {
        SynthConfig {
            clip_id: "one-fish".into(),
            width: 128,
            height: 64,
            n_frames: 120,
            fish: vec![FishSpec {
                entry_frame: 10,
                speed_px_per_frame: 2.0,
                length_px: 40,
                thickness_px: 10,
                intensity: 230,
                undulation_amplitude: 0.0,
            }],
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn constant_speed_advances_bbox_exactly() {
        let clip = gen_clip(&one_fish_config()).unwrap();
        let mut previous: Option<(u32, BoundingBox)> = None;
        let mut checked = 0;
        for (&t, anns) in &clip.annotations {
            if anns.is_empty() {
                continue;
            }
            let b = anns[0].bbox;
            let fully_inside = b.x > 0 && b.right() < 128;
            if let Some((pt, pb)) = previous {
                if fully_inside && pb.x > 0 && t == pt + 1 {
                    assert_eq!(b.x, pb.x + 2, "frame {t}");
                    assert_eq!(b.w, pb.w, "frame {t}");
                    checked += 1;
                }
            }
            previous = Some((t, b));
        }
        assert!(checked > 10, "only {checked} fully-in-frame steps");
    }

    #[test]
    fn fish_region_is_bright() {
        let cfg = one_fish_config();
        let clip = gen_clip(&cfg).unwrap();
        let floor = cfg.noise.background_mean + 2.0 * cfg.noise.background_std;
        for anns in clip.annotations.values() {
            for ann in anns {
                let frame = &clip.frames[ann.frame_index as usize];
                let b = ann.bbox;
                let bright = (b.y..b.bottom())
                    .flat_map(|y| (b.x..b.right()).map(move |x| (x, y)))
                    .any(|(x, y)| f64::from(frame.get(x, y)) > floor);
                assert!(bright, "frame {}", ann.frame_index);
            }
        }
    }

    #[test]
    fn passage_timestamp_lies_inside_transit() {
        let clip = gen_clip(&one_fish_config()).unwrap();
        assert_eq!(clip.passages.len(), 1);
        let visible: Vec<u32> = clip
            .annotations
            .iter()
            .filter(|(_, a)| !a.is_empty())
            .map(|(&t, _)| t)
            .collect();
        let t0 = f64::from(*visible.first().unwrap()) / 5.0;
        let t1 = f64::from(*visible.last().unwrap()) / 5.0;
        let ts = clip.passages[0].timestamp_s;
        assert!(ts >= t0 && ts <= t1, "{ts} outside [{t0}, {t1}]");
    }

    #[test]
    fn size_class_follows_px_per_cm_scale() {
        let mut cfg = one_fish_config();
        cfg.fish[0].length_px = 100; // 25 cm at 4 px/cm
        assert_eq!(gen_clip(&cfg).unwrap().passages[0].size_class, SizeClass::S20_40);
        cfg.fish[0].length_px = 100;
        cfg.px_per_cm = 1.0; // 100 cm
        assert_eq!(gen_clip(&cfg).unwrap().passages[0].size_class, SizeClass::Gt80);
    }

    #[test]
    fn oversized_fish_rejected() {
        let mut cfg = one_fish_config();
        cfg.fish[0].length_px = 400;
        assert!(gen_clip(&cfg).is_err());
        let mut cfg = one_fish_config();
        cfg.fish[0].thickness_px = 200;
        assert!(gen_clip(&cfg).is_err());
    }

    #[test]
    fn sampled_specs_are_deterministic_and_fit() {
        let a = sample_fish_specs(5, 256, 300, 11);
        let b = sample_fish_specs(5, 256, 300, 11);
        assert_eq!(a, b);
        for spec in &a {
            assert!(spec.length_px >= 60);
            let transit = ((256.0 + f64::from(spec.length_px)) / spec.speed_px_per_frame).ceil();
            assert!(f64::from(spec.entry_frame) + transit <= 300.0);
        }
    }

    #[test]
    fn written_clip_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_frames: 8,
            width: 40,
            height: 30,
            fish: vec![FishSpec {
                entry_frame: 0,
                speed_px_per_frame: 3.0,
                length_px: 20,
                thickness_px: 8,
                intensity: 240,
                undulation_amplitude: 1.0,
            }],
            ..Default::default()
        };
        let clip = gen_clip(&cfg).unwrap();
        let manifest_path = write_clip(dir.path(), &clip).unwrap();
        let (manifest, frames) = clipio::load_clip(&manifest_path).unwrap();
        assert_eq!(manifest.clip_id, clip.manifest.clip_id);
        assert_eq!(frames, clip.frames);
        let anns = clipio::load_annotations(&dir.path().join("annotations"), 40, 30, false).unwrap();
        assert_eq!(anns, clip.annotations);
        let passages = clipio::load_passages(&dir.path().join("passages.csv")).unwrap();
        assert_eq!(passages, clip.passages);
    }
}
