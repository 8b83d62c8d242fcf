//! Clip, annotation and passage-log I/O plus the deterministic dataset split.
//!
//! On-disk formats:
//! - clip manifest: UTF-8 JSON (`{clip_id, camera, frame_rate_hz, width_px,
//!   height_px, frames: [paths]}`); frame paths are resolved relative to the
//!   manifest's directory,
//! - frames: 8-bit grayscale PGM (binary `P5`) or PNG,
//! - annotations: one text file per frame (`<index>.txt`), lines in
//!   normalized center format `label cx cy w h`,
//! - passage logs: CSV with header `clip_id,timestamp_s,species,size_class,direction`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    #[serde(rename = "DIDSON")]
    Didson,
    #[serde(rename = "ARIS")]
    Aris,
}

impl Camera {
    pub fn as_str(self) -> &'static str {
        match self {
            Camera::Didson => "DIDSON",
            Camera::Aris => "ARIS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub camera: Camera,
    pub frame_rate_hz: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub frames: Vec<PathBuf>,
}

impl ClipManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(PipelineError::validation(format!(
                "clip {}: manifest lists no frames",
                self.clip_id
            )));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(PipelineError::validation(format!(
                "clip {}: frame_rate_hz must be positive, got {}",
                self.clip_id, self.frame_rate_hz
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(PipelineError::validation(format!(
                "clip {}: frame size must be positive, got {}x{}",
                self.clip_id, self.width_px, self.height_px
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> u32 {
        self.frames.len() as u32
    }
}

/// One 8-bit grayscale sonar image with its position in the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub clip_id: String,
    pub index: u32,
    /// `index / frame_rate_hz`.
    pub timestamp_s: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major intensities, length `width * height`.
    pub pixels: Vec<u8>,
}

impl Frame {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame_index: u32,
    pub bbox: BoundingBox,
    pub label: String,
}

/// Label every annotation evaluates under; species labels coalesce to this.
pub const FISH_LABEL: &str = "fish";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    #[serde(rename = "20-40")]
    S20_40,
    #[serde(rename = "40-60")]
    S40_60,
    #[serde(rename = "60-80")]
    S60_80,
    #[serde(rename = ">80")]
    Gt80,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::S20_40,
        SizeClass::S40_60,
        SizeClass::S60_80,
        SizeClass::Gt80,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::S20_40 => "20-40",
            SizeClass::S40_60 => "40-60",
            SizeClass::S60_80 => "60-80",
            SizeClass::Gt80 => ">80",
        }
    }

    /// Class for a body length in centimeters; lengths under 20 cm fall into
    /// the smallest class.
    pub fn from_length_cm(cm: f64) -> SizeClass {
        if cm < 40.0 {
            SizeClass::S20_40
        } else if cm < 60.0 {
            SizeClass::S40_60
        } else if cm < 80.0 {
            SizeClass::S60_80
        } else {
            SizeClass::Gt80
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "UP")]
    Up,
    #[serde(rename = "DOWN")]
    Down,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

/// Operator-logged fish passage: the ecological ground-truth unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub clip_id: String,
    pub timestamp_s: f64,
    pub species: String,
    pub size_class: SizeClass,
    pub direction: Direction,
}

// ---------------------------------------------------------------------------
// manifest + frame loading

pub fn load_manifest(path: &Path) -> Result<ClipManifest> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let manifest: ClipManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Format {
        format: "manifest",
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &ClipManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// Load a manifest and all of the frames it references, in manifest order.
pub fn load_clip(manifest_path: &Path) -> Result<(ClipManifest, Vec<Frame>)> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (index, rel) in manifest.frames.iter().enumerate() {
        let path = if rel.is_absolute() {
            rel.clone()
        } else {
            base.join(rel)
        };
        let (width, height, pixels) = read_gray_image(&path)?;
        if width != manifest.width_px || height != manifest.height_px {
            return Err(PipelineError::validation(format!(
                "clip {}: frame {} is {}x{} but manifest declares {}x{}",
                manifest.clip_id, path.display(), width, height,
                manifest.width_px, manifest.height_px
            )));
        }
        let index = index as u32;
        frames.push(Frame {
            clip_id: manifest.clip_id.clone(),
            index,
            timestamp_s: f64::from(index) / manifest.frame_rate_hz,
            width,
            height,
            pixels,
        });
    }
    Ok((manifest, frames))
}

/// Read an 8-bit grayscale image (PGM or PNG, chosen by extension).
pub fn read_gray_image(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => decode_pgm(path, &bytes),
        Some("png") => {
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| PipelineError::Format {
                    format: "png",
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
            let gray = img.to_luma8();
            Ok((gray.width(), gray.height(), gray.into_raw()))
        }
        other => Err(PipelineError::validation(format!(
            "unsupported frame format {:?} for {}; expected .pgm or .png",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let bad = |message: String| PipelineError::Format {
        format: "pgm",
        path: path.to_path_buf(),
        message,
    };

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic".into()));
    }

    // Header tokens may be separated by whitespace and '#' comment lines.
    let mut pos = 2usize;
    let next_token = |pos: &mut usize| -> Result<u32> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("truncated header".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .expect("digits are utf-8")
            .parse::<u32>()
            .map_err(|e| bad(format!("bad header value: {e}")))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("unsupported maxval {maxval}; need 8-bit data")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing whitespace before pixel data".into()));
    }
    pos += 1;

    let expected = width as usize * height as usize;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(bad(format!(
            "pixel payload is {} bytes, expected {expected}",
            data.len()
        )));
    }
    Ok((width, height, data.to_vec()))
}

pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width as usize * height as usize);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    image::save_buffer(path, rgb, width, height, image::ExtendedColorType::Rgb8).map_err(|e| {
        PipelineError::Format {
            format: "png",
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

// ---------------------------------------------------------------------------
// annotations

/// Load per-frame annotation files from a directory.
///
/// Every `<index>.txt` file becomes a map entry, so a frame annotated with an
/// empty file is reported as an empty list (a no-fish image), while frames
/// without a file stay absent. With `coalesce_labels` every species label is
/// replaced by [`FISH_LABEL`].
pub fn load_annotations(
    dir: &Path,
    width: u32,
    height: u32,
    coalesce_labels: bool,
) -> Result<BTreeMap<u32, Vec<Annotation>>> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(index) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u32>().ok())
        else {
            continue;
        };
        let anns = load_annotation_file(&path, index, width, height, coalesce_labels)?;
        out.insert(index, anns);
    }
    Ok(out)
}

pub fn load_annotation_file(
    path: &Path,
    frame_index: u32,
    width: u32,
    height: u32,
    coalesce_labels: bool,
) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut anns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(PipelineError::parse(
                path,
                lineno,
                format!("expected 5 fields `label cx cy w h`, got {}", fields.len()),
            ));
        }
        let label = fields[0];
        if label.is_empty() {
            return Err(PipelineError::parse(path, lineno, "empty label"));
        }
        let mut coords = [0f64; 4];
        for (slot, raw) in coords.iter_mut().zip(&fields[1..]) {
            let v: f64 = raw
                .parse()
                .map_err(|e| PipelineError::parse(path, lineno, format!("bad number {raw:?}: {e}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::parse(
                    path,
                    lineno,
                    format!("coordinate {v} outside [0,1]"),
                ));
            }
            *slot = v;
        }
        let [cx, cy, bw, bh] = coords;
        let bbox = denormalize_bbox(cx, cy, bw, bh, width, height);
        anns.push(Annotation {
            frame_index,
            bbox,
            label: if coalesce_labels {
                FISH_LABEL.to_string()
            } else {
                label.to_string()
            },
        });
    }
    Ok(anns)
}

/// Normalized center box to pixel box: corners are rounded to the nearest
/// integer and the result is clamped inside the frame with at least 1 px of
/// extent.
pub fn denormalize_bbox(cx: f64, cy: f64, w: f64, h: f64, width: u32, height: u32) -> BoundingBox {
    let side = |c: f64, s: f64, limit: u32| -> (u32, u32) {
        let limit_f = f64::from(limit);
        let lo = ((c - s / 2.0) * limit_f).round().clamp(0.0, limit_f - 1.0) as u32;
        let hi = ((c + s / 2.0) * limit_f).round().clamp(0.0, limit_f) as u32;
        let hi = hi.max(lo + 1);
        (lo, hi - lo)
    };
    let (x, w) = side(cx, w, width);
    let (y, h) = side(cy, h, height);
    BoundingBox { x, y, w, h }
}

pub fn normalize_bbox(bbox: &BoundingBox, width: u32, height: u32) -> (f64, f64, f64, f64) {
    let (wf, hf) = (f64::from(width), f64::from(height));
    let wn = f64::from(bbox.w) / wf;
    let hn = f64::from(bbox.h) / hf;
    let cx = f64::from(bbox.x) / wf + wn / 2.0;
    let cy = f64::from(bbox.y) / hf + hn / 2.0;
    (cx, cy, wn, hn)
}

/// Write one `<index>.txt` per map entry (empty entries produce empty files).
pub fn save_annotations(
    dir: &Path,
    annotations: &BTreeMap<u32, Vec<Annotation>>,
    width: u32,
    height: u32,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    for (&index, anns) in annotations {
        let path = dir.join(format!("{index:06}.txt"));
        let mut text = String::new();
        for ann in anns {
            let (cx, cy, w, h) = normalize_bbox(&ann.bbox, width, height);
            text.push_str(&format!("{} {cx} {cy} {w} {h}\n", ann.label));
        }
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// passage logs

pub fn load_passages(path: &Path) -> Result<Vec<PassageRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| PipelineError::Format {
        format: "passage csv",
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, record) in reader.deserialize::<PassageRecord>().enumerate() {
        let record = record.map_err(|e| PipelineError::parse(path, i + 2, e.to_string()))?;
        if record.timestamp_s < 0.0 {
            return Err(PipelineError::parse(
                path,
                i + 2,
                format!("negative timestamp {}", record.timestamp_s),
            ));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn save_passages(path: &Path, passages: &[PassageRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| PipelineError::Format {
        format: "passage csv",
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for p in passages {
        writer
            .serialize(p)
            .map_err(|e| PipelineError::Format {
                format: "passage csv",
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
    }
    writer.flush().map_err(|e| PipelineError::io(path, e))
}

// ---------------------------------------------------------------------------
// dataset split

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Largest-remainder apportionment of `n` items over three buckets.
/// Remainder ties go to the earlier bucket.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("ratios are finite")
    });
    for &bucket in order.iter().take(n - assigned) {
        sizes[bucket] += 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Deterministic train/val/test split: seeded shuffle, then sizes chosen by
/// largest-remainder rounding so they cover the input exactly.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if items.is_empty() {
        return Err(PipelineError::validation("cannot split an empty item set"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::validation(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    if ratios.iter().any(|r| *r < 0.0) {
        return Err(PipelineError::validation("split ratios must be non-negative"));
    }

    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let [n_train, n_val, _] = apportion(items.len(), ratios);
    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..items.len()),
    })
}

/// Split within groups of equal `key`, so every stratum follows the requested
/// ratios. Groups are processed in sorted key order off one seeded stream.
pub fn split_dataset_stratified<T: Clone, K: Ord, F: Fn(&T) -> K>(
    items: &[T],
    ratios: [f64; 3],
    seed: u64,
    key: F,
) -> Result<DatasetSplit<T>> {
    if items.is_empty() {
        return Err(PipelineError::validation("cannot split an empty item set"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::validation(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }

    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        groups.entry(key(item)).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut indices) in groups {
        indices.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(indices.len(), ratios);
        for (slot, &i) in indices.iter().enumerate() {
            let item = items[i].clone();
            if slot < n_train {
                split.train.push(item);
            } else if slot < n_train + n_val {
                split.val.push(item);
            } else {
                split.test.push(item);
            }
        }
    }
    Ok(split)
}

/// The paper's image-split ratios: 60% train, 19% val, 21% test.
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.60, 0.19, 0.21];
