//! Adaptive Gaussian-mixture background/foreground segmentation.
//!
//! Every pixel carries a small mixture of Gaussians (weight, mean, variance)
//! estimated recursively over the frame stream. A pixel is declared
//! foreground when its intensity is far — more than `var_threshold` times the
//! component variance, in squared distance — from every component inside the
//! leading `background_ratio` weight mass. Unmatched samples spawn new
//! components; a small complexity prior starves components that stop being
//! observed, and their slots are reclaimed.
//!
//! The update is deterministic: one clip replayed with the same parameters
//! produces bit-identical mask sequences. Frames of a clip must be presented
//! in index order; distinct clips are independent.

use serde::{Deserialize, Serialize};

use crate::clipio::Frame;
use crate::error::{PipelineError, Result};
use crate::maskpipe::BinaryMask;

/// Squared-distance multiple for matching a sample to an existing component
/// during the model update (the 3-sigma band).
const MATCH_VAR_FACTOR: f64 = 9.0;

/// Complexity prior subtracted (scaled by the learning rate) from every
/// component weight at each update; components driven to zero are discarded.
const COMPLEXITY_PRIOR: f64 = 0.01;

/// Component variance is clamped to `VAR_MAX_FACTOR * initial_variance`.
const VAR_MAX_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    /// Foreground decision threshold on the squared distance, in units of the
    /// component variance. Camera presets: 130 (DIDSON), 10 (ARIS).
    pub var_threshold: f64,
    /// Learning-rate horizon: after warm-up the rate is `1 / history`.
    pub history: u32,
    /// Per-pixel component budget, 1..=8.
    pub max_components: usize,
    /// Cumulative weight mass treated as background, in (0,1).
    pub background_ratio: f64,
    /// Variance assigned to newly created components.
    pub initial_variance: f64,
    /// Lower clamp for component variance; keeps the distance test finite.
    pub var_min: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        BackgroundParams {
            var_threshold: 16.0,
            history: 500,
            max_components: 5,
            background_ratio: 0.9,
            initial_variance: 15.0,
            var_min: 4.0,
        }
    }
}

impl BackgroundParams {
    /// DIDSON preset: decision threshold 130.
    pub fn didson() -> Self {
        BackgroundParams {
            var_threshold: 130.0,
            ..Default::default()
        }
    }

    /// ARIS preset: decision threshold 10.
    pub fn aris() -> Self {
        BackgroundParams {
            var_threshold: 10.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var_threshold.is_finite() && self.var_threshold > 0.0) {
            return Err(PipelineError::validation(format!(
                "var_threshold must be positive, got {}",
                self.var_threshold
            )));
        }
        if self.history == 0 {
            return Err(PipelineError::validation("history must be at least 1"));
        }
        if !(1..=8).contains(&self.max_components) {
            return Err(PipelineError::validation(format!(
                "max_components must be in 1..=8, got {}",
                self.max_components
            )));
        }
        if !(self.background_ratio.is_finite() && self.background_ratio > 0.0 && self.background_ratio < 1.0)
        {
            return Err(PipelineError::validation(format!(
                "background_ratio must be in (0,1), got {}",
                self.background_ratio
            )));
        }
        if !(self.initial_variance.is_finite() && self.initial_variance > 0.0) {
            return Err(PipelineError::validation("initial_variance must be positive"));
        }
        if !(self.var_min.is_finite() && self.var_min > 0.0) {
            return Err(PipelineError::validation("var_min must be positive"));
        }
        Ok(())
    }
}

/// One Gaussian of a per-pixel mixture.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

/// Per-pixel mixture state for one clip. Created empty; every call to
/// [`BackgroundModel::apply`] classifies the frame against the current model
/// and then folds the frame in.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    params: BackgroundParams,
    width: u32,
    height: u32,
    var_max: f64,
    // `max_components` slots per pixel, row-major; `n_live[p]` are in use,
    // kept sorted by descending weight.
    comps: Vec<Component>,
    n_live: Vec<u8>,
    frames_seen: u64,
    last_index: Option<u32>,
}

impl BackgroundModel {
    pub fn new(params: BackgroundParams, width: u32, height: u32) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(PipelineError::validation(format!(
                "frame size must be positive, got {width}x{height}"
            )));
        }
        let n_px = width as usize * height as usize;
        Ok(BackgroundModel {
            var_max: VAR_MAX_FACTOR * params.initial_variance,
            comps: vec![Component::default(); n_px * params.max_components],
            n_live: vec![0; n_px],
            params,
            width,
            height,
            frames_seen: 0,
            last_index: None,
        })
    }

    pub fn params(&self) -> &BackgroundParams {
        &self.params
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Live components of one pixel, heaviest first.
    pub fn pixel_components(&self, x: u32, y: u32) -> &[Component] {
        let p = y as usize * self.width as usize + x as usize;
        let base = p * self.params.max_components;
        &self.comps[base..base + usize::from(self.n_live[p])]
    }

    /// Classify `frame` against the current model and update it in place.
    /// Returns the foreground mask `b` (1 = foreground).
    pub fn apply(&mut self, frame: &Frame) -> Result<BinaryMask> {
        if frame.width != self.width || frame.height != self.height {
            return Err(PipelineError::validation(format!(
                "clip {}: frame {} is {}x{} but the model was initialised for {}x{}",
                frame.clip_id, frame.index, frame.width, frame.height, self.width, self.height
            )));
        }
        if let Some(last) = self.last_index {
            if frame.index <= last {
                return Err(PipelineError::OutOfOrderFrame {
                    clip_id: frame.clip_id.clone(),
                    index: frame.index,
                    last,
                });
            }
        }
        self.last_index = Some(frame.index);
        self.frames_seen += 1;

        // Warm-up: adapt at 1/n for the first `history` frames, then settle.
        let alpha = 1.0 / (self.frames_seen.min(u64::from(self.params.history)) as f64);

        let mut mask = BinaryMask::zeros(self.width, self.height);
        let max_c = self.params.max_components;
        for y in 0..self.height {
            for x in 0..self.width {
                let p = y as usize * self.width as usize + x as usize;
                let slots = &mut self.comps[p * max_c..(p + 1) * max_c];
                let foreground = step_pixel(
                    slots,
                    &mut self.n_live[p],
                    f64::from(frame.get(x, y)),
                    &self.params,
                    self.var_max,
                    alpha,
                );
                if foreground {
                    mask.set(x, y, 1);
                }
            }
        }
        Ok(mask)
    }
}

/// One recursive mixture update for a single pixel. Returns the foreground
/// decision made against the model state *before* the update.
fn step_pixel(
    slots: &mut [Component],
    n_live: &mut u8,
    x: f64,
    p: &BackgroundParams,
    var_max: f64,
    alpha: f64,
) -> bool {
    let mut n = usize::from(*n_live);

    // Decision: background iff some component within the leading
    // `background_ratio` mass has (x - mean)^2 <= var_threshold * var.
    let mut foreground = true;
    let mut cum = 0.0;
    for c in slots[..n].iter() {
        if cum >= p.background_ratio {
            break;
        }
        let d = x - c.mean;
        if d * d <= p.var_threshold * c.var {
            foreground = false;
            break;
        }
        cum += c.weight;
    }

    // Match: the heaviest component whose 3-sigma band contains the sample.
    let mut matched = None;
    for (i, c) in slots[..n].iter().enumerate() {
        let d = x - c.mean;
        if d * d < MATCH_VAR_FACTOR * c.var {
            matched = Some(i);
            break;
        }
    }

    for c in slots[..n].iter_mut() {
        c.weight = c.weight * (1.0 - alpha) - alpha * COMPLEXITY_PRIOR;
    }

    if let Some(i) = matched {
        let c = &mut slots[i];
        c.weight += alpha;
        let d = x - c.mean;
        let k = alpha / c.weight;
        c.mean += k * d;
        c.var = (c.var + k * (d * d - c.var)).clamp(p.var_min, var_max);
    }

    // Discard components starved by the complexity prior.
    let mut write = 0;
    for read in 0..n {
        if slots[read].weight > 0.0 {
            slots[write] = slots[read];
            write += 1;
        }
    }
    n = write;

    if matched.is_none() {
        if n == slots.len() {
            n -= 1; // evict the weakest
        }
        slots[n] = Component {
            weight: if n == 0 { 1.0 } else { alpha },
            mean: x,
            var: p.initial_variance,
        };
        n += 1;
    }

    // Stable insertion sort, heaviest first.
    for i in 1..n {
        let mut j = i;
        while j > 0 && slots[j].weight > slots[j - 1].weight {
            slots.swap(j, j - 1);
            j -= 1;
        }
    }

    let total: f64 = slots[..n].iter().map(|c| c.weight).sum();
    for c in slots[..n].iter_mut() {
        c.weight /= total;
    }

    *n_live = n as u8;
    foreground
}
