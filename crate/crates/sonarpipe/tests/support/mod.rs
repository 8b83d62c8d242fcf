//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here recomputes results from first principles — plain scalar
//! code, brute-force scans — and shares no algorithmic code with the library
//! under test.

use sonarpipe::geometry::BoundingBox;
use sonarpipe::maskpipe::BinaryMask;

// ---------------------------------------------------------------------------
// scalar Gaussian-mixture reference

/// Reference mixture state for a single pixel, updated one intensity at a
/// time. Mirrors the documented update rules directly on a plain `Vec`.
pub struct ScalarGmm {
    pub var_threshold: f64,
    pub history: u32,
    pub max_components: usize,
    pub background_ratio: f64,
    pub initial_variance: f64,
    pub var_min: f64,
    comps: Vec<(f64, f64, f64)>, // (weight, mean, var), heaviest first
    samples_seen: u64,
}

impl ScalarGmm {
    pub fn new(
        var_threshold: f64,
        history: u32,
        max_components: usize,
        background_ratio: f64,
        initial_variance: f64,
        var_min: f64,
    ) -> Self {
        ScalarGmm {
            var_threshold,
            history,
            max_components,
            background_ratio,
            initial_variance,
            var_min,
            comps: Vec::new(),
            samples_seen: 0,
        }
    }

    /// Feed one intensity; returns true when it is foreground under the
    /// model state prior to this update.
    pub fn step(&mut self, intensity: u8) -> bool {
        let x = f64::from(intensity);
        self.samples_seen += 1;
        let alpha = 1.0 / (self.samples_seen.min(u64::from(self.history)) as f64);

        // decision against the pre-update state
        let mut foreground = true;
        let mut cum = 0.0;
        for &(w, mean, var) in &self.comps {
            if cum >= self.background_ratio {
                break;
            }
            let d = x - mean;
            if d * d <= self.var_threshold * var {
                foreground = false;
                break;
            }
            cum += w;
        }

        // first component within three standard deviations
        let matched = self
            .comps
            .iter()
            .position(|&(_, mean, var)| (x - mean) * (x - mean) < 9.0 * var);

        for c in &mut self.comps {
            c.0 = c.0 * (1.0 - alpha) - alpha * 0.01;
        }
        if let Some(i) = matched {
            let (w, mean, var) = self.comps[i];
            let w = w + alpha;
            let d = x - mean;
            let k = alpha / w;
            let mean = mean + k * d;
            let var = (var + k * (d * d - var)).clamp(self.var_min, 5.0 * self.initial_variance);
            self.comps[i] = (w, mean, var);
        }
        self.comps.retain(|c| c.0 > 0.0);
        if matched.is_none() {
            if self.comps.len() == self.max_components {
                self.comps.pop();
            }
            let w = if self.comps.is_empty() { 1.0 } else { alpha };
            self.comps.push((w, x, self.initial_variance));
        }
        self.comps
            .sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite weight"));
        let total: f64 = self.comps.iter().map(|c| c.0).sum();
        for c in &mut self.comps {
            c.0 /= total;
        }
        foreground
    }
}

// ---------------------------------------------------------------------------
// brute-force morphology

/// Median by literally sorting each replicated 3x3 neighborhood and taking
/// the middle element.
pub fn median3x3_oracle(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let mut vals = Vec::with_capacity(9);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    vals.push(mask.get(sx as u32, sy as u32));
                }
            }
            vals.sort_unstable();
            out.set(x as u32, y as u32, vals[4]);
        }
    }
    out
}

/// Opening by separate brute-force erosion and dilation passes with the
/// 5-pixel cross.
pub fn open_cross3x3_oracle(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let offsets = [(0i64, 0i64), (1, 0), (-1, 0), (0, 1), (0, -1)];
    let sample = |m: &BinaryMask, x: i64, y: i64| -> u8 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            m.get(x as u32, y as u32)
        }
    };
    let mut eroded = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if offsets.iter().all(|&(dx, dy)| sample(mask, x + dx, y + dy) == 1) {
                eroded.set(x as u32, y as u32, 1);
            }
        }
    }
    let mut dilated = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if offsets.iter().any(|&(dx, dy)| sample(&eroded, x + dx, y + dy) == 1) {
                dilated.set(x as u32, y as u32, 1);
            }
        }
    }
    dilated
}

// ---------------------------------------------------------------------------
// brute-force average precision

fn iou_ref(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let x1 = a.x.max(b.x) as f64;
    let y1 = a.y.max(b.y) as f64;
    let x2 = ((a.x + a.w).min(b.x + b.w)) as f64;
    let y2 = ((a.y + a.h).min(b.y + b.h)) as f64;
    let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (a.w as f64) * (a.h as f64) + (b.w as f64) * (b.h as f64) - inter;
    inter / union
}

/// Scored detections plus ground truths of one image, oracle-side.
pub type OracleImage = (Vec<(BoundingBox, f64)>, Vec<BoundingBox>);

/// Average precision recomputed from scratch: explicit confidence sweep,
/// greedy matching, then "for every true positive, the best precision at or
/// after it" summed over the recall steps.
pub fn ap_oracle(images: &[OracleImage], iou_thresh: f64) -> f64 {
    let total_gts: usize = images.iter().map(|(_, g)| g.len()).sum();
    assert!(total_gts > 0, "oracle needs at least one ground truth");

    let mut dets: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, (ds, _)) in images.iter().enumerate() {
        for (di, &(_, conf)) in ds.iter().enumerate() {
            dets.push((ii, di, conf));
        }
    }
    // descending confidence; ties by image then detection input order
    dets.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut taken: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let mut is_tp = Vec::with_capacity(dets.len());
    for &(ii, di, _) in &dets {
        let (ds, gs) = &images[ii];
        let bbox = &ds[di].0;
        let mut best_gi = None;
        let mut best_iou = -1.0;
        for (gi, gt) in gs.iter().enumerate() {
            if taken[ii][gi] {
                continue;
            }
            let v = iou_ref(bbox, gt);
            if v > best_iou {
                best_iou = v;
                best_gi = Some(gi);
            }
        }
        if let Some(gi) = best_gi {
            if best_iou >= iou_thresh {
                taken[ii][gi] = true;
                is_tp.push(true);
                continue;
            }
        }
        is_tp.push(false);
    }

    let mut precisions = Vec::with_capacity(is_tp.len());
    let mut tp_so_far = 0usize;
    for (k, &tp) in is_tp.iter().enumerate() {
        if tp {
            tp_so_far += 1;
        }
        precisions.push(tp_so_far as f64 / (k + 1) as f64);
    }

    let mut ap = 0.0;
    for (k, &tp) in is_tp.iter().enumerate() {
        if !tp {
            continue;
        }
        // interpolated precision at this recall step: best precision from
        // here onward, found by brute-force scan
        let p = precisions[k..].iter().copied().fold(0.0f64, f64::max);
        ap += p / total_gts as f64;
    }
    ap
}

// ---------------------------------------------------------------------------
// closed-form kappa

/// Cohen's kappa straight from the agreement counts.
pub fn kappa_oracle(tp: u64, fn_: u64, fp: u64, tn: u64) -> f64 {
    let n = (tp + fn_ + fp + tn) as f64;
    let p0 = (tp + tn) as f64 / n;
    let pe = ((tp + fp) as f64 * (tp + fn_) as f64 + (fn_ + tn) as f64 * (fp + tn) as f64)
        / (n * n);
    (p0 - pe) / (1.0 - pe)
}

// ---------------------------------------------------------------------------
// tiny deterministic rng for fixture construction

/// SplitMix64; enough randomness for test fixtures without pulling the
/// library's generator into the oracle side.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
