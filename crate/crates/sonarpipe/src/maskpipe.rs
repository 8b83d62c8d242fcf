//! Mask denoising and multichannel composition.
//!
//! The foreground mask `b` coming out of background segmentation is noisy;
//! a 3x3 median filter followed by a morphological opening with a 3x3
//! cross-shaped structuring element turns it into the cleaned mask `b_f`.
//! `compose` then packs the raw frame and the two masks into an RGB image:
//! raw in blue, `b` in green, `b_f` in red.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clipio::Frame;
use crate::error::{PipelineError, Result};

/// Row-major binary mask; every stored value is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<u8>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn zeros(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(PipelineError::validation(format!(
                "mask data length {} does not match {width}x{height}",
                bits.len()
            )));
        }
        if let Some(v) = bits.iter().find(|&&v| v > 1) {
            return Err(PipelineError::validation(format!(
                "mask values must be 0 or 1, found {v}"
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        debug_assert!(v <= 1);
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn same_size(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 0/255 expansion used when masks are written as 8-bit images.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b * 255).collect()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }
}

/// 3x3 median of a binary mask: each output bit is the majority of the nine
/// samples in its neighborhood. Borders are handled by edge replication.
pub fn median3x3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let mut ones = 0u8;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = (x + dx).clamp(0, w - 1) as u32;
                    let sy = (y + dy).clamp(0, h - 1) as u32;
                    ones += mask.get(sx, sy);
                }
            }
            out.set(x as u32, y as u32, u8::from(ones >= 5));
        }
    }
    out
}

// The 5-pixel cross: center plus its 4-neighbors.
const CROSS: [(i64, i64); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// Morphological opening (erosion then dilation) with a 3x3 cross-shaped
/// structuring element. Out-of-bounds samples count as background during
/// erosion; dilation simply skips out-of-bounds positions.
pub fn open_cross3x3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);

    let mut eroded = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let keep = CROSS.iter().all(|&(dx, dy)| {
                let (sx, sy) = (x + dx, y + dy);
                sx >= 0 && sx < w && sy >= 0 && sy < h && mask.get(sx as u32, sy as u32) == 1
            });
            eroded.set(x as u32, y as u32, u8::from(keep));
        }
    }

    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if eroded.get(x as u32, y as u32) == 1 {
                for &(dx, dy) in &CROSS {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0 && sx < w && sy >= 0 && sy < h {
                        out.set(sx as u32, sy as u32, 1);
                    }
                }
            }
        }
    }
    out
}

/// Which channels of the composed image are populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComposeMode {
    /// Raw frame only (blue channel).
    R,
    /// Raw + background mask `b` (green).
    Rb,
    /// Raw + filtered mask `b_f` (red).
    RbF,
    /// Raw + both masks.
    RbbF,
}

impl ComposeMode {
    pub fn uses_b(self) -> bool {
        matches!(self, ComposeMode::Rb | ComposeMode::RbbF)
    }

    pub fn uses_b_f(self) -> bool {
        matches!(self, ComposeMode::RbF | ComposeMode::RbbF)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComposeMode::R => "r",
            ComposeMode::Rb => "rb",
            ComposeMode::RbF => "rb_f",
            ComposeMode::RbbF => "rbb_f",
        }
    }
}

impl fmt::Display for ComposeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComposeMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(ComposeMode::R),
            "rb" => Ok(ComposeMode::Rb),
            "rb_f" => Ok(ComposeMode::RbF),
            "rbb_f" => Ok(ComposeMode::RbbF),
            other => Err(PipelineError::validation(format!(
                "unknown compose mode {other:?}; expected one of r, rb, rb_f, rbb_f"
            ))),
        }
    }
}

/// Three-channel detector input. Unpopulated channels are all-zero; mask
/// channels store 0/255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedFrame {
    pub width: u32,
    pub height: u32,
    pub mode: ComposeMode,
    pub red: Vec<u8>,
    pub green: Vec<u8>,
    pub blue: Vec<u8>,
}

impl ComposedFrame {
    /// Interleaved RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width as usize * self.height as usize;
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            out.push(self.red[i]);
            out.push(self.green[i]);
            out.push(self.blue[i]);
        }
        out
    }

    /// Recover the inputs: raw pixels plus whichever masks the mode carries.
    pub fn extract_channels(&self) -> (Vec<u8>, Option<BinaryMask>, Option<BinaryMask>) {
        let unpack = |chan: &[u8]| {
            let bits = chan.iter().map(|&v| u8::from(v != 0)).collect();
            BinaryMask::from_bits(self.width, self.height, bits).expect("channel size matches")
        };
        let b = self.mode.uses_b().then(|| unpack(&self.green));
        let b_f = self.mode.uses_b_f().then(|| unpack(&self.red));
        (self.blue.clone(), b, b_f)
    }
}

/// Pack the raw frame and masks into the channel layout for `mode`.
/// Masks not required by the mode are ignored; missing required masks are an
/// error.
pub fn compose(
    raw: &Frame,
    b: Option<&BinaryMask>,
    b_f: Option<&BinaryMask>,
    mode: ComposeMode,
) -> Result<ComposedFrame> {
    let n = raw.width as usize * raw.height as usize;

    let pick = |mask: Option<&BinaryMask>, name: &str, wanted: bool| -> Result<Vec<u8>> {
        if !wanted {
            return Ok(vec![0; n]);
        }
        let mask = mask.ok_or_else(|| {
            PipelineError::validation(format!("mode {mode} requires the {name} mask"))
        })?;
        if mask.width != raw.width || mask.height != raw.height {
            return Err(PipelineError::validation(format!(
                "{name} mask is {}x{} but frame is {}x{}",
                mask.width, mask.height, raw.width, raw.height
            )));
        }
        Ok(mask.to_gray8())
    };

    let green = pick(b, "b", mode.uses_b())?;
    let red = pick(b_f, "b_f", mode.uses_b_f())?;

    Ok(ComposedFrame {
        width: raw.width,
        height: raw.height,
        mode,
        red,
        green,
        blue: raw.pixels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::clipio::Frame;

    fn mask_from(rows: &[&[u8]]) -> BinaryMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        BinaryMask::from_bits(w, h, rows.concat()).unwrap()
    }

    /// Brute-force median: sort each replicated 9-neighborhood, take element 4.
    fn median_oracle(mask: &BinaryMask) -> BinaryMask {
        let (w, h) = (mask.width as i64, mask.height as i64);
        let mut out = BinaryMask::zeros(mask.width, mask.height);
        for y in 0..h {
            for x in 0..w {
                let mut vals = Vec::with_capacity(9);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let sx = (x + dx).clamp(0, w - 1) as u32;
                        let sy = (y + dy).clamp(0, h - 1) as u32;
                        vals.push(mask.get(sx, sy));
                    }
                }
                vals.sort_unstable();
                out.set(x as u32, y as u32, vals[4]);
            }
        }
        out
    }

    #[test]
    fn median_constant_masks_unchanged() {
        for fill in [0u8, 1u8] {
            let m = BinaryMask::from_bits(8, 6, vec![fill; 48]).unwrap();
            assert_eq!(median3x3(&m), m);
        }
    }

    #[test]
    fn median_removes_isolated_pixel() {
        let mut m = BinaryMask::zeros(9, 9);
        m.set(4, 4, 1);
        assert_eq!(median3x3(&m).count_ones(), 0);
    }

    #[test]
    fn median_matches_sort_oracle_on_random_masks() {
        let mut state = 0x2545f4914f6cdd1du64;
        for _ in 0..50 {
            let bits: Vec<u8> = (0..32 * 32)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state & 1) as u8
                })
                .collect();
            let m = BinaryMask::from_bits(32, 32, bits).unwrap();
            assert_eq!(median3x3(&m), median_oracle(&m));
        }
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let mut m = BinaryMask::zeros(7, 7);
        m.set(3, 3, 1);
        assert_eq!(open_cross3x3(&m).count_ones(), 0);
    }

    #[test]
    fn opening_of_solid_square_is_cross() {
        // A 3x3 solid square erodes to its center pixel, which dilates back
        // into the 5-pixel cross.
        let mut m = BinaryMask::zeros(7, 7);
        for y in 2..5 {
            for x in 2..5 {
                m.set(x, y, 1);
            }
        }
        let opened = open_cross3x3(&m);
        let expected = mask_from(&[
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, 0, 0, 1, 0, 0, 0],
            &[0, 0, 1, 1, 1, 0, 0],
            &[0, 0, 0, 1, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0, 0],
        ]);
        assert_eq!(opened, expected);
    }

    fn frame_of(width: u32, height: u32, pixels: Vec<u8>) -> Frame {
        Frame {
            clip_id: "t".into(),
            index: 0,
            timestamp_s: 0.0,
            width,
            height,
            pixels,
        }
    }

    #[test]
    fn compose_channel_assignment() {
        // r=100, b=1, b_f=0 under rbb_f -> (red 0, green 255, blue 100).
        let raw = frame_of(1, 1, vec![100]);
        let b = BinaryMask::from_bits(1, 1, vec![1]).unwrap();
        let b_f = BinaryMask::from_bits(1, 1, vec![0]).unwrap();
        let c = compose(&raw, Some(&b), Some(&b_f), ComposeMode::RbbF).unwrap();
        assert_eq!((c.red[0], c.green[0], c.blue[0]), (0, 255, 100));
    }

    #[test]
    fn compose_mode_r_leaves_masks_zero() {
        let raw = frame_of(2, 2, vec![10, 20, 30, 40]);
        let b = BinaryMask::from_bits(2, 2, vec![1, 1, 1, 1]).unwrap();
        let c = compose(&raw, Some(&b), None, ComposeMode::R).unwrap();
        assert!(c.green.iter().all(|&v| v == 0));
        assert!(c.red.iter().all(|&v| v == 0));
        assert_eq!(c.blue, raw.pixels);
    }

    #[test]
    fn compose_missing_required_mask_is_error() {
        let raw = frame_of(2, 2, vec![0; 4]);
        assert!(compose(&raw, None, None, ComposeMode::Rb).is_err());
        assert!(compose(&raw, None, None, ComposeMode::RbF).is_err());
    }

    #[test]
    fn compose_extract_round_trip() {
        let raw = frame_of(3, 2, vec![9, 8, 7, 6, 5, 4]);
        let b = mask_from(&[&[1, 0, 1], &[0, 1, 0]]);
        let b_f = mask_from(&[&[0, 0, 1], &[1, 0, 0]]);
        let c = compose(&raw, Some(&b), Some(&b_f), ComposeMode::RbbF).unwrap();
        let (r2, b2, bf2) = c.extract_channels();
        assert_eq!(r2, raw.pixels);
        assert_eq!(b2.unwrap(), b);
        assert_eq!(bf2.unwrap(), b_f);
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [
            ComposeMode::R,
            ComposeMode::Rb,
            ComposeMode::RbF,
            ComposeMode::RbbF,
        ] {
            assert_eq!(mode.as_str().parse::<ComposeMode>().unwrap(), mode);
        }
        assert!("rbbf".parse::<ComposeMode>().is_err());
    }

    fn arb_mask(max_side: u32) -> impl Strategy<Value = BinaryMask> {
        (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..=1, (w * h) as usize)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn median_is_self_dual(m in arb_mask(16)) {
            prop_assert_eq!(median3x3(&m.complement()), median3x3(&m).complement());
        }

        #[test]
        fn opening_is_anti_extensive_and_idempotent(m in arb_mask(16)) {
            let once = open_cross3x3(&m);
            // output is a subset of the input
            for (a, b) in once.bits().iter().zip(m.bits()) {
                prop_assert!(a <= b);
            }
            prop_assert!(once.count_ones() <= m.count_ones());
            prop_assert_eq!(open_cross3x3(&once), once);
        }

        #[test]
        fn median_never_creates_neighborless_foreground(m in arb_mask(16)) {
            let filtered = median3x3(&m);
            let (w, h) = (m.width as i64, m.height as i64);
            for y in 0..h {
                for x in 0..w {
                    if filtered.get(x as u32, y as u32) == 0 {
                        continue;
                    }
                    let mut support = 0;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let sx = (x + dx).clamp(0, w - 1) as u32;
                            let sy = (y + dy).clamp(0, h - 1) as u32;
                            support += m.get(sx, sy) as u32;
                        }
                    }
                    // majority needs at least five foreground samples
                    prop_assert!(support > 0);
                }
            }
        }
    }
}
