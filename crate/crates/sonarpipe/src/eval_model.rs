//! Frame-level model validation: IoU matching, precision/recall/F1,
//! interpolated average precision at IoU 0.50, Cohen's kappa and the
//! column-normalized confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::geometry::{iou, BoundingBox};

/// Default IoU needed for a detection to count as a true positive.
pub const DEFAULT_IOU_THRESH: f64 = 0.5;

/// Detection/ground-truth tallies. `tp`, `fp` and `fn` count matched boxes;
/// `tn` counts no-fish images correctly predicted empty (there is no box to
/// count on an empty image).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// One annotated image: scored detections plus ground-truth boxes.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    /// `(box, confidence)`, confidence in [0,1].
    pub dets: Vec<(BoundingBox, f64)>,
    pub gts: Vec<BoundingBox>,
}

/// Per-detection and per-ground-truth match flags for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMatch {
    /// True positive flag per detection, in input order.
    pub det_is_tp: Vec<bool>,
    /// Matched flag per ground truth, in input order.
    pub gt_matched: Vec<bool>,
}

impl FrameMatch {
    pub fn counts(&self) -> MatchCounts {
        let tp = self.det_is_tp.iter().filter(|&&t| t).count() as u64;
        MatchCounts {
            tp,
            fp: self.det_is_tp.len() as u64 - tp,
            fn_: self.gt_matched.iter().filter(|&&m| !m).count() as u64,
            tn: 0,
        }
    }
}

/// Greedy matching in descending confidence order (ties keep input order):
/// each detection claims the still-unmatched ground truth of highest IoU,
/// provided that IoU reaches `iou_thresh`.
pub fn match_frame(
    dets: &[(BoundingBox, f64)],
    gts: &[BoundingBox],
    iou_thresh: f64,
) -> FrameMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).expect("finite confidence"));

    let mut det_is_tp = vec![false; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for di in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let overlap = iou(&dets[di].0, gt);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, overlap)) = best {
            if overlap >= iou_thresh {
                gt_matched[gi] = true;
                det_is_tp[di] = true;
            }
        }
    }
    FrameMatch {
        det_is_tp,
        gt_matched,
    }
}

/// `2PR / (P + R)`, defined as 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any of the three hit a 0/0 case and were reported as 0.
    pub degenerate: bool,
}

pub fn prf(counts: &MatchCounts) -> Prf {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    if precision + recall == 0.0 {
        degenerate = true;
    }
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
        degenerate,
    }
}

/// Which precision/recall interpolation the AP integral uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Interpolated precision is the maximum precision at any recall at or
    /// beyond the point (the PASCAL development-kit "all point" rule).
    AllPoint,
    /// Mean of interpolated precision over recalls 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

impl Interpolation {
    pub fn as_str(self) -> &'static str {
        match self {
            Interpolation::AllPoint => "all_point",
            Interpolation::ElevenPoint => "eleven_point",
        }
    }
}

/// Average precision over an image set at one IoU threshold. Detections are
/// swept globally in descending confidence (ties: image order, then input
/// order), matched per image, and the resulting precision/recall curve is
/// integrated under `interp`. Errors when the set has no ground truths.
pub fn ap_at_iou(images: &[EvalImage], iou_thresh: f64, interp: Interpolation) -> Result<f64> {
    let total_gts: usize = images.iter().map(|im| im.gts.len()).sum();
    if total_gts == 0 {
        return Err(PipelineError::validation(
            "average precision is undefined without ground truths",
        ));
    }

    let mut all: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(ii, im)| (0..im.dets.len()).map(move |di| (ii, di)))
        .collect();
    all.sort_by(|&(ia, da), &(ib, db)| {
        let ca = images[ia].dets[da].1;
        let cb = images[ib].dets[db].1;
        cb.partial_cmp(&ca)
            .expect("finite confidence")
            .then(ia.cmp(&ib))
            .then(da.cmp(&db))
    });

    let mut gt_matched: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let mut precisions = Vec::with_capacity(all.len());
    let mut recalls = Vec::with_capacity(all.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (ii, di) in all {
        let det = &images[ii].dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in images[ii].gts.iter().enumerate() {
            if gt_matched[ii][gi] {
                continue;
            }
            let overlap = iou(&det.0, gt);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, overlap)) if overlap >= iou_thresh => {
                gt_matched[ii][gi] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / total_gts as f64);
    }

    Ok(match interp {
        Interpolation::AllPoint => {
            // precision envelope from the right, then a step integral over
            // the recall increments
            let mut envelope = precisions.clone();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (i, &r) in recalls.iter().enumerate() {
                ap += (r - prev_recall) * envelope[i];
                prev_recall = r;
            }
            ap
        }
        Interpolation::ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10 {
                let r = f64::from(step) / 10.0;
                let p = precisions
                    .iter()
                    .zip(&recalls)
                    .filter(|&(_, &rec)| rec >= r)
                    .map(|(&p, _)| p)
                    .fold(0.0f64, f64::max);
                sum += p;
            }
            sum / 11.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaConfusion {
    pub kappa: f64,
    /// Rows: predicted fish / predicted no-fish. Columns: ground-truth fish /
    /// no-fish, each normalized to sum to 1 when it has support.
    pub confusion: [[f64; 2]; 2],
    /// Image-level agreement counts behind the matrix.
    pub counts: MatchCounts,
    pub degenerate: bool,
}

/// Cohen's kappa and the column-normalized confusion matrix for image-level
/// fish presence. `preds[i]` is true when the pipeline kept at least one
/// detection on image `i`; `gts[i]` is true when the image contains a fish.
pub fn kappa_confusion(preds: &[bool], gts: &[bool]) -> Result<KappaConfusion> {
    if preds.len() != gts.len() {
        return Err(PipelineError::validation(format!(
            "prediction and ground-truth vectors differ in length ({} vs {})",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(PipelineError::validation(
            "kappa is undefined on an empty image set",
        ));
    }

    let mut counts = MatchCounts::default();
    for (&p, &g) in preds.iter().zip(gts) {
        match (p, g) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    let n = preds.len() as f64;
    let p0 = (counts.tp + counts.tn) as f64 / n;
    let pred_fish = (counts.tp + counts.fp) as f64 / n;
    let gt_fish = (counts.tp + counts.fn_) as f64 / n;
    let pe = pred_fish * gt_fish + (1.0 - pred_fish) * (1.0 - gt_fish);

    let (kappa, degenerate) = if (1.0 - pe).abs() < 1e-12 {
        // both raters constant and equal: perfect but vacuous agreement
        (1.0, true)
    } else {
        ((p0 - pe) / (1.0 - pe), false)
    };

    let column = |hit: u64, miss: u64| -> [f64; 2] {
        let total = hit + miss;
        if total == 0 {
            [0.0, 0.0]
        } else {
            [hit as f64 / total as f64, miss as f64 / total as f64]
        }
    };
    let fish_col = column(counts.tp, counts.fn_);
    let nofish_col = column(counts.fp, counts.tn);
    Ok(KappaConfusion {
        kappa,
        confusion: [[fish_col[0], nofish_col[0]], [fish_col[1], nofish_col[1]]],
        counts,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvalConfig {
    pub iou_thresh: f64,
    /// Point metrics (P/R/F1, kappa, confusion) are computed at this
    /// confidence threshold; AP sweeps the full confidence range.
    pub confidence_tau: f64,
    pub interpolation: Interpolation,
}

impl Default for ModelEvalConfig {
    fn default() -> Self {
        ModelEvalConfig {
            iou_thresh: DEFAULT_IOU_THRESH,
            confidence_tau: 0.25,
            interpolation: Interpolation::AllPoint,
        }
    }
}

/// The frame-level validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvalReport {
    pub images: u64,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction in [0,1]; 0 with a "ap50" degeneracy entry when the image
    /// set has no ground truths.
    pub ap50: f64,
    /// The same value scaled by 100, the usual reporting convention.
    pub ap50_x100: f64,
    pub kappa: f64,
    pub confusion: [[f64; 2]; 2],
    pub image_counts: MatchCounts,
    /// Names of metrics that hit a 0/0 case and were reported as 0.
    pub degenerate: Vec<String>,
    pub config: ModelEvalConfig,
}

/// Run the whole frame-level protocol over an annotated image set.
pub fn evaluate_model(images: &[EvalImage], config: &ModelEvalConfig) -> Result<ModelEvalReport> {
    if images.is_empty() {
        return Err(PipelineError::validation("no images to evaluate"));
    }
    if !(0.0..=1.0).contains(&config.confidence_tau) {
        return Err(PipelineError::validation(format!(
            "confidence threshold must be in [0,1], got {}",
            config.confidence_tau
        )));
    }

    let mut degenerate = Vec::new();
    let mut counts = MatchCounts::default();
    let mut preds = Vec::with_capacity(images.len());
    let mut gts_present = Vec::with_capacity(images.len());
    for image in images {
        let kept: Vec<(BoundingBox, f64)> = image
            .dets
            .iter()
            .filter(|d| d.1 >= config.confidence_tau)
            .copied()
            .collect();
        let m = match_frame(&kept, &image.gts, config.iou_thresh).counts();
        counts.tp += m.tp;
        counts.fp += m.fp;
        counts.fn_ += m.fn_;
        if image.gts.is_empty() && kept.is_empty() {
            counts.tn += 1;
        }
        preds.push(!kept.is_empty());
        gts_present.push(!image.gts.is_empty());
    }

    let point = prf(&counts);
    if point.degenerate {
        degenerate.push("prf".to_string());
    }

    let ap50 = match ap_at_iou(images, config.iou_thresh, config.interpolation) {
        Ok(ap) => ap,
        Err(_) => {
            degenerate.push("ap50".to_string());
            0.0
        }
    };

    let kc = kappa_confusion(&preds, &gts_present)?;
    if kc.degenerate {
        degenerate.push("kappa".to_string());
    }

    Ok(ModelEvalReport {
        images: images.len() as u64,
        counts,
        precision: point.precision,
        recall: point.recall,
        f1: point.f1,
        ap50,
        ap50_x100: ap50 * 100.0,
        kappa: kc.kappa,
        confusion: kc.confusion,
        image_counts: kc.counts,
        degenerate,
        config: config.clone(),
    })
}
