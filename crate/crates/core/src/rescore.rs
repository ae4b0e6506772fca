//! Detection rescoring: augment detector scores with KDE location and
//! scale likelihoods derived from a retrieval set, fit the combination
//! weights on validation data, and run non-maxima suppression.

use core::borrow::Borrow;
use core::cmp::Ordering;

use alloc::vec::Vec;

use crate::dataset::{Dataset, ObjectBox};
use crate::error::{Error, Result};
use crate::metrics::{kde_window_score, PropertyKind, SigmaParams};
use crate::mockdet::evaluate_ap;

/// A scored window emitted by a detector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub image_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub component: Option<u32>,
}

impl Detection {
    pub fn geometry(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Geometry-only box for position/scale KDE scoring (the appearance
    /// vector is left empty and must not be used).
    pub fn probe_box(&self) -> ObjectBox {
        ObjectBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
            appearance: Vec::new(),
            component_id: self.component,
        }
    }

    /// Deterministic ordering: descending score, then ascending image id,
    /// geometry and component. Shared by NMS and AP evaluation so
    /// equal-score detections never depend on input order.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.image_id.cmp(&other.image_id))
            .then_with(|| self.cx.total_cmp(&other.cx))
            .then_with(|| self.cy.total_cmp(&other.cy))
            .then_with(|| self.w.total_cmp(&other.w))
            .then_with(|| self.h.total_cmp(&other.h))
            .then_with(|| self.component.cmp(&other.component))
    }
}

/// Linear combination weights for the two geometry scores.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CombineWeights {
    pub alpha_pos: f64,
    pub alpha_scale: f64,
}

/// KDE geometry scores of one detection against a retrieval set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeometryScores {
    pub position: f64,
    pub scale: f64,
}

/// Position and scale KDE scores for each detection against one shared set
/// of retrieved boxes.
pub fn location_scores<B: Borrow<ObjectBox>>(
    dets: &[Detection],
    retr_boxes: &[B],
    sigma_pos: &SigmaParams,
    sigma_scale: &SigmaParams,
) -> Result<Vec<GeometryScores>> {
    location_scores_split(dets, retr_boxes, sigma_pos, retr_boxes, sigma_scale)
}

/// As [`location_scores`], but with separate retrieval sets for the
/// position and scale models (the default pipeline trains one forest per
/// property).
pub fn location_scores_split<A: Borrow<ObjectBox>, B: Borrow<ObjectBox>>(
    dets: &[Detection],
    pos_boxes: &[A],
    sigma_pos: &SigmaParams,
    scale_boxes: &[B],
    sigma_scale: &SigmaParams,
) -> Result<Vec<GeometryScores>> {
    if pos_boxes.is_empty() || scale_boxes.is_empty() {
        return Err(Error::EmptyBoxes);
    }
    dets.iter()
        .map(|det| {
            let probe = det.probe_box();
            Ok(GeometryScores {
                position: kde_window_score(&probe, pos_boxes, PropertyKind::Position, sigma_pos)?,
                scale: kde_window_score(&probe, scale_boxes, PropertyKind::Scale, sigma_scale)?,
            })
        })
        .collect()
}

/// `detector_score + alpha_pos * position + alpha_scale * scale`.
pub fn combine(det: &Detection, geo: &GeometryScores, weights: &CombineWeights) -> f64 {
    det.score + weights.alpha_pos * geo.position + weights.alpha_scale * geo.scale
}

/// Intersection over union of two center-size boxes.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let [acx, acy, aw, ah] = a;
    let [bcx, bcy, bw, bh] = b;
    let overlap = |ac: f64, al: f64, bc: f64, bl: f64| -> f64 {
        let lo = (ac - al / 2.0).max(bc - bl / 2.0);
        let hi = (ac + al / 2.0).min(bc + bl / 2.0);
        (hi - lo).max(0.0)
    };
    let inter = overlap(acx, aw, bcx, bw) * overlap(acy, ah, bcy, bh);
    let union = aw * ah + bw * bh - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Greedy non-maxima suppression: walk detections in canonical order and
/// keep one iff its IoU with every kept detection *of the same image* is at
/// or below the threshold. The output keeps the canonical (score
/// descending) order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted: Vec<Detection> = dets.to_vec();
    sorted.sort_by(Detection::canonical_cmp);
    let mut kept: Vec<Detection> = Vec::new();
    for det in sorted {
        let suppressed = kept.iter().any(|k| {
            k.image_id == det.image_id && iou(k.geometry(), det.geometry()) > iou_threshold
        });
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

/// Exhaustive grid search for combination weights, maximizing AP of the
/// rescored-then-suppressed detections on validation ground truth. Ties
/// break toward the smaller weights (lexicographically by alpha_pos then
/// alpha_scale).
pub fn fit_weights(
    val: &Dataset,
    dets: &[(Detection, GeometryScores)],
    grid: &[CombineWeights],
    iou_threshold: f64,
) -> Result<CombineWeights> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut ordered: Vec<CombineWeights> = grid.to_vec();
    ordered.sort_by(|a, b| {
        a.alpha_pos
            .total_cmp(&b.alpha_pos)
            .then(a.alpha_scale.total_cmp(&b.alpha_scale))
    });
    let mut best: Option<(f64, CombineWeights)> = None;
    for weights in ordered {
        let rescored: Vec<Detection> = dets
            .iter()
            .map(|(det, geo)| Detection {
                score: combine(det, geo, &weights),
                ..det.clone()
            })
            .collect();
        let survivors = nms(&rescored, iou_threshold);
        let ap = evaluate_ap(&survivors, val, iou_threshold)?.ap;
        if best.map_or(true, |(b, _)| ap > b) {
            best = Some((ap, weights));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}
