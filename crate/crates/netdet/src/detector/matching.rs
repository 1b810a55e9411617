//! Anchor to ground-truth assignment and multibox target construction.

use super::boxes::{encode, iou, Anchor, GroundTruthBox};
use crate::tape::MultiboxTargets;

/// Per-anchor assignment: `Some(gt index)` for positives, `None` for
/// background.
pub fn match_anchors(anchors: &[Anchor], gts: &[GroundTruthBox], pos_thresh: f64) -> Vec<Option<usize>> {
    let mut assignment = vec![None; anchors.len()];
    if gts.is_empty() {
        return assignment;
    }
    // threshold pass: each anchor takes its best GT if overlap is enough
    for (ai, anchor) in anchors.iter().enumerate() {
        let ab = anchor.to_bbox();
        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(&ab, &gt.bbox);
            if v > best_iou {
                best_iou = v;
                best = gi;
            }
        }
        if best_iou >= pos_thresh {
            assignment[ai] = Some(best);
        }
    }
    // each GT force-claims its single best anchor so no GT goes unmatched
    for (gi, gt) in gts.iter().enumerate() {
        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for (ai, anchor) in anchors.iter().enumerate() {
            let v = iou(&anchor.to_bbox(), &gt.bbox);
            if v > best_iou {
                best_iou = v;
                best = ai;
            }
        }
        assignment[best] = Some(gi);
    }
    assignment
}

/// Labels and encoded offsets for the multibox loss, from an assignment.
pub fn build_targets(
    anchors: &[Anchor],
    gts: &[GroundTruthBox],
    assignment: &[Option<usize>],
    num_classes: usize,
    neg_ratio: usize,
) -> MultiboxTargets {
    let mut labels = vec![0usize; anchors.len()];
    let mut loc_targets = Vec::new();
    for (ai, assigned) in assignment.iter().enumerate() {
        if let Some(gi) = assigned {
            labels[ai] = gts[*gi].class_id;
            loc_targets.push((ai, encode(&gts[*gi].bbox, &anchors[ai])));
        }
    }
    MultiboxTargets {
        labels,
        loc_targets,
        num_classes,
        neg_ratio,
    }
}
