//! Detection metrics: COCO-style 101-point AP (overall and per scale),
//! raw PR curves, and the error decomposition into false positives,
//! part false positives, and false negatives.
//!
//! Inputs are parallel per-image lists: `dets[i]` and `gts[i]` describe
//! image `i`. All matching is class-aware. An AP over zero ground truths
//! is undefined and returned as NaN ("absent" in reports).

use crate::detector::{iou, Detection, GroundTruthBox, ScaleClass};

/// One detection tagged with its image, flattened and sorted by score.
#[derive(Clone, Copy, Debug)]
struct FlatDet {
    image: usize,
    index: usize,
    score: f64,
}

/// Flatten detections of one class across images, descending score,
/// ties by (image, input order).
fn flatten_sorted(dets: &[Vec<Detection>], class_id: usize) -> Vec<FlatDet> {
    let mut flat: Vec<FlatDet> = Vec::new();
    for (image, d) in dets.iter().enumerate() {
        for (index, det) in d.iter().enumerate() {
            if det.class_id == class_id {
                flat.push(FlatDet {
                    image,
                    index,
                    score: det.score,
                });
            }
        }
    }
    flat.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.image.cmp(&b.image))
            .then(a.index.cmp(&b.index))
    });
    flat
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DetOutcome {
    TruePositive,
    FalsePositive,
    /// Matched only a scale-filtered-out GT; excluded from the curve.
    Ignored,
}

/// Greedy matching of one class at one IoU threshold. Returns per-detection
/// outcomes in score order plus the number of countable (non-ignored) GTs.
fn greedy_match(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
    scale_filter: Option<ScaleClass>,
) -> (Vec<DetOutcome>, usize) {
    let counted = |g: &GroundTruthBox| scale_filter.is_none_or(|s| g.scale_class == s);
    let npos = gts
        .iter()
        .flatten()
        .filter(|g| g.class_id == class_id && counted(g))
        .count();

    let flat = flatten_sorted(dets, class_id);
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut outcomes = Vec::with_capacity(flat.len());
    for fd in &flat {
        let dbox = dets[fd.image][fd.index].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts[fd.image].iter().enumerate() {
            if g.class_id != class_id || taken[fd.image][gi] {
                continue;
            }
            let v = iou(&dbox, &g.bbox);
            if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let outcome = match best {
            Some((gi, _)) => {
                taken[fd.image][gi] = true;
                if counted(&gts[fd.image][gi]) {
                    DetOutcome::TruePositive
                } else {
                    DetOutcome::Ignored
                }
            }
            None => DetOutcome::FalsePositive,
        };
        outcomes.push(outcome);
    }
    (outcomes, npos)
}

/// Raw (recall, precision) points at every score cut for one class.
#[derive(Clone, Debug)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
    pub iou_thresh: f64,
    pub class_id: usize,
    pub scale_filter: Option<ScaleClass>,
}

pub fn pr_curve(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
    scale_filter: Option<ScaleClass>,
) -> PrCurve {
    let (outcomes, npos) = greedy_match(dets, gts, class_id, iou_thresh, scale_filter);
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for o in outcomes {
        match o {
            DetOutcome::TruePositive => tp += 1,
            DetOutcome::FalsePositive => fp += 1,
            DetOutcome::Ignored => continue,
        }
        if npos > 0 {
            points.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    PrCurve {
        points,
        iou_thresh,
        class_id,
        scale_filter,
    }
}

/// 101-point interpolated AP of a raw curve; NaN when undefined.
pub fn interpolate_ap(curve: &PrCurve, npos_known_zero: bool) -> f64 {
    if npos_known_zero {
        return f64::NAN;
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let p = curve
            .points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|&(_, prec)| prec)
            .fold(0.0f64, f64::max);
        total += p;
    }
    total / 101.0
}

/// AP of one class: greedy match by descending score, 101-point recall
/// interpolation. Detections matching only scale-filtered-out GTs are
/// ignored rather than penalized. Returns NaN if the class has no
/// (countable) ground truth.
pub fn compute_ap(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
    scale_filter: Option<ScaleClass>,
) -> f64 {
    let (_, npos) = greedy_match(dets, gts, class_id, iou_thresh, scale_filter);
    if npos == 0 {
        return f64::NAN;
    }
    let curve = pr_curve(dets, gts, class_id, iou_thresh, scale_filter);
    interpolate_ap(&curve, false)
}

/// Macro AP over classes 1..num_classes; classes without ground truth are
/// skipped. NaN if every class is absent.
pub fn mean_ap(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    num_classes: usize,
    iou_thresh: f64,
    scale_filter: Option<ScaleClass>,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 1..num_classes {
        let ap = compute_ap(dets, gts, c, iou_thresh, scale_filter);
        if !ap.is_nan() {
            sum += ap;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// A detection flagged as a false positive: best same-class IoU < thresh.
#[derive(Clone, Copy, Debug)]
pub struct FpRecord {
    pub image: usize,
    pub detection: Detection,
    /// Best IoU against any same-class GT in the image (0 when none exist).
    pub max_iou: f64,
    pub best_gt: Option<usize>,
}

/// False positives across a dataset: any detection whose maximum IoU with a
/// same-class ground truth falls below `iou_thresh`.
pub fn fp_analysis(dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], iou_thresh: f64) -> Vec<FpRecord> {
    let mut out = Vec::new();
    for (image, d) in dets.iter().enumerate() {
        for det in d {
            let mut max_iou = 0.0;
            let mut best_gt = None;
            for (gi, g) in gts[image].iter().enumerate() {
                if g.class_id != det.class_id {
                    continue;
                }
                let v = iou(&det.bbox, &g.bbox);
                if v > max_iou {
                    max_iou = v;
                    best_gt = Some(gi);
                }
            }
            if max_iou < iou_thresh {
                out.push(FpRecord {
                    image,
                    detection: *det,
                    max_iou,
                    best_gt,
                });
            }
        }
    }
    out
}

/// Part rate of one detection: largest same-class GT overlap over the
/// predicted box's own area.
pub fn part_rate(det: &Detection, gts: &[GroundTruthBox]) -> f64 {
    let area = det.bbox.area();
    if area <= 0.0 {
        return 0.0;
    }
    gts.iter()
        .filter(|g| g.class_id == det.class_id)
        .map(|g| det.bbox.intersection_area(&g.bbox) / area)
        .fold(0.0, f64::max)
}

/// Fraction of all detections that are part false positives (FPs mostly
/// inside a GT, p ≥ threshold), per threshold. Denominator is the total
/// post-NMS, post-score-threshold detection count.
pub fn pfp_rate(dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], iou_thresh: f64, thresholds: &[f64]) -> Vec<f64> {
    let total: usize = dets.iter().map(|d| d.len()).sum();
    if total == 0 {
        return vec![0.0; thresholds.len()];
    }
    let fps = fp_analysis(dets, gts, iou_thresh);
    let rates: Vec<f64> = fps.iter().map(|fp| part_rate(&fp.detection, &gts[fp.image])).collect();
    thresholds
        .iter()
        .map(|&t| rates.iter().filter(|&&p| p >= t).count() as f64 / total as f64)
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct FnReport {
    pub fn_count: usize,
    pub total_gts: usize,
    /// (missed, total) per scale class, indexed small/medium/large.
    pub per_scale: [(usize, usize); 3],
}

impl FnReport {
    pub fn rate(&self) -> f64 {
        if self.total_gts == 0 {
            0.0
        } else {
            self.fn_count as f64 / self.total_gts as f64
        }
    }

    pub fn scale_rate(&self, s: ScaleClass) -> f64 {
        let (missed, total) = self.per_scale[s as usize];
        if total == 0 {
            0.0
        } else {
            missed as f64 / total as f64
        }
    }
}

/// Ground truths left unmatched after AP-style greedy matching.
pub fn fn_analysis(dets: &[Vec<Detection>], gts: &[Vec<GroundTruthBox>], num_classes: usize, iou_thresh: f64) -> FnReport {
    // re-run the greedy matcher per class and mark claimed GTs
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    for class_id in 1..num_classes {
        let flat = flatten_sorted(dets, class_id);
        for fd in &flat {
            let dbox = dets[fd.image][fd.index].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts[fd.image].iter().enumerate() {
                if g.class_id != class_id || matched[fd.image][gi] {
                    continue;
                }
                let v = iou(&dbox, &g.bbox);
                if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                matched[fd.image][gi] = true;
            }
        }
    }
    let mut report = FnReport::default();
    for (image, g) in gts.iter().enumerate() {
        for (gi, gt) in g.iter().enumerate() {
            report.total_gts += 1;
            report.per_scale[gt.scale_class as usize].1 += 1;
            if !matched[image][gi] {
                report.fn_count += 1;
                report.per_scale[gt.scale_class as usize].0 += 1;
            }
        }
    }
    report
}
