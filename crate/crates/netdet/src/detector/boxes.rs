//! Boxes, IoU, SSD offset encoding, and greedy NMS. All coordinates are
//! normalized to [0,1] with the origin at the top-left corner.

use serde::{Deserialize, Serialize};

/// Axis-aligned box, xmin < xmax and ymin < ymax for valid boxes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            xmin: cx - w / 2.0,
            ymin: cy - h / 2.0,
            xmax: cx + w / 2.0,
            ymax: cy + h / 2.0,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        (self.width()).max(0.0) * (self.height()).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.xmin < self.xmax && self.ymin < self.ymax
    }

    /// Area of overlap with another box (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let ih = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        iw * ih
    }
}

/// Intersection over union, in [0,1], symmetric, iou(a,a) = 1.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Reference box at a pyramid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub level: usize,
}

impl Anchor {
    pub fn to_bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Center variance of the offset encoding (SSD convention).
pub const VARIANCE_CENTER: f64 = 0.1;
/// Size variance of the offset encoding (SSD convention).
pub const VARIANCE_SIZE: f64 = 0.2;

const SIZE_EPS: f64 = 1e-12;

/// Regression target of a ground-truth box relative to an anchor:
/// variance-scaled center offsets and log size ratios.
pub fn encode(gt: &BBox, anchor: &Anchor) -> [f64; 4] {
    let (gcx, gcy) = gt.center();
    [
        (gcx - anchor.cx) / (anchor.w * VARIANCE_CENTER),
        (gcy - anchor.cy) / (anchor.h * VARIANCE_CENTER),
        (gt.width() / anchor.w).ln() / VARIANCE_SIZE,
        (gt.height() / anchor.h).ln() / VARIANCE_SIZE,
    ]
}

/// Inverse of [`encode`]; sizes clamp to a tiny positive epsilon if the
/// exponent underflows to zero.
pub fn decode(pred: &[f64; 4], anchor: &Anchor) -> BBox {
    let cx = anchor.cx + pred[0] * VARIANCE_CENTER * anchor.w;
    let cy = anchor.cy + pred[1] * VARIANCE_CENTER * anchor.h;
    let w = (anchor.w * (pred[2] * VARIANCE_SIZE).exp()).max(SIZE_EPS);
    let h = (anchor.h * (pred[3] * VARIANCE_SIZE).exp()).max(SIZE_EPS);
    BBox::from_center(cx, cy, w, h)
}

/// Object scale buckets as fractions of the image side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleClass {
    Small,
    Medium,
    Large,
}

impl ScaleClass {
    pub const ALL: [ScaleClass; 3] = [ScaleClass::Small, ScaleClass::Medium, ScaleClass::Large];

    pub fn name(&self) -> &'static str {
        match self {
            ScaleClass::Small => "small",
            ScaleClass::Medium => "medium",
            ScaleClass::Large => "large",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    /// Object class, ≥ 1 (0 is background).
    pub class_id: usize,
    pub scale_class: ScaleClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Greedy NMS over same-class detections: keep by descending score
/// (ties broken by input order), suppress IoU ≥ thresh with any kept box.
pub fn nms(dets: &[Detection], thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        if kept.iter().all(|k| iou(&k.bbox, &dets[i].bbox) < thresh) {
            kept.push(dets[i]);
        }
    }
    kept
}
