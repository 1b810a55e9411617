//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here is deliberately written the "dumb" way — quadruple
//! nested loops, exhaustive enumeration — and shares no code with the
//! library kernels it checks.

use netdet::detector::{iou, Detection, GroundTruthBox};
use netdet::tensor::Tensor;

// ------------------------------------------------------------ kernels

/// Cross-correlation by direct summation with explicit bounds checks.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci, h, wd) = x.chw();
    let (co, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for oc in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data()[oc];
                for ic in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            if iy < pad || ix < pad {
                                continue;
                            }
                            let (iy, ix) = (iy - pad, ix - pad);
                            if iy >= h || ix >= wd {
                                continue;
                            }
                            acc += x.at3(ic, iy, ix) * w.data()[((oc * ci + ic) * k + ky) * k + kx];
                        }
                    }
                }
                out.set3(oc, oy, ox, acc);
            }
        }
    }
    out
}

pub fn naive_max_pool(x: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        best = best.max(x.at3(ic, oy * stride + ky, ox * stride + kx));
                    }
                }
                out.set3(ic, oy, ox, best);
            }
        }
    }
    out
}

pub fn naive_avg_pool(x: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        acc += x.at3(ic, oy * stride + ky, ox * stride + kx);
                    }
                }
                out.set3(ic, oy, ox, acc / (window * window) as f64);
            }
        }
    }
    out
}

/// Adaptive max pool: output cell `o` of `out` cells over `n` inputs
/// covers input positions [floor(o*n/out), ceil((o+1)*n/out)).
pub fn naive_adaptive_max_pool(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let span = |o: usize, n: usize, out: usize| {
        let lo = o * n / out;
        let hi = ((o + 1) * n + out - 1) / out;
        (lo, hi)
    };
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ic in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let (y0, y1) = span(oy, h, out_h);
                let (x0, x1) = span(ox, w, out_w);
                let mut best = f64::NEG_INFINITY;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        best = best.max(x.at3(ic, iy, ix));
                    }
                }
                out.set3(ic, oy, ox, best);
            }
        }
    }
    out
}

/// Align-corners bilinear interpolation evaluated pointwise from the
/// interpolation formula.
pub fn naive_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ic in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let fy = if out_h > 1 { oy as f64 * (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
                let fx = if out_w > 1 { ox as f64 * (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
                let v = x.at3(ic, y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + x.at3(ic, y0, x1) * (1.0 - dy) * dx
                    + x.at3(ic, y1, x0) * dy * (1.0 - dx)
                    + x.at3(ic, y1, x1) * dy * dx;
                out.set3(ic, oy, ox, v);
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------ AP oracle

/// Exhaustive-matching AP oracle for one class over a small multi-image
/// fixture (≤ 6 detections, ≤ 4 GTs per fixture).
///
/// Detections are ordered by descending score with ties broken by
/// (image, input order). Instead of claiming GTs greedily, the oracle
/// enumerates every injective assignment of detections to same-image,
/// same-class GTs with IoU ≥ the threshold, and keeps the assignment
/// whose per-detection IoU vector is lexicographically largest in that
/// detection order (unmatched = −1). That is the matching an
/// earlier-detection-first, best-IoU-first matcher must produce, computed
/// without any incremental state. AP is then the 101-point interpolation
/// evaluated directly from the definition.
pub fn oracle_ap(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthBox>],
    class_id: usize,
    iou_thresh: f64,
) -> f64 {
    // flatten and order
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (img, d) in dets.iter().enumerate() {
        for (i, det) in d.iter().enumerate() {
            if det.class_id == class_id {
                order.push((img, i));
            }
        }
    }
    order.sort_by(|a, b| {
        dets[b.0][b.1]
            .score
            .partial_cmp(&dets[a.0][a.1].score)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let nd = order.len();
    assert!(nd <= 6, "oracle limited to 6 detections");

    // candidate GTs per detection: (image-local GT index kept globally)
    let mut gt_index: Vec<(usize, usize)> = Vec::new();
    for (img, g) in gts.iter().enumerate() {
        for (i, gt) in g.iter().enumerate() {
            if gt.class_id == class_id {
                gt_index.push((img, i));
            }
        }
    }
    let npos = gt_index.len();
    assert!(npos <= 4, "oracle limited to 4 ground truths");
    if npos == 0 {
        return f64::NAN;
    }

    // enumerate assignments: per detection, either unmatched (usize::MAX)
    // or an eligible global GT slot, injectively
    let eligible: Vec<Vec<(usize, f64)>> = order
        .iter()
        .map(|&(img, di)| {
            gt_index
                .iter()
                .enumerate()
                .filter(|(_, &(gimg, _))| gimg == img)
                .map(|(slot, &(gimg, gi))| (slot, iou(&dets[img][di].bbox, &gts[gimg][gi].bbox)))
                .filter(|&(_, v)| v >= iou_thresh)
                .collect()
        })
        .collect();

    let mut best_vec: Option<Vec<f64>> = None;
    let mut assignment = vec![usize::MAX; nd];
    let mut used = vec![false; npos];
    fn recurse(
        d: usize,
        nd: usize,
        eligible: &[Vec<(usize, f64)>],
        assignment: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best_vec: &mut Option<Vec<f64>>,
    ) {
        if d == nd {
            let vec: Vec<f64> = (0..nd)
                .map(|i| {
                    if assignment[i] == usize::MAX {
                        -1.0
                    } else {
                        eligible[i].iter().find(|&&(s, _)| s == assignment[i]).unwrap().1
                    }
                })
                .collect();
            let better = match best_vec {
                None => true,
                Some(b) => vec
                    .iter()
                    .zip(b.iter())
                    .find(|(n, o)| n != o)
                    .is_some_and(|(n, o)| n > o),
            };
            if better {
                *best_vec = Some(vec);
            }
            return;
        }
        // unmatched option
        assignment[d] = usize::MAX;
        recurse(d + 1, nd, eligible, assignment, used, best_vec);
        for &(slot, _) in &eligible[d] {
            if !used[slot] {
                used[slot] = true;
                assignment[d] = slot;
                recurse(d + 1, nd, eligible, assignment, used, best_vec);
                used[slot] = false;
                assignment[d] = usize::MAX;
            }
        }
    }
    recurse(0, nd, &eligible, &mut assignment, &mut used, &mut best_vec);

    // outcomes in detection order from the winning IoU vector
    let outcome: Vec<bool> = best_vec
        .map(|v| v.into_iter().map(|x| x >= 0.0).collect())
        .unwrap_or_default();

    // precision at every prefix, then direct 101-point interpolation
    let mut tp = 0usize;
    let mut prefix: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for (i, &hit) in outcome.iter().enumerate() {
        if hit {
            tp += 1;
        }
        prefix.push((tp as f64 / npos as f64, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let p = prefix
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0f64, f64::max);
        total += p;
    }
    total / 101.0
}
