//! Inference: decode every anchor, per-class score filter and NMS, then a
//! global top-k cut by score.

use super::boxes::{decode, nms, BBox, Detection};
use super::model::Model;
use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct PredictConfig {
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub top_k: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        // the score floor is chosen for few-object desk scenes: low enough
        // for full PR curves, high enough that the per-image top-k cap is
        // not what decides the detection set
        PredictConfig {
            score_thresh: 0.1,
            nms_thresh: 0.45,
            top_k: 100,
        }
    }
}

fn clamp_unit(b: BBox) -> BBox {
    BBox {
        xmin: b.xmin.clamp(0.0, 1.0),
        ymin: b.ymin.clamp(0.0, 1.0),
        xmax: b.xmax.clamp(0.0, 1.0),
        ymax: b.ymax.clamp(0.0, 1.0),
    }
}

pub fn predict(model: &Model, store: &ParamStore, image: &Tensor, cfg: &PredictConfig) -> Result<Vec<Detection>> {
    let mut tape = Tape::new();
    let (cls, loc) = model.forward(&mut tape, store, image)?;
    let cls_d = tape.value(cls).data();
    let loc_d = tape.value(loc).data();
    let nc = model.config.num_classes;
    let n = model.num_anchors();

    let mut per_class: Vec<Vec<Detection>> = vec![Vec::new(); nc];
    let mut probs = vec![0.0f64; nc];
    for i in 0..n {
        let logits = &cls_d[i * nc..(i + 1) * nc];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &l) in probs.iter_mut().zip(logits) {
            *p = (l - mx).exp();
            z += *p;
        }
        let mut decoded: Option<BBox> = None;
        for c in 1..nc {
            let score = probs[c] / z;
            if score >= cfg.score_thresh {
                let b = *decoded.get_or_insert_with(|| {
                    let p = [loc_d[i * 4], loc_d[i * 4 + 1], loc_d[i * 4 + 2], loc_d[i * 4 + 3]];
                    clamp_unit(decode(&p, &model.anchors[i]))
                });
                if b.is_valid() {
                    per_class[c].push(Detection {
                        bbox: b,
                        class_id: c,
                        score,
                    });
                }
            }
        }
    }

    let mut out = Vec::new();
    for dets in &per_class[1..] {
        out.extend(nms(dets, cfg.nms_thresh));
    }
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    out.truncate(cfg.top_k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::boxes::iou;
    use crate::detector::model::{ModelConfig, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build() -> (Model, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = Model::new(ModelConfig::desk(Variant::Baseline), &mut store, &mut rng).unwrap();
        (model, store)
    }

    #[test]
    fn uniform_logits_below_high_threshold_give_empty_output() {
        let (model, mut store) = build();
        // zero all weights: logits uniform, every class scores 1/num_classes
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let img = Tensor::zeros(&[1, 48, 48]);
        let cfg = PredictConfig {
            score_thresh: 0.3, // above 1/4
            ..PredictConfig::default()
        };
        let dets = predict(&model, &store, &img, &cfg).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn output_sorted_and_bounded_by_top_k() {
        let (model, store) = build();
        let img = Tensor::random_uniform(&[1, 48, 48], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let cfg = PredictConfig {
            top_k: 10,
            ..PredictConfig::default()
        };
        let dets = predict(&model, &store, &img, &cfg).unwrap();
        assert!(dets.len() <= 10);
        assert!(dets.windows(2).all(|w| w[0].score >= w[1].score));
        for d in &dets {
            assert!(d.score >= cfg.score_thresh && d.score <= 1.0);
            assert!(d.bbox.is_valid());
            assert!(d.bbox.xmin >= 0.0 && d.bbox.xmax <= 1.0);
        }
    }

    #[test]
    fn same_class_survivors_below_nms_threshold() {
        let (model, store) = build();
        let img = Tensor::random_uniform(&[1, 48, 48], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let cfg = PredictConfig::default();
        let dets = predict(&model, &store, &img, &cfg).unwrap();
        for i in 0..dets.len() {
            for j in i + 1..dets.len() {
                if dets[i].class_id == dets[j].class_id {
                    assert!(iou(&dets[i].bbox, &dets[j].bbox) < cfg.nms_thresh);
                }
            }
        }
    }
}
